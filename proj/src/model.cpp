#include "sfpnet/model.hpp"

#include "sfpnet/data.hpp"

#include <algorithm>
#include <type_traits>

namespace sfpnet {

Index ModelConfig::block_dim(int l) const
{
    if (block_dims.empty())
        return d;
    return block_dims.at(static_cast<std::size_t>(l));
}

namespace {

const char* kind_name(ModelKind k)
{
    return k == ModelKind::sfpnet ? "sfpnet" : "basednn";
}

std::vector<Index> to_index(const std::vector<std::int64_t>& v)
{
    return {v.begin(), v.end()};
}

std::vector<std::int64_t> to_i64(const std::vector<Index>& v)
{
    return {v.begin(), v.end()};
}

} // namespace

ModelConfig ModelConfig::from_config(const KeyValueConfig& cfg)
{
    cfg.require_known({"kind", "L", "d", "block_dims", "gate_hidden", "agg_hidden",
                       "sdnn_hidden", "att_hidden", "att_softmax", "no_dap", "no_sam", "no_rtm",
                       "no_sdnn", "no_stb"});
    ModelConfig c;
    const std::string kind = cfg.get_string("kind", "sfpnet");
    if (kind == "sfpnet")
        c.kind = ModelKind::sfpnet;
    else if (kind == "basednn")
        c.kind = ModelKind::basednn;
    else
        cfg.fail("kind", "expected sfpnet or basednn, got '" + kind + "'");
    c.L = static_cast<int>(cfg.get_int("L", c.L));
    if (c.L < 0)
        cfg.fail("L", "must be >= 0");
    c.d = cfg.get_int("d", c.d);
    if (c.d < 1)
        cfg.fail("d", "must be >= 1");
    c.block_dims = to_index(cfg.get_int_list("block_dims", {}));
    c.gate_hidden = cfg.get_int("gate_hidden", c.gate_hidden);
    c.agg_hidden = cfg.get_int("agg_hidden", c.agg_hidden);
    c.sdnn_hidden = to_index(cfg.get_int_list("sdnn_hidden", to_i64(c.sdnn_hidden)));
    c.att_hidden = cfg.get_int("att_hidden", c.att_hidden);
    c.att_softmax = cfg.get_bool("att_softmax", c.att_softmax);
    c.flags.no_dap = cfg.get_bool("no_dap", false);
    c.flags.no_sam = cfg.get_bool("no_sam", false);
    c.flags.no_rtm = cfg.get_bool("no_rtm", false);
    c.flags.no_sdnn = cfg.get_bool("no_sdnn", false);
    c.flags.no_stb = cfg.get_bool("no_stb", false);
    if (!c.block_dims.empty() && static_cast<int>(c.block_dims.size()) != c.L)
        cfg.fail("block_dims", "needs exactly L entries");
    return c;
}

std::vector<std::pair<std::string, std::string>> ModelConfig::to_pairs() const
{
    auto b = [](bool v) { return std::string(v ? "1" : "0"); };
    return {
        {"kind", kind_name(kind)},
        {"L", std::to_string(L)},
        {"d", std::to_string(d)},
        {"block_dims", join_ints(to_i64(block_dims))},
        {"gate_hidden", std::to_string(gate_hidden)},
        {"agg_hidden", std::to_string(agg_hidden)},
        {"sdnn_hidden", join_ints(to_i64(sdnn_hidden))},
        {"att_hidden", std::to_string(att_hidden)},
        {"att_softmax", b(att_softmax)},
        {"no_dap", b(flags.no_dap)},
        {"no_sam", b(flags.no_sam)},
        {"no_rtm", b(flags.no_rtm)},
        {"no_sdnn", b(flags.no_sdnn)},
        {"no_stb", b(flags.no_stb)},
    };
}

const std::vector<std::string>& ablation_variants()
{
    static const std::vector<std::string> names{"full",   "no_dap",  "no_sam",
                                                "no_rtm", "no_sdnn", "no_stb"};
    return names;
}

ModelConfig apply_variant(ModelConfig base, const std::string& variant)
{
    base.kind = ModelKind::sfpnet;
    base.flags = {};
    if (variant == "full")
        return base;
    if (variant == "no_dap")
        base.flags.no_dap = true;
    else if (variant == "no_sam")
        base.flags.no_sam = true;
    else if (variant == "no_rtm")
        base.flags.no_rtm = true;
    else if (variant == "no_sdnn")
        base.flags.no_sdnn = true;
    else if (variant == "no_stb")
        base.flags.no_stb = true;
    else
        throw std::invalid_argument("unknown model variant '" + variant + "'");
    return base;
}

// ---------------------------------------------------------------------------

template <typename T>
Model<T> Model<T>::build(const ModelConfig& cfg, const FeatureSchema& schema, std::uint64_t seed)
{
    if (cfg.d < 1)
        throw ConfigError("embedding dimension d must be >= 1");
    if (!cfg.block_dims.empty() && static_cast<int>(cfg.block_dims.size()) != cfg.L)
        throw ConfigError("block_dims has " + std::to_string(cfg.block_dims.size()) +
                          " entries for L = " + std::to_string(cfg.L));
    Model m;
    m.cfg_ = cfg;
    m.tables_ = EmbeddingTables<T>::register_tables(m.params_, schema, cfg.d, seed);
    const Index n = schema.feature_rows();

    if (cfg.kind == ModelKind::basednn) {
        TowerShape ts;
        ts.input_width = (n + 2) * cfg.d;
        ts.scenario_dim = cfg.d;
        ts.hidden = cfg.sdnn_hidden;
        ts.no_sdnn = true;
        m.mlp_ = register_tower(m.params_, "mlp", ts, seed);
        return m;
    }

    Index in = cfg.d;
    const BlockFlags bf{cfg.flags.no_dap, cfg.flags.no_sam, cfg.flags.no_rtm};
    for (int l = 0; l < cfg.effective_blocks(); ++l) {
        BlockShape s;
        s.n_fields = n;
        s.in_dim = in;
        s.out_dim = cfg.block_dim(l);
        s.scenario_dim = cfg.d;
        s.gate_hidden = cfg.gate_hidden;
        s.agg_hidden = cfg.agg_hidden;
        m.blocks_.push_back(register_block(m.params_, "stb" + std::to_string(l), s, bf, seed));
        in = s.out_dim;
    }
    validate_stack(m.blocks_, n, cfg.d, cfg.d);

    HeadShape hs;
    hs.n_fields = n;
    hs.dim = in;
    hs.embed_dim = cfg.d;
    hs.att_hidden = cfg.att_hidden;
    hs.att_softmax = cfg.att_softmax;
    hs.sdnn_hidden = cfg.sdnn_hidden;
    hs.no_sdnn = cfg.flags.no_sdnn;
    m.head_ = register_head(m.params_, hs, seed);
    return m;
}

std::map<std::string, std::string> schema_meta(const FeatureSchema& schema)
{
    std::map<std::string, std::string> meta;
    const auto text = schema_to_text(schema);
    const auto cfg = KeyValueConfig::parse(text);
    for (const auto& [k, v] : cfg.values())
        meta["schema." + k] = v;
    return meta;
}

FeatureSchema schema_from_meta(const std::map<std::string, std::string>& meta)
{
    std::string text;
    for (const auto& [k, v] : meta)
        if (k.rfind("schema.", 0) == 0)
            text += k.substr(7) + "=" + v + "\n";
    return schema_from_config(KeyValueConfig::parse(text, "checkpoint schema"));
}

template <typename T>
Model<T> Model<T>::from_checkpoint(const CheckpointData& ckpt)
{
    std::string text;
    for (const auto& [k, v] : ckpt.meta)
        if (k.rfind("model.", 0) == 0)
            text += k.substr(6) + "=" + v + "\n";
    const ModelConfig cfg = ModelConfig::from_config(KeyValueConfig::parse(text, "checkpoint model"));
    Model m = build(cfg, schema_from_meta(ckpt.meta), 0);
    if (m.params_.size() != ckpt.params.size())
        throw std::runtime_error("checkpoint parameter count does not match its model config");
    for (std::size_t i = 0; i < m.params_.size(); ++i) {
        const ParamId id{i};
        const auto& name = m.params_.name(id);
        if (!ckpt.params.contains(name))
            throw std::runtime_error("checkpoint lacks parameter " + name);
        const auto& src = ckpt.params[name];
        auto& dst = m.params_.value(id);
        if (src.rows() != dst.rows() || src.cols() != dst.cols())
            throw std::runtime_error("checkpoint parameter " + name + " has shape " +
                                     shape_string(src) + ", expected " + shape_string(dst));
        dst = src.template cast<T>();
    }
    m.params_.set_step(ckpt.params.step());
    return m;
}

template <typename T>
void Model<T>::save(const std::string& path, const std::map<std::string, std::string>& extra) const
{
    auto meta = schema_meta(schema());
    for (const auto& [k, v] : cfg_.to_pairs())
        meta["model." + k] = v;
    for (const auto& [k, v] : extra)
        meta[k] = v;
    save_checkpoint(path, params_, meta);
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
Matrix<T> mean_behaviors(const EncodedBatch<T>& b)
{
    Matrix<T> out = Matrix<T>::Zero(b.size, b.dim);
    for (Index k = 0; k < b.size; ++k) {
        const Index len = b.seq_len[static_cast<std::size_t>(k)];
        if (len > 0)
            out.row(k) = b.behaviors.middleRows(k * b.max_seq, len).colwise().sum() /
                         static_cast<T>(len);
    }
    return out;
}

std::vector<int> labels_of(std::span<const Instance* const> batch)
{
    std::vector<int> y;
    y.reserve(batch.size());
    for (const auto* inst : batch)
        y.push_back(inst->label);
    return y;
}

} // namespace

template <typename T>
Matrix<T> Model<T>::logits(const ParamStore<T>& params, std::span<const Instance* const> batch) const
{
    const EncodedBatch<T> enc = tables_.encode_batch(params, batch);
    if (cfg_.kind == ModelKind::basednn) {
        Matrix<T> x(enc.size, enc.features.cols() + 2 * enc.dim);
        x << enc.features, mean_behaviors(enc), enc.scenario;
        return tower_forward<T>(params, mlp_, x, enc.scenario).logits;
    }
    const StackState<T> st = stack_forward<T>(params, blocks_, enc);
    return head_forward<T>(params, head_, st.features, st.behaviors, enc.seq_len, enc.max_seq,
                           enc.target, enc.scenario)
        .tower.logits;
}

template <typename T>
LossScalar<T> Model<T>::evaluate(const ParamStore<T>& params, std::span<const Instance* const> batch,
                                 Grads<T>* grads) const
{
    if (batch.empty())
        throw std::invalid_argument("loss: empty batch");
    const EncodedBatch<T> enc = tables_.encode_batch(params, batch);
    const std::vector<int> y = labels_of(batch);

    if (cfg_.kind == ModelKind::basednn) {
        const Matrix<T> pooled = mean_behaviors(enc);
        Matrix<T> x(enc.size, enc.features.cols() + 2 * enc.dim);
        x << enc.features, pooled, enc.scenario;
        const TowerState<T> ts = tower_forward<T>(params, mlp_, x, enc.scenario);
        const Matrix<T> probs = sigmoid(ts.logits);
        const LossScalar<T> l = bce_loss(probs, y);
        if (grads) {
            const TowerInputGrad<T> g =
                tower_backward<T>(params, mlp_, ts, bce_logit_grad(probs, y), *grads);
            EncodedBatchGrad<T> eg;
            const Index fw = enc.features.cols();
            eg.features = g.input.leftCols(fw);
            eg.scenario = g.input.rightCols(enc.dim);
            eg.behaviors = Matrix<T>::Zero(enc.behaviors.rows(), enc.dim);
            for (Index k = 0; k < enc.size; ++k) {
                const Index len = enc.seq_len[static_cast<std::size_t>(k)];
                if (len > 0)
                    eg.behaviors.middleRows(k * enc.max_seq, len).rowwise() =
                        g.input.row(k).segment(fw, enc.dim) / static_cast<T>(len);
            }
            tables_.backward(batch, eg, *grads);
        }
        return l;
    }

    const StackState<T> st = stack_forward<T>(params, blocks_, enc);
    const HeadState<T> hs = head_forward<T>(params, head_, st.features, st.behaviors, enc.seq_len,
                                            enc.max_seq, enc.target, enc.scenario);
    const Matrix<T> probs = sigmoid(hs.tower.logits);
    const LossScalar<T> l = bce_loss(probs, y);
    if (grads) {
        const HeadInputGrad<T> hg =
            head_backward<T>(params, head_, hs, bce_logit_grad(probs, y), *grads);
        BlockInputGrad<T> sg = stack_backward<T>(params, blocks_, st, hg.features, hg.behaviors, *grads);
        EncodedBatchGrad<T> eg;
        eg.features = std::move(sg.features);
        eg.behaviors = std::move(sg.behaviors);
        eg.target = hg.target_embed;
        eg.scenario = hg.scenario;
        if (sg.scenario.size() != 0)
            eg.scenario += sg.scenario;
        tables_.backward(batch, eg, *grads);
    }
    return l;
}

template <typename T>
std::vector<double> Model<T>::predict(const std::vector<Instance>& data) const
{
    constexpr std::size_t kChunk = 1024;
    std::vector<double> out;
    out.reserve(data.size());
    std::vector<const Instance*> ptrs;
    for (std::size_t start = 0; start < data.size(); start += kChunk) {
        const std::size_t end = std::min(data.size(), start + kChunk);
        ptrs.clear();
        for (std::size_t i = start; i < end; ++i)
            ptrs.push_back(&data[i]);
        const Matrix<T> p = sigmoid(logits(params_, ptrs));
        for (Index i = 0; i < p.rows(); ++i)
            out.push_back(static_cast<double>(p(i, 0)));
    }
    return out;
}

template class Model<float>;
template class Model<double>;
template class Model<long double>;

} // namespace sfpnet
