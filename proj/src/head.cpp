#include "sfpnet/head.hpp"

#include <algorithm>
#include <cmath>

namespace sfpnet {

// ---------------------------------------------------------------------------
// Target attention
// ---------------------------------------------------------------------------

template <typename T>
AttentionParams register_attention(ParamStore<T>& store, const std::string& prefix,
                                   AttentionShape shape, std::uint64_t seed)
{
    if (shape.dim < 1 || shape.target_dim < 1 || shape.hidden < 1)
        throw ConfigError(prefix + ": attention dimensions must be positive");
    AttentionParams p;
    p.shape = shape;
    p.w1 = add_xavier(store, prefix + "/w1", shape.hidden, 4 * shape.dim, seed);
    p.b1 = add_constant<T>(store, prefix + "/b1", 1, shape.hidden, T(0));
    p.w2 = add_xavier(store, prefix + "/w2", 1, shape.hidden, seed);
    p.b2 = add_constant<T>(store, prefix + "/b2", 1, 1, T(0));
    if (shape.target_dim != shape.dim)
        p.target_proj = add_xavier(store, prefix + "/target_proj", shape.dim, shape.target_dim, seed);
    return p;
}

template <typename T>
AttentionState<T> din_forward(const ParamStore<T>& store, const AttentionParams& p,
                              const Matrix<T>& behaviors, const std::vector<Index>& seq_len,
                              Index max_seq, const Matrix<T>& target_embed)
{
    const Index B = static_cast<Index>(seq_len.size());
    const Index d = p.shape.dim;
    require_shapes(behaviors.rows() == B * max_seq && behaviors.cols() == d, "din_attention",
                   "behaviors", behaviors.rows(), behaviors.cols(), "batch x max_seq", B * max_seq, d);
    require_shapes(target_embed.rows() == B && target_embed.cols() == p.shape.target_dim,
                   "din_attention", "target", target_embed.rows(), target_embed.cols(),
                   "expected", B, p.shape.target_dim);

    AttentionState<T> st;
    st.behaviors = behaviors;
    st.target_embed = target_embed;
    st.seq_len = seq_len;
    st.max_seq = max_seq;
    if (p.target_proj.valid())
        st.target.noalias() = target_embed * store.value(p.target_proj).transpose();
    else
        st.target = target_embed;

    st.inter.resize(B * max_seq, 4 * d);
    for (Index k = 0; k < B; ++k) {
        const auto v = behaviors.middleRows(k * max_seq, max_seq);
        auto u = st.inter.middleRows(k * max_seq, max_seq);
        const auto t = st.target.row(k);
        u.leftCols(d) = v;
        u.middleCols(d, d).rowwise() = t;
        u.middleCols(2 * d, d) = v.rowwise() - t;
        u.rightCols(d) = v.array().rowwise() * t.array();
    }
    linear_rows<T>(st.inter, store.value(p.w1), store.value(p.b1), st.pre);
    st.hidden = relu(st.pre);
    linear_rows<T>(st.hidden, store.value(p.w2), store.value(p.b2), st.scores);

    st.weights = Matrix<T>::Zero(B * max_seq, 1);
    st.pooled = Matrix<T>::Zero(B, d);
    for (Index k = 0; k < B; ++k) {
        const Index len = seq_len[static_cast<std::size_t>(k)];
        if (len <= 0)
            continue;
        auto w = st.weights.middleRows(k * max_seq, len);
        w = st.scores.middleRows(k * max_seq, len);
        if (p.shape.softmax) {
            const T mx = w.maxCoeff();
            w = (w.array() - mx).exp().matrix();
            w /= w.sum();
        }
        st.pooled.row(k).noalias() =
            w.transpose() * behaviors.middleRows(k * max_seq, len);
    }
    return st;
}

template <typename T>
Matrix<T> din_attention(const ParamStore<T>& store, const AttentionParams& p,
                        const Matrix<T>& behaviors, const std::vector<Index>& seq_len,
                        Index max_seq, const Matrix<T>& target_embed)
{
    return din_forward<T>(store, p, behaviors, seq_len, max_seq, target_embed).pooled;
}

template <typename T>
AttentionInputGrad<T> din_backward(const ParamStore<T>& store, const AttentionParams& p,
                                   const AttentionState<T>& st, const Matrix<T>& d_pooled,
                                   Grads<T>& grads)
{
    const Index B = static_cast<Index>(st.seq_len.size());
    const Index d = p.shape.dim;
    const Index nb = st.max_seq;

    AttentionInputGrad<T> out;
    out.behaviors = Matrix<T>::Zero(B * nb, d);
    Matrix<T> d_scores = Matrix<T>::Zero(B * nb, 1);
    for (Index k = 0; k < B; ++k) {
        const Index len = st.seq_len[static_cast<std::size_t>(k)];
        if (len <= 0)
            continue;
        const auto v = st.behaviors.middleRows(k * nb, len);
        const auto w = st.weights.middleRows(k * nb, len);
        out.behaviors.middleRows(k * nb, len).noalias() = w * d_pooled.row(k);
        const Matrix<T> dw = v * d_pooled.row(k).transpose();
        auto ds = d_scores.middleRows(k * nb, len);
        if (p.shape.softmax)
            ds = (w.array() * (dw.array() - w.cwiseProduct(dw).sum())).matrix();
        else
            ds = dw;
    }

    linear_rows_param_grad<T>(st.hidden, d_scores, grads[p.w2], grads[p.b2]);
    const Matrix<T> d_hidden = d_scores * store.value(p.w2);
    const Matrix<T> d_pre = (d_hidden.array() * relu_mask(st.pre).array()).matrix();
    linear_rows_param_grad<T>(st.inter, d_pre, grads[p.w1], grads[p.b1]);
    const Matrix<T> d_inter = d_pre * store.value(p.w1);

    Matrix<T> d_target = Matrix<T>::Zero(B, d);
    for (Index k = 0; k < B; ++k) {
        const Index len = st.seq_len[static_cast<std::size_t>(k)];
        if (len <= 0)
            continue;
        const auto du = d_inter.middleRows(k * nb, len);
        const auto v = st.behaviors.middleRows(k * nb, len);
        const auto t = st.target.row(k);
        auto dv = out.behaviors.middleRows(k * nb, len);
        dv += du.leftCols(d) + du.middleCols(2 * d, d);
        dv.array() += du.rightCols(d).array().rowwise() * t.array();
        d_target.row(k) += du.middleCols(d, d).colwise().sum() - du.middleCols(2 * d, d).colwise().sum();
        d_target.row(k) += (du.rightCols(d).array() * v.array()).colwise().sum().matrix();
    }

    if (p.target_proj.valid()) {
        grads[p.target_proj].noalias() += d_target.transpose() * st.target_embed;
        out.target_embed = d_target * store.value(p.target_proj);
    } else {
        out.target_embed = std::move(d_target);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tower
// ---------------------------------------------------------------------------

template <typename T>
TowerParams register_tower(ParamStore<T>& store, const std::string& prefix, TowerShape shape,
                           std::uint64_t seed)
{
    if (shape.input_width < 1 || shape.scenario_dim < 1)
        throw ConfigError(prefix + ": tower input widths must be positive");
    TowerParams p;
    p.prefix = prefix;
    p.shape = shape;
    Index in = shape.input_width;
    for (std::size_t j = 0; j < shape.hidden.size(); ++j) {
        const Index out = shape.hidden[j];
        if (out < 1)
            throw ConfigError(prefix + ": hidden layer " + std::to_string(j) + " has width < 1");
        const std::string base = prefix + std::to_string(j) + "/";
        SdnnLayerParams l;
        l.in = in;
        l.out = out;
        if (!shape.no_sdnn) {
            Index gh = j < shape.gate_hidden.size() ? shape.gate_hidden[j] : 0;
            if (gh <= 0)
                gh = in;
            if (gh < 2)
                throw ConfigError(base + "gate: hidden width must be >= 2 for layer norm");
            l.w6 = add_xavier(store, base + "gate/w6", gh, in + shape.scenario_dim, seed);
            l.b6 = add_constant<T>(store, base + "gate/b6", 1, gh, T(0));
            l.ln_gain = add_constant<T>(store, base + "gate/ln_gain", 1, gh, T(1));
            l.ln_bias = add_constant<T>(store, base + "gate/ln_bias", 1, gh, T(0));
            l.w7 = add_xavier(store, base + "gate/w7", in, gh, seed);
            l.b7 = add_constant<T>(store, base + "gate/b7", 1, in, T(0));
        }
        l.w8 = add_xavier(store, base + "w8", out, in, seed);
        l.b8 = add_constant<T>(store, base + "b8", 1, out, T(0));
        p.layers.push_back(l);
        in = out;
    }
    p.out_w = add_xavier(store, "out/w", 1, in, seed);
    p.out_b = add_constant<T>(store, "out/b", 1, 1, T(0));
    return p;
}

template <typename T>
Matrix<T> sdnn_layer(const ParamStore<T>& store, const SdnnLayerParams& layer, bool no_sdnn,
                     const Matrix<T>& h, const Matrix<T>& scenario, SdnnLayerState<T>* state)
{
    SdnnLayerState<T> local;
    SdnnLayerState<T>& st = state ? *state : local;
    require_shapes(h.cols() == layer.in, "sdnn_layer", "H", h.rows(), h.cols(), "layer input",
                   h.rows(), layer.in);
    st.input = h;
    if (no_sdnn) {
        st.gated = h;
    } else {
        require_shapes(scenario.rows() == h.rows(), "sdnn_layer", "H", h.rows(), h.cols(),
                       "scenario", scenario.rows(), scenario.cols());
        st.gate_input.resize(h.rows(), h.cols() + scenario.cols());
        st.gate_input << h, scenario;
        linear_rows<T>(st.gate_input, store.value(layer.w6), store.value(layer.b6), st.gate_pre);
        const Matrix<T> hidden = relu(st.gate_pre);
        st.gate_ln_out = layer_norm_rows<T>(hidden, store.value(layer.ln_gain),
                                            store.value(layer.ln_bias), &st.gate_ln);
        Matrix<T> logits;
        linear_rows<T>(st.gate_ln_out, store.value(layer.w7), store.value(layer.b7), logits);
        st.gate = sigmoid(logits);
        st.gated = (h.array() * st.gate.array()).matrix();
    }
    linear_rows<T>(st.gated, store.value(layer.w8), store.value(layer.b8), st.pre);
    st.out = relu(st.pre);
    return st.out;
}

template <typename T>
TowerState<T> tower_forward(const ParamStore<T>& store, const TowerParams& p,
                            const Matrix<T>& input, const Matrix<T>& scenario)
{
    TowerState<T> st;
    st.layers.resize(p.layers.size());
    const Matrix<T>* h = &input;
    for (std::size_t j = 0; j < p.layers.size(); ++j) {
        sdnn_layer<T>(store, p.layers[j], p.shape.no_sdnn, *h, scenario, &st.layers[j]);
        h = &st.layers[j].out;
    }
    st.last = *h;
    linear_rows<T>(st.last, store.value(p.out_w), store.value(p.out_b), st.logits);
    return st;
}

template <typename T>
TowerInputGrad<T> tower_backward(const ParamStore<T>& store, const TowerParams& p,
                                 const TowerState<T>& st, const Matrix<T>& d_logits,
                                 Grads<T>& grads)
{
    TowerInputGrad<T> out;
    out.scenario = Matrix<T>::Zero(st.last.rows(), p.shape.scenario_dim);
    linear_rows_param_grad<T>(st.last, d_logits, grads[p.out_w], grads[p.out_b]);
    Matrix<T> dh = d_logits * store.value(p.out_w);
    for (std::size_t j = p.layers.size(); j-- > 0;) {
        const auto& l = p.layers[j];
        const auto& ls = st.layers[j];
        const Matrix<T> d_pre = (dh.array() * relu_mask(ls.pre).array()).matrix();
        linear_rows_param_grad<T>(ls.gated, d_pre, grads[l.w8], grads[l.b8]);
        const Matrix<T> d_gated = d_pre * store.value(l.w8);
        if (p.shape.no_sdnn) {
            dh = d_gated;
            continue;
        }
        dh = (d_gated.array() * ls.gate.array()).matrix();
        const Matrix<T> d_gate = (d_gated.array() * ls.input.array()).matrix();
        const Matrix<T> d_logit = sigmoid_backward(d_gate, ls.gate);
        linear_rows_param_grad<T>(ls.gate_ln_out, d_logit, grads[l.w7], grads[l.b7]);
        const Matrix<T> d_ln = d_logit * store.value(l.w7);
        const Matrix<T> d_hidden = layer_norm_rows_backward<T>(
            d_ln, store.value(l.ln_gain), ls.gate_ln, grads[l.ln_gain], grads[l.ln_bias]);
        const Matrix<T> d_gpre = (d_hidden.array() * relu_mask(ls.gate_pre).array()).matrix();
        linear_rows_param_grad<T>(ls.gate_input, d_gpre, grads[l.w6], grads[l.b6]);
        const Matrix<T> d_gin = d_gpre * store.value(l.w6);
        dh += d_gin.leftCols(l.in);
        out.scenario += d_gin.rightCols(p.shape.scenario_dim);
    }
    out.input = std::move(dh);
    return out;
}

// ---------------------------------------------------------------------------
// Head
// ---------------------------------------------------------------------------

template <typename T>
HeadParams register_head(ParamStore<T>& store, const HeadShape& shape, std::uint64_t seed)
{
    HeadParams p;
    p.n_fields = shape.n_fields;
    AttentionShape as;
    as.dim = shape.dim;
    as.target_dim = shape.embed_dim;
    as.hidden = shape.att_hidden;
    as.softmax = shape.att_softmax;
    p.attention = register_attention(store, "din", as, seed);
    TowerShape ts;
    ts.input_width = (shape.n_fields + 1) * shape.dim;
    ts.scenario_dim = shape.embed_dim;
    ts.hidden = shape.sdnn_hidden;
    ts.no_sdnn = shape.no_sdnn;
    p.tower = register_tower(store, "sdnn", ts, seed);
    return p;
}

template <typename T>
HeadState<T> head_forward(const ParamStore<T>& store, const HeadParams& p,
                          const Matrix<T>& features, const Matrix<T>& behaviors,
                          const std::vector<Index>& seq_len, Index max_seq,
                          const Matrix<T>& target_embed, const Matrix<T>& scenario)
{
    const Index d = p.attention.shape.dim;
    require_shapes(features.cols() == p.n_fields * d, "head", "features", features.rows(),
                   features.cols(), "n_fields x d_L", p.n_fields, d);
    HeadState<T> st;
    st.attention = din_forward<T>(store, p.attention, behaviors, seq_len, max_seq, target_embed);
    st.h1.resize(features.rows(), features.cols() + d);
    st.h1 << features, st.attention.pooled;
    st.tower = tower_forward<T>(store, p.tower, st.h1, scenario);
    return st;
}

template <typename T>
HeadInputGrad<T> head_backward(const ParamStore<T>& store, const HeadParams& p,
                               const HeadState<T>& st, const Matrix<T>& d_logits,
                               Grads<T>& grads)
{
    const Index d = p.attention.shape.dim;
    TowerInputGrad<T> tg = tower_backward<T>(store, p.tower, st.tower, d_logits, grads);
    HeadInputGrad<T> out;
    out.features = tg.input.leftCols(p.n_fields * d);
    AttentionInputGrad<T> ag =
        din_backward<T>(store, p.attention, st.attention, tg.input.rightCols(d), grads);
    out.behaviors = std::move(ag.behaviors);
    out.target_embed = std::move(ag.target_embed);
    out.scenario = std::move(tg.scenario);
    return out;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

double bce_loss(std::span<const double> preds, std::span<const int> labels)
{
    if (preds.empty())
        throw std::invalid_argument("bce_loss: empty batch");
    if (preds.size() != labels.size())
        throw ShapeError("bce_loss: " + std::to_string(preds.size()) + " predictions vs " +
                         std::to_string(labels.size()) + " labels");
    double sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double p = std::clamp(preds[i], kProbClamp, 1.0 - kProbClamp);
        sum += labels[i] ? std::log(p) : std::log1p(-p);
    }
    return -sum / static_cast<double>(preds.size());
}

template <typename T>
LossScalar<T> bce_loss(const Matrix<T>& probs, std::span<const int> labels)
{
    using A = LossScalar<T>;
    if (probs.size() == 0)
        throw std::invalid_argument("bce_loss: empty batch");
    if (static_cast<std::size_t>(probs.size()) != labels.size())
        throw ShapeError("bce_loss: " + std::to_string(probs.size()) + " predictions vs " +
                         std::to_string(labels.size()) + " labels");
    A sum = 0;
    for (Index i = 0; i < probs.size(); ++i) {
        const A p = std::clamp(static_cast<A>(probs.data()[i]), A(kProbClamp), A(1) - A(kProbClamp));
        sum += labels[static_cast<std::size_t>(i)] ? std::log(p) : std::log1p(-p);
    }
    return -sum / static_cast<A>(probs.size());
}

template <typename T>
Matrix<T> bce_logit_grad(const Matrix<T>& probs, std::span<const int> labels)
{
    if (static_cast<std::size_t>(probs.size()) != labels.size())
        throw ShapeError("bce_logit_grad: predictions and labels differ in length");
    Matrix<T> g(probs.rows(), probs.cols());
    const T inv = T(1) / static_cast<T>(labels.size());
    for (Index i = 0; i < probs.size(); ++i)
        g.data()[i] = (probs.data()[i] - static_cast<T>(labels[static_cast<std::size_t>(i)])) * inv;
    return g;
}

#define SFPNET_INSTANTIATE(T)                                                                    \
    template AttentionParams register_attention<T>(ParamStore<T>&, const std::string&,          \
                                                   AttentionShape, std::uint64_t);              \
    template AttentionState<T> din_forward<T>(const ParamStore<T>&, const AttentionParams&,     \
                                              const Matrix<T>&, const std::vector<Index>&,      \
                                              Index, const Matrix<T>&);                         \
    template Matrix<T> din_attention<T>(const ParamStore<T>&, const AttentionParams&,           \
                                        const Matrix<T>&, const std::vector<Index>&, Index,     \
                                        const Matrix<T>&);                                      \
    template AttentionInputGrad<T> din_backward<T>(const ParamStore<T>&,                        \
                                                   const AttentionParams&,                      \
                                                   const AttentionState<T>&, const Matrix<T>&,  \
                                                   Grads<T>&);                                  \
    template TowerParams register_tower<T>(ParamStore<T>&, const std::string&, TowerShape,      \
                                           std::uint64_t);                                      \
    template Matrix<T> sdnn_layer<T>(const ParamStore<T>&, const SdnnLayerParams&, bool,        \
                                     const Matrix<T>&, const Matrix<T>&, SdnnLayerState<T>*);   \
    template TowerState<T> tower_forward<T>(const ParamStore<T>&, const TowerParams&,           \
                                            const Matrix<T>&, const Matrix<T>&);                \
    template TowerInputGrad<T> tower_backward<T>(const ParamStore<T>&, const TowerParams&,      \
                                                 const TowerState<T>&, const Matrix<T>&,        \
                                                 Grads<T>&);                                    \
    template HeadParams register_head<T>(ParamStore<T>&, const HeadShape&, std::uint64_t);      \
    template HeadState<T> head_forward<T>(const ParamStore<T>&, const HeadParams&,              \
                                          const Matrix<T>&, const Matrix<T>&,                   \
                                          const std::vector<Index>&, Index, const Matrix<T>&,   \
                                          const Matrix<T>&);                                    \
    template HeadInputGrad<T> head_backward<T>(const ParamStore<T>&, const HeadParams&,         \
                                               const HeadState<T>&, const Matrix<T>&,           \
                                               Grads<T>&);                                      \
    template LossScalar<T> bce_loss<T>(const Matrix<T>&, std::span<const int>);                     \
    template Matrix<T> bce_logit_grad<T>(const Matrix<T>&, std::span<const int>);

SFPNET_INSTANTIATE(float)
SFPNET_INSTANTIATE(double)
SFPNET_INSTANTIATE(long double)

#undef SFPNET_INSTANTIATE

} // namespace sfpnet
