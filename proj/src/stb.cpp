#include "sfpnet/stb.hpp"

#include <cmath>
#include <sstream>

namespace sfpnet {

BlockShape BlockShape::resolved() const
{
    BlockShape s = *this;
    if (s.gate_hidden <= 0)
        s.gate_hidden = concat_width();
    if (s.agg_hidden <= 0)
        s.agg_hidden = concat_width();
    return s;
}

template <typename T>
BlockParams register_block(ParamStore<T>& store, const std::string& prefix, BlockShape shape,
                           BlockFlags flags, std::uint64_t seed)
{
    shape = shape.resolved();
    if (shape.n_fields < 1 || shape.in_dim < 1 || shape.out_dim < 1 || shape.scenario_dim < 1)
        throw ConfigError(prefix + ": block dimensions must be positive");
    if (!flags.no_sam && shape.gate_hidden < 2)
        throw ConfigError(prefix + ": gate hidden width must be >= 2 for layer norm");

    BlockParams p;
    p.prefix = prefix;
    p.shape = shape;
    p.flags = flags;
    const Index din = shape.in_dim;
    const Index dout = shape.out_dim;
    auto w = [&](const std::string& name, Index rows, Index cols) {
        return add_xavier(store, prefix + "/" + name, rows, cols, seed);
    };
    auto zeros = [&](const std::string& name, Index cols) {
        return add_constant<T>(store, prefix + "/" + name, 1, cols, T(0));
    };

    if (!flags.no_sam) {
        p.gate_w0 = w("gate/w0", shape.gate_hidden, shape.gate_input_width());
        p.gate_b0 = zeros("gate/b0", shape.gate_hidden);
        p.gate_ln_gain = add_constant<T>(store, prefix + "/gate/ln_gain", 1, shape.gate_hidden, T(1));
        p.gate_ln_bias = zeros("gate/ln_bias", shape.gate_hidden);
        p.gate_w1 = w("gate/w1", shape.concat_width(), shape.gate_hidden);
        p.gate_b1 = zeros("gate/b1", shape.concat_width());
    }
    if (!flags.no_rtm) {
        p.agg_w2 = w("agg/w2", shape.agg_hidden, shape.concat_width());
        p.agg_b2 = zeros("agg/b2", shape.agg_hidden);
        p.agg_w3 = w("agg/w3", shape.context_width(), shape.agg_hidden);
        p.agg_b3 = zeros("agg/b3", shape.context_width());
    }
    for (Index i = 0; i < shape.n_fields; ++i) {
        const std::string f = "field" + std::to_string(i) + "/";
        FieldTailorParams fp;
        fp.w1 = w(f + "w1", dout, din);
        fp.b1 = zeros(f + "b1", dout);
        if (!flags.no_rtm) {
            fp.w2 = w(f + "w2", dout, din);
            fp.b2 = zeros(f + "b2", dout);
        }
        p.fields.push_back(fp);
    }
    p.seq_w4 = w("seq/w4", dout, din);
    p.seq_b4 = zeros("seq/b4", dout);
    if (!flags.no_rtm) {
        p.seq_w5 = w("seq/w5", dout, din);
        p.seq_b5 = zeros("seq/b5", dout);
        p.seq_proj = w("seq/proj", dout, 2 * dout);
        p.seq_proj_b = zeros("seq/proj_b", dout);
    }
    return p;
}

void validate_stack(const std::vector<BlockParams>& blocks, Index n_fields, Index input_dim,
                    Index scenario_dim)
{
    Index prev = input_dim;
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        const auto& s = blocks[l].shape;
        std::ostringstream os;
        if (s.n_fields != n_fields)
            os << "block " << l << " (" << blocks[l].prefix << ") expects " << s.n_fields
               << " feature fields, model has " << n_fields;
        else if (s.in_dim != prev)
            os << "block " << l << " (" << blocks[l].prefix << ") input dim " << s.in_dim
               << " does not match previous output dim " << prev;
        else if (s.scenario_dim != scenario_dim)
            os << "block " << l << " (" << blocks[l].prefix << ") scenario dim " << s.scenario_dim
               << " does not match " << scenario_dim;
        if (!os.str().empty())
            throw ConfigError(os.str());
        prev = s.out_dim;
    }
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void check_batch(const BlockParams& p, const Matrix<T>& features, const Matrix<T>& behaviors,
                 const std::vector<Index>& seq_len, Index max_seq, const Matrix<T>& scenario)
{
    const auto& s = p.shape;
    const Index B = features.rows();
    require_shapes(features.cols() == s.n_fields * s.in_dim, p.prefix, "features", features.rows(),
                   features.cols(), "block input", s.n_fields, s.in_dim);
    require_shapes(behaviors.rows() == B * max_seq && behaviors.cols() == s.in_dim, p.prefix,
                   "behaviors", behaviors.rows(), behaviors.cols(), "batch x max_seq", B, max_seq);
    require_shapes(scenario.rows() == B && scenario.cols() == s.scenario_dim, p.prefix, "scenario",
                   scenario.rows(), scenario.cols(), "features", features.rows(), features.cols());
    if (static_cast<Index>(seq_len.size()) != B)
        throw ShapeError(p.prefix + ": seq_len has wrong length");
    for (auto len : seq_len)
        if (len < 0 || len > max_seq)
            throw ShapeError(p.prefix + ": seq_len outside [0, max_seq]");
}

template <typename T>
Matrix<T> hcat(const Matrix<T>& a, const Matrix<T>& b)
{
    Matrix<T> out(a.rows(), a.cols() + b.cols());
    out << a, b;
    return out;
}

template <typename T>
void zero_padding_rows(Matrix<T>& rows, const std::vector<Index>& seq_len, Index max_seq)
{
    for (std::size_t k = 0; k < seq_len.size(); ++k) {
        const Index pad = max_seq - seq_len[k];
        if (pad > 0)
            rows.middleRows(static_cast<Index>(k) * max_seq + seq_len[k], pad).setZero();
    }
}

} // namespace

template <typename T>
Matrix<T> dap_pool(const Matrix<T>& behaviors, const std::vector<Index>& seq_len, Index max_seq,
                   bool with_std)
{
    const Index B = static_cast<Index>(seq_len.size());
    const Index d = behaviors.cols();
    require_shapes(behaviors.rows() == B * max_seq, "dap_pool", "behaviors", behaviors.rows(),
                   behaviors.cols(), "batch x max_seq", B, max_seq);
    Matrix<T> pooled = Matrix<T>::Zero(B, 2 * d);
    for (Index k = 0; k < B; ++k) {
        const Index len = seq_len[static_cast<std::size_t>(k)];
        if (len <= 0)
            continue;
        const auto rows = behaviors.middleRows(k * max_seq, len);
        const T inv = T(1) / static_cast<T>(len);
        const RowVector<T> mean = rows.colwise().sum() * inv;
        pooled.row(k).head(d) = mean;
        if (with_std) {
            // two passes: E[x^2] - mean^2 cancels badly for near-constant sequences
            const RowVector<T> var =
                (rows.rowwise() - mean).array().square().colwise().sum().matrix() * inv;
            pooled.row(k).tail(d) = var.array().sqrt().matrix();
        }
    }
    return pooled;
}

template <typename T>
RowVector<T> dap_pool(const Matrix<T>& behaviors, Index seq_len)
{
    return dap_pool<T>(behaviors, std::vector<Index>{seq_len}, behaviors.rows(), true).row(0);
}

namespace {

template <typename T>
struct GateTrace {
    Matrix<T> input;
    Matrix<T> pre;
    LayerNormCache<T> ln;
    Matrix<T> ln_out;
    Matrix<T> gate;
};

template <typename T>
GateTrace<T> gate_forward(const ParamStore<T>& store, const BlockParams& p,
                          const Matrix<T>& concat, const Matrix<T>& scenario)
{
    GateTrace<T> t;
    t.input = hcat(concat, scenario);
    linear_rows<T>(t.input, store.value(p.gate_w0), store.value(p.gate_b0), t.pre);
    const Matrix<T> hidden = relu(t.pre);
    t.ln_out = layer_norm_rows<T>(hidden, store.value(p.gate_ln_gain), store.value(p.gate_ln_bias),
                                  &t.ln);
    Matrix<T> logits;
    linear_rows<T>(t.ln_out, store.value(p.gate_w1), store.value(p.gate_b1), logits);
    t.gate = sigmoid(logits);
    return t;
}

} // namespace

template <typename T>
Matrix<T> sam_gate(const ParamStore<T>& store, const BlockParams& p, const Matrix<T>& features,
                   const Matrix<T>& pooled, const Matrix<T>& scenario)
{
    if (p.flags.no_sam)
        throw std::logic_error(p.prefix + ": sam_gate called on a block without SAM");
    require_shapes(features.rows() == pooled.rows() && pooled.cols() == 2 * p.shape.in_dim,
                   "sam_gate", "features", features.rows(), features.cols(), "pooled",
                   pooled.rows(), pooled.cols());
    return gate_forward(store, p, hcat(features, pooled), scenario).gate;
}

template <typename T>
Matrix<T> sam_rescale(const Matrix<T>& features, const Matrix<T>& pooled, const Matrix<T>& gate)
{
    require_shapes(features.rows() == pooled.rows(), "sam_rescale", "features", features.rows(),
                   features.cols(), "pooled", pooled.rows(), pooled.cols());
    require_shapes(gate.rows() == features.rows() &&
                       gate.cols() == features.cols() + pooled.cols(),
                   "sam_rescale", "[features, pooled]", features.rows(),
                   features.cols() + pooled.cols(), "gate", gate.rows(), gate.cols());
    return (hcat(features, pooled).array() * gate.array()).matrix();
}

template <typename T>
Matrix<T> rtm_aggregate(const ParamStore<T>& store, const BlockParams& p,
                        const Matrix<T>& rescaled)
{
    if (p.flags.no_rtm)
        throw std::logic_error(p.prefix + ": rtm_aggregate called on a block without RTM");
    Matrix<T> pre, context;
    linear_rows<T>(rescaled, store.value(p.agg_w2), store.value(p.agg_b2), pre);
    const Matrix<T> hidden = relu(pre);
    linear_rows<T>(hidden, store.value(p.agg_w3), store.value(p.agg_b3), context);
    return context;
}

template <typename T>
Matrix<T> rtm_tailor_feature(const ParamStore<T>& store, const BlockParams& p, Index field,
                             const Matrix<T>& x, const Matrix<T>& context_slice)
{
    const auto& fp = p.fields.at(static_cast<std::size_t>(field));
    Matrix<T> pre;
    linear_rows<T>(x, store.value(fp.w1), store.value(fp.b1), pre);
    Matrix<T> out = relu(pre);
    if (!p.flags.no_rtm) {
        require_shapes(context_slice.rows() == x.rows() && context_slice.cols() == p.shape.out_dim,
                       "rtm_tailor_feature", "x", x.rows(), x.cols(), "context slice",
                       context_slice.rows(), context_slice.cols());
        Matrix<T> g;
        linear_rows<T>(x, store.value(fp.w2), store.value(fp.b2), g);
        out.array() += sigmoid(g).array() * context_slice.array();
    }
    return out;
}

template <typename T>
RowVector<T> rtm_tailor_behavior(const ParamStore<T>& store, const BlockParams& p,
                                 const RowVector<T>& v, const RowVector<T>& seq_context)
{
    const RowVector<T> b4 = store.value(p.seq_b4).row(0);
    RowVector<T> out = relu(linear<T>(v, store.value(p.seq_w4), b4));
    if (!p.flags.no_rtm) {
        require_shapes(seq_context.cols() == 2 * p.shape.out_dim, "rtm_tailor_behavior", "c_b",
                       seq_context.rows(), seq_context.cols(), "2 x d_out", 1,
                       2 * p.shape.out_dim);
        const RowVector<T> b5 = store.value(p.seq_b5).row(0);
        const RowVector<T> pb = store.value(p.seq_proj_b).row(0);
        const RowVector<T> ctx = linear<T>(seq_context, store.value(p.seq_proj), pb);
        out.array() += sigmoid(linear<T>(v, store.value(p.seq_w5), b5)).array() * ctx.array();
    }
    return out;
}

template <typename T>
Matrix<T> rtm_tailor_behaviors(const ParamStore<T>& store, const BlockParams& p,
                               const Matrix<T>& behaviors, const Matrix<T>& seq_context,
                               const std::vector<Index>& seq_len, Index max_seq)
{
    // Row by row on purpose: GEMM and GEMV round differently, and this op must agree
    // exactly with the single-row form. block_forward uses the fused batched products.
    const Index B = static_cast<Index>(seq_len.size());
    require_shapes(behaviors.rows() == B * max_seq && seq_context.rows() == B,
                   "rtm_tailor_behaviors", "behaviors", behaviors.rows(), behaviors.cols(),
                   "seq_context", seq_context.rows(), seq_context.cols());
    Matrix<T> out = Matrix<T>::Zero(behaviors.rows(), p.shape.out_dim);
    for (Index k = 0; k < B; ++k) {
        const RowVector<T> ctx = p.flags.no_rtm ? RowVector<T>() : RowVector<T>(seq_context.row(k));
        for (Index r = 0; r < seq_len[static_cast<std::size_t>(k)]; ++r) {
            const RowVector<T> v = behaviors.row(k * max_seq + r);
            out.row(k * max_seq + r) = rtm_tailor_behavior<T>(store, p, v, ctx);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

template <typename T>
BlockState<T> block_forward(const ParamStore<T>& store, const BlockParams& p,
                            const Matrix<T>& features, const Matrix<T>& behaviors,
                            const std::vector<Index>& seq_len, Index max_seq,
                            const Matrix<T>& scenario)
{
    check_batch(p, features, behaviors, seq_len, max_seq, scenario);
    const auto& s = p.shape;
    const Index B = features.rows();
    const Index din = s.in_dim;
    const Index dout = s.out_dim;
    const Index n = s.n_fields;

    BlockState<T> st;
    st.features = features;
    st.behaviors = behaviors;
    st.seq_len = seq_len;
    st.max_seq = max_seq;

    st.pooled = dap_pool<T>(behaviors, seq_len, max_seq, !p.flags.no_dap);
    st.concat = hcat(features, st.pooled);

    if (p.flags.no_sam) {
        st.rescaled = st.concat;
    } else {
        GateTrace<T> g = gate_forward(store, p, st.concat, scenario);
        st.gate_input = std::move(g.input);
        st.gate_pre = std::move(g.pre);
        st.gate_ln = std::move(g.ln);
        st.gate_ln_out = std::move(g.ln_out);
        st.gate = std::move(g.gate);
        st.rescaled = (st.concat.array() * st.gate.array()).matrix();
    }

    if (!p.flags.no_rtm) {
        linear_rows<T>(st.rescaled, store.value(p.agg_w2), store.value(p.agg_b2), st.agg_pre);
        st.agg_hidden = relu(st.agg_pre);
        linear_rows<T>(st.agg_hidden, store.value(p.agg_w3), store.value(p.agg_b3), st.context);
    }

    st.out_features.resize(B, n * dout);
    st.field_pre.resize(static_cast<std::size_t>(n));
    st.field_gate.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        const auto& fp = p.fields[static_cast<std::size_t>(i)];
        const auto x = st.rescaled.middleCols(i * din, din);
        auto& pre = st.field_pre[static_cast<std::size_t>(i)];
        linear_rows<T>(x, store.value(fp.w1), store.value(fp.b1), pre);
        auto out = st.out_features.middleCols(i * dout, dout);
        out = relu(pre);
        if (!p.flags.no_rtm) {
            Matrix<T> z;
            linear_rows<T>(x, store.value(fp.w2), store.value(fp.b2), z);
            auto& gate = st.field_gate[static_cast<std::size_t>(i)];
            gate = sigmoid(z);
            out.array() += gate.array() * st.context.middleCols(i * dout, dout).array();
        }
    }

    linear_rows<T>(behaviors, store.value(p.seq_w4), store.value(p.seq_b4), st.seq_pre);
    st.out_behaviors = relu(st.seq_pre);
    if (!p.flags.no_rtm) {
        linear_rows<T>(st.context.middleCols(n * dout, 2 * dout), store.value(p.seq_proj),
                       store.value(p.seq_proj_b), st.seq_context);
        Matrix<T> z;
        linear_rows<T>(behaviors, store.value(p.seq_w5), store.value(p.seq_b5), z);
        st.seq_gate = sigmoid(z);
        for (Index k = 0; k < B; ++k)
            st.out_behaviors.middleRows(k * max_seq, max_seq).array() +=
                st.seq_gate.middleRows(k * max_seq, max_seq).array().rowwise() *
                st.seq_context.row(k).array();
    }
    zero_padding_rows(st.out_behaviors, seq_len, max_seq);
    return st;
}

template <typename T>
BlockInputGrad<T> block_backward(const ParamStore<T>& store, const BlockParams& p,
                                 const BlockState<T>& st, const Matrix<T>& d_features,
                                 const Matrix<T>& d_behaviors, Grads<T>& grads)
{
    const auto& s = p.shape;
    const Index B = st.features.rows();
    const Index din = s.in_dim;
    const Index dout = s.out_dim;
    const Index n = s.n_fields;
    const Index nb = st.max_seq;
    require_shapes(d_features.rows() == B && d_features.cols() == n * dout, p.prefix + " backward",
                   "d_features", d_features.rows(), d_features.cols(), "out_features", B, n * dout);
    require_shapes(d_behaviors.rows() == B * nb && d_behaviors.cols() == dout,
                   p.prefix + " backward", "d_behaviors", d_behaviors.rows(), d_behaviors.cols(),
                   "out_behaviors", B * nb, dout);

    Matrix<T> d_rescaled = Matrix<T>::Zero(B, s.concat_width());
    Matrix<T> d_context;
    if (!p.flags.no_rtm)
        d_context = Matrix<T>::Zero(B, s.context_width());

    // behavior tailoring
    Matrix<T> d_out_b = d_behaviors;
    zero_padding_rows(d_out_b, st.seq_len, nb);
    Matrix<T> d_pre4 = (d_out_b.array() * relu_mask(st.seq_pre).array()).matrix();
    linear_rows_param_grad<T>(st.behaviors, d_pre4, grads[p.seq_w4], grads[p.seq_b4]);
    Matrix<T> d_beh_in = d_pre4 * store.value(p.seq_w4);
    if (!p.flags.no_rtm) {
        Matrix<T> d_gate5(B * nb, dout);
        Matrix<T> d_ctx(B, dout);
        for (Index k = 0; k < B; ++k) {
            const auto dob = d_out_b.middleRows(k * nb, nb);
            d_gate5.middleRows(k * nb, nb) = dob.array().rowwise() * st.seq_context.row(k).array();
            d_ctx.row(k) = (dob.array() * st.seq_gate.middleRows(k * nb, nb).array())
                               .colwise()
                               .sum()
                               .matrix();
        }
        const Matrix<T> d_pre5 = sigmoid_backward(d_gate5, st.seq_gate);
        linear_rows_param_grad<T>(st.behaviors, d_pre5, grads[p.seq_w5], grads[p.seq_b5]);
        d_beh_in.noalias() += d_pre5 * store.value(p.seq_w5);

        const auto cb = st.context.middleCols(n * dout, 2 * dout);
        linear_rows_param_grad<T>(cb, d_ctx, grads[p.seq_proj], grads[p.seq_proj_b]);
        d_context.middleCols(n * dout, 2 * dout).noalias() += d_ctx * store.value(p.seq_proj);
    }

    // per-field tailoring
    for (Index i = 0; i < n; ++i) {
        const auto& fp = p.fields[static_cast<std::size_t>(i)];
        const auto x = st.rescaled.middleCols(i * din, din);
        const auto dout_i = d_features.middleCols(i * dout, dout);
        const Matrix<T> d_pre1 =
            (dout_i.array() * relu_mask(st.field_pre[static_cast<std::size_t>(i)]).array()).matrix();
        linear_rows_param_grad<T>(x, d_pre1, grads[fp.w1], grads[fp.b1]);
        auto dx = d_rescaled.middleCols(i * din, din);
        dx.noalias() += d_pre1 * store.value(fp.w1);
        if (!p.flags.no_rtm) {
            const auto& gate = st.field_gate[static_cast<std::size_t>(i)];
            const auto c = st.context.middleCols(i * dout, dout);
            const Matrix<T> d_gate = (dout_i.array() * c.array()).matrix();
            const Matrix<T> d_pre2 = sigmoid_backward(d_gate, gate);
            linear_rows_param_grad<T>(x, d_pre2, grads[fp.w2], grads[fp.b2]);
            dx.noalias() += d_pre2 * store.value(fp.w2);
            d_context.middleCols(i * dout, dout).array() += dout_i.array() * gate.array();
        }
    }

    // aggregation
    if (!p.flags.no_rtm) {
        linear_rows_param_grad<T>(st.agg_hidden, d_context, grads[p.agg_w3], grads[p.agg_b3]);
        const Matrix<T> d_hidden = d_context * store.value(p.agg_w3);
        const Matrix<T> d_pre = (d_hidden.array() * relu_mask(st.agg_pre).array()).matrix();
        linear_rows_param_grad<T>(st.rescaled, d_pre, grads[p.agg_w2], grads[p.agg_b2]);
        d_rescaled.noalias() += d_pre * store.value(p.agg_w2);
    }

    BlockInputGrad<T> out;
    Matrix<T> d_concat;
    if (p.flags.no_sam) {
        d_concat = std::move(d_rescaled);
        out.scenario = Matrix<T>::Zero(B, s.scenario_dim);
    } else {
        d_concat = (d_rescaled.array() * st.gate.array()).matrix();
        const Matrix<T> d_gate = (d_rescaled.array() * st.concat.array()).matrix();
        const Matrix<T> d_logits = sigmoid_backward(d_gate, st.gate);
        linear_rows_param_grad<T>(st.gate_ln_out, d_logits, grads[p.gate_w1], grads[p.gate_b1]);
        const Matrix<T> d_ln = d_logits * store.value(p.gate_w1);
        const Matrix<T> d_hidden =
            layer_norm_rows_backward<T>(d_ln, store.value(p.gate_ln_gain), st.gate_ln,
                                        grads[p.gate_ln_gain], grads[p.gate_ln_bias]);
        const Matrix<T> d_pre = (d_hidden.array() * relu_mask(st.gate_pre).array()).matrix();
        linear_rows_param_grad<T>(st.gate_input, d_pre, grads[p.gate_w0], grads[p.gate_b0]);
        const Matrix<T> d_input = d_pre * store.value(p.gate_w0);
        d_concat += d_input.leftCols(s.concat_width());
        out.scenario = d_input.rightCols(s.scenario_dim);
    }

    out.features = d_concat.leftCols(n * din);

    // pooling
    const auto d_pooled = d_concat.rightCols(2 * din);
    for (Index k = 0; k < B; ++k) {
        const Index len = st.seq_len[static_cast<std::size_t>(k)];
        if (len <= 0)
            continue;
        const T inv = T(1) / static_cast<T>(len);
        auto rows = d_beh_in.middleRows(k * nb, len);
        rows.rowwise() += d_pooled.row(k).head(din) * inv;
        if (!p.flags.no_dap) {
            const auto mean = st.pooled.row(k).head(din);
            const auto sd = st.pooled.row(k).tail(din);
            const auto d_sd = d_pooled.row(k).tail(din);
            for (Index j = 0; j < din; ++j) {
                if (!(sd(j) > T(0)))
                    continue;
                const T coef = d_sd(j) * inv / sd(j);
                rows.col(j).array() +=
                    coef * (st.behaviors.middleRows(k * nb, len).col(j).array() - mean(j));
            }
        }
    }
    out.behaviors = std::move(d_beh_in);
    return out;
}

template <typename T>
StackState<T> stack_forward(const ParamStore<T>& store, const std::vector<BlockParams>& blocks,
                            const EncodedBatch<T>& batch)
{
    StackState<T> st;
    st.blocks.reserve(blocks.size());
    const Matrix<T>* features = &batch.features;
    const Matrix<T>* behaviors = &batch.behaviors;
    for (const auto& p : blocks) {
        st.blocks.push_back(block_forward<T>(store, p, *features, *behaviors, batch.seq_len,
                                             batch.max_seq, batch.scenario));
        features = &st.blocks.back().out_features;
        behaviors = &st.blocks.back().out_behaviors;
    }
    st.features = *features;
    st.behaviors = *behaviors;
    return st;
}

template <typename T>
BlockInputGrad<T> stack_backward(const ParamStore<T>& store, const std::vector<BlockParams>& blocks,
                                 const StackState<T>& state, const Matrix<T>& d_features,
                                 const Matrix<T>& d_behaviors, Grads<T>& grads)
{
    BlockInputGrad<T> g;
    g.features = d_features;
    g.behaviors = d_behaviors;
    for (std::size_t l = blocks.size(); l-- > 0;) {
        BlockInputGrad<T> step =
            block_backward<T>(store, blocks[l], state.blocks[l], g.features, g.behaviors, grads);
        g.features = std::move(step.features);
        g.behaviors = std::move(step.behaviors);
        if (g.scenario.size() == 0)
            g.scenario = std::move(step.scenario);
        else
            g.scenario += step.scenario;
    }
    return g;
}

#define SFPNET_INSTANTIATE(T)                                                                    \
    template BlockParams register_block<T>(ParamStore<T>&, const std::string&, BlockShape,      \
                                           BlockFlags, std::uint64_t);                          \
    template Matrix<T> dap_pool<T>(const Matrix<T>&, const std::vector<Index>&, Index, bool);   \
    template RowVector<T> dap_pool<T>(const Matrix<T>&, Index);                                 \
    template Matrix<T> sam_gate<T>(const ParamStore<T>&, const BlockParams&, const Matrix<T>&,  \
                                   const Matrix<T>&, const Matrix<T>&);                         \
    template Matrix<T> sam_rescale<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&);    \
    template Matrix<T> rtm_aggregate<T>(const ParamStore<T>&, const BlockParams&,               \
                                        const Matrix<T>&);                                      \
    template Matrix<T> rtm_tailor_feature<T>(const ParamStore<T>&, const BlockParams&, Index,   \
                                             const Matrix<T>&, const Matrix<T>&);               \
    template RowVector<T> rtm_tailor_behavior<T>(const ParamStore<T>&, const BlockParams&,      \
                                                 const RowVector<T>&, const RowVector<T>&);     \
    template Matrix<T> rtm_tailor_behaviors<T>(const ParamStore<T>&, const BlockParams&,        \
                                               const Matrix<T>&, const Matrix<T>&,              \
                                               const std::vector<Index>&, Index);               \
    template BlockState<T> block_forward<T>(const ParamStore<T>&, const BlockParams&,           \
                                            const Matrix<T>&, const Matrix<T>&,                 \
                                            const std::vector<Index>&, Index, const Matrix<T>&);\
    template BlockInputGrad<T> block_backward<T>(const ParamStore<T>&, const BlockParams&,      \
                                                 const BlockState<T>&, const Matrix<T>&,        \
                                                 const Matrix<T>&, Grads<T>&);                  \
    template StackState<T> stack_forward<T>(const ParamStore<T>&,                               \
                                            const std::vector<BlockParams>&,                    \
                                            const EncodedBatch<T>&);                            \
    template BlockInputGrad<T> stack_backward<T>(const ParamStore<T>&,                          \
                                                 const std::vector<BlockParams>&,               \
                                                 const StackState<T>&, const Matrix<T>&,        \
                                                 const Matrix<T>&, Grads<T>&);

SFPNET_INSTANTIATE(float)
SFPNET_INSTANTIATE(double)
SFPNET_INSTANTIATE(long double)

#undef SFPNET_INSTANTIATE

} // namespace sfpnet
