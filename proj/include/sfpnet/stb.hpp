#pragma once

// Scenario-Tailoring Block: a scenario-adaptive gate over all bottom features (with the
// behavior sequence compressed by distribution-aware pooling) followed by residual
// tailoring of every feature and every individual behavior.

#include "sfpnet/encoding.hpp"
#include "sfpnet/numerics.hpp"

#include <string>
#include <vector>

namespace sfpnet {

struct BlockFlags {
    bool no_dap = false; // mean pooling only (std half of the pooled vector is zero)
    bool no_sam = false; // gate fixed at 1
    bool no_rtm = false; // plain per-field ReLU projection, no context product
};

struct BlockShape {
    Index n_fields = 1;
    Index in_dim = 1;
    Index out_dim = 1;
    Index scenario_dim = 1;
    Index gate_hidden = 0; // 0 -> (n_fields + 2) * in_dim
    Index agg_hidden = 0;  // 0 -> (n_fields + 2) * in_dim

    Index concat_width() const { return (n_fields + 2) * in_dim; }
    Index gate_input_width() const { return concat_width() + scenario_dim; }
    Index context_width() const { return (n_fields + 2) * out_dim; }
    BlockShape resolved() const;
};

struct FieldTailorParams {
    ParamId w1, b1; // ReLU branch
    ParamId w2, b2; // sigmoid gate on the context slice (absent under no_rtm)
};

struct BlockParams {
    std::string prefix;
    BlockShape shape;
    BlockFlags flags;

    ParamId gate_w0, gate_b0, gate_ln_gain, gate_ln_bias, gate_w1, gate_b1;
    ParamId agg_w2, agg_b2, agg_w3, agg_b3;
    std::vector<FieldTailorParams> fields;
    ParamId seq_w4, seq_b4, seq_w5, seq_b5;
    ParamId seq_proj, seq_proj_b; // maps the 2*d_out sequence context slice to d_out
};

/// Registers one block's parameters under `prefix` (e.g. "stb0").
template <typename T>
BlockParams register_block(ParamStore<T>& store, const std::string& prefix, BlockShape shape,
                           BlockFlags flags, std::uint64_t seed);

/// Throws ConfigError when consecutive blocks do not chain (in_dim of block l must equal
/// out_dim of block l-1) or the first block does not match `input_dim`.
void validate_stack(const std::vector<BlockParams>& blocks, Index n_fields, Index input_dim,
                    Index scenario_dim);

// ---------------------------------------------------------------------------
// Individual steps (batched: one instance per row)
// ---------------------------------------------------------------------------

/// Distribution-aware pooling: [mean, population std] over the first seq_len rows of each
/// instance's max_seq-row block. Empty sequences pool to zero. With `with_std == false`
/// the std half is zero.
template <typename T>
Matrix<T> dap_pool(const Matrix<T>& behaviors, const std::vector<Index>& seq_len, Index max_seq,
                   bool with_std = true);

/// Single-sequence form: `behaviors` is max_seq x d.
template <typename T>
RowVector<T> dap_pool(const Matrix<T>& behaviors, Index seq_len);

/// A = sigmoid(W1 LN(ReLU(W0 [features, pooled, scenario] + b0)) + b1).
template <typename T>
Matrix<T> sam_gate(const ParamStore<T>& store, const BlockParams& p, const Matrix<T>& features,
                   const Matrix<T>& pooled, const Matrix<T>& scenario);

/// [features, pooled] * A elementwise.
template <typename T>
Matrix<T> sam_rescale(const Matrix<T>& features, const Matrix<T>& pooled, const Matrix<T>& gate);

/// C = W3 ReLU(W2 X + b2) + b3.
template <typename T>
Matrix<T> rtm_aggregate(const ParamStore<T>& store, const BlockParams& p,
                        const Matrix<T>& rescaled);

/// x_out = ReLU(W1 x + b1) + sigmoid(W2 x + b2) * c for field `field`.
template <typename T>
Matrix<T> rtm_tailor_feature(const ParamStore<T>& store, const BlockParams& p, Index field,
                             const Matrix<T>& x, const Matrix<T>& context_slice);

/// One behavior row: v_out = ReLU(W4 v + b4) + sigmoid(W5 v + b5) * (P c_b + p).
template <typename T>
RowVector<T> rtm_tailor_behavior(const ParamStore<T>& store, const BlockParams& p,
                                 const RowVector<T>& v, const RowVector<T>& seq_context);

/// Batched behavior tailoring; rows at or beyond each instance's seq_len come out zero.
template <typename T>
Matrix<T> rtm_tailor_behaviors(const ParamStore<T>& store, const BlockParams& p,
                               const Matrix<T>& behaviors, const Matrix<T>& seq_context,
                               const std::vector<Index>& seq_len, Index max_seq);

// ---------------------------------------------------------------------------
// Whole block and stack
// ---------------------------------------------------------------------------

template <typename T>
struct BlockState {
    Matrix<T> features;  // B x n*d_in
    Matrix<T> behaviors; // (B*max_seq) x d_in
    std::vector<Index> seq_len;
    Index max_seq = 0;

    Matrix<T> pooled;     // B x 2*d_in
    Matrix<T> concat;     // [features, pooled]
    Matrix<T> gate_input; // [features, pooled, scenario]
    Matrix<T> gate_pre;
    LayerNormCache<T> gate_ln;
    Matrix<T> gate_ln_out;
    Matrix<T> gate;     // A, B x (n+2)*d_in
    Matrix<T> rescaled; // X-hat
    Matrix<T> agg_pre;
    Matrix<T> agg_hidden;
    Matrix<T> context; // C, B x (n+2)*d_out
    std::vector<Matrix<T>> field_pre;
    std::vector<Matrix<T>> field_gate;
    Matrix<T> seq_pre;
    Matrix<T> seq_gate;
    Matrix<T> seq_context; // B x d_out

    Matrix<T> out_features;  // B x n*d_out
    Matrix<T> out_behaviors; // (B*max_seq) x d_out
};

template <typename T>
struct BlockInputGrad {
    Matrix<T> features;
    Matrix<T> behaviors;
    Matrix<T> scenario;
};

template <typename T>
BlockState<T> block_forward(const ParamStore<T>& store, const BlockParams& p,
                            const Matrix<T>& features, const Matrix<T>& behaviors,
                            const std::vector<Index>& seq_len, Index max_seq,
                            const Matrix<T>& scenario);

template <typename T>
BlockInputGrad<T> block_backward(const ParamStore<T>& store, const BlockParams& p,
                                 const BlockState<T>& state, const Matrix<T>& d_features,
                                 const Matrix<T>& d_behaviors, Grads<T>& grads);

template <typename T>
struct StackState {
    std::vector<BlockState<T>> blocks;
    Matrix<T> features;  // final features (the encoding itself when L = 0)
    Matrix<T> behaviors; // final behaviors
};

/// Feeds each block's output into the next; the scenario vector is shared by all blocks.
template <typename T>
StackState<T> stack_forward(const ParamStore<T>& store, const std::vector<BlockParams>& blocks,
                            const EncodedBatch<T>& batch);

template <typename T>
BlockInputGrad<T> stack_backward(const ParamStore<T>& store, const std::vector<BlockParams>& blocks,
                                 const StackState<T>& state, const Matrix<T>& d_features,
                                 const Matrix<T>& d_behaviors, Grads<T>& grads);

} // namespace sfpnet
