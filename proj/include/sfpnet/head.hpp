#pragma once

// Prediction head: target attention over the tailored behaviors, then a scenario-aware
// tower (each hidden layer rescaled by a scenario-conditioned gate) ending in one logit.

#include "sfpnet/numerics.hpp"

#include <span>
#include <string>
#include <vector>

namespace sfpnet {

// ---------------------------------------------------------------------------
// Target attention
// ---------------------------------------------------------------------------

struct AttentionShape {
    Index dim = 1;        // d_L, width of behaviors and of the projected target
    Index target_dim = 1; // width of the encoded target; projected when != dim
    Index hidden = 16;
    bool softmax = false; // normalize scores over the valid behaviors
};

struct AttentionParams {
    AttentionShape shape;
    ParamId w1, b1, w2, b2;
    ParamId target_proj; // dim x target_dim, absent when target_dim == dim
};

template <typename T>
AttentionParams register_attention(ParamStore<T>& store, const std::string& prefix,
                                   AttentionShape shape, std::uint64_t seed);

template <typename T>
struct AttentionState {
    Matrix<T> behaviors;    // (B*max_seq) x dim
    Matrix<T> target_embed; // B x target_dim
    std::vector<Index> seq_len;
    Index max_seq = 0;

    Matrix<T> target;  // B x dim
    Matrix<T> inter;   // (B*max_seq) x 4*dim: [v, t, v - t, v * t]
    Matrix<T> pre;     // scorer hidden pre-activation
    Matrix<T> hidden;  // after ReLU
    Matrix<T> scores;  // (B*max_seq) x 1, raw scorer output
    Matrix<T> weights; // scores after masking (and softmax when enabled); padding rows 0
    Matrix<T> pooled;  // V, B x dim
};

template <typename T>
AttentionState<T> din_forward(const ParamStore<T>& store, const AttentionParams& p,
                              const Matrix<T>& behaviors, const std::vector<Index>& seq_len,
                              Index max_seq, const Matrix<T>& target_embed);

/// V = sum over valid behaviors of score_i * v_i; empty sequences give V = 0.
template <typename T>
Matrix<T> din_attention(const ParamStore<T>& store, const AttentionParams& p,
                        const Matrix<T>& behaviors, const std::vector<Index>& seq_len,
                        Index max_seq, const Matrix<T>& target_embed);

template <typename T>
struct AttentionInputGrad {
    Matrix<T> behaviors;
    Matrix<T> target_embed;
};

template <typename T>
AttentionInputGrad<T> din_backward(const ParamStore<T>& store, const AttentionParams& p,
                                   const AttentionState<T>& state, const Matrix<T>& d_pooled,
                                   Grads<T>& grads);

// ---------------------------------------------------------------------------
// Scenario-aware tower
// ---------------------------------------------------------------------------

struct TowerShape {
    Index input_width = 1;
    Index scenario_dim = 1;
    std::vector<Index> hidden;
    std::vector<Index> gate_hidden; // per layer; empty or 0 -> width of the layer input
    bool no_sdnn = false;           // plain ReLU layers, no scenario gate
};

struct SdnnLayerParams {
    Index in = 0;
    Index out = 0;
    ParamId w6, b6, ln_gain, ln_bias, w7, b7; // gate (absent under no_sdnn)
    ParamId w8, b8;
};

struct TowerParams {
    std::string prefix;
    TowerShape shape;
    std::vector<SdnnLayerParams> layers;
    ParamId out_w, out_b; // last linear row to the logit
};

/// Layers are named "<prefix><j>/..." and the logit row "out/w", "out/b".
template <typename T>
TowerParams register_tower(ParamStore<T>& store, const std::string& prefix, TowerShape shape,
                           std::uint64_t seed);

template <typename T>
struct SdnnLayerState {
    Matrix<T> input;
    Matrix<T> gate_input;
    Matrix<T> gate_pre;
    LayerNormCache<T> gate_ln;
    Matrix<T> gate_ln_out;
    Matrix<T> gate; // A_p, empty under no_sdnn
    Matrix<T> gated;
    Matrix<T> pre;
    Matrix<T> out;
};

/// H' = ReLU(W8 (H * A_p) + b8) with A_p = sigmoid(W7 LN(ReLU(W6 [H, s] + b6)) + b7).
template <typename T>
Matrix<T> sdnn_layer(const ParamStore<T>& store, const SdnnLayerParams& layer, bool no_sdnn,
                     const Matrix<T>& h, const Matrix<T>& scenario,
                     SdnnLayerState<T>* state = nullptr);

template <typename T>
struct TowerState {
    std::vector<SdnnLayerState<T>> layers;
    Matrix<T> last;   // output of the last hidden layer (the input when there are none)
    Matrix<T> logits; // B x 1
};

template <typename T>
TowerState<T> tower_forward(const ParamStore<T>& store, const TowerParams& p,
                            const Matrix<T>& input, const Matrix<T>& scenario);

template <typename T>
struct TowerInputGrad {
    Matrix<T> input;
    Matrix<T> scenario;
};

template <typename T>
TowerInputGrad<T> tower_backward(const ParamStore<T>& store, const TowerParams& p,
                                 const TowerState<T>& state, const Matrix<T>& d_logits,
                                 Grads<T>& grads);

// ---------------------------------------------------------------------------
// Whole head: H1 = [flatten(features), V]
// ---------------------------------------------------------------------------

struct HeadParams {
    AttentionParams attention;
    TowerParams tower;
    Index n_fields = 1;
};

struct HeadShape {
    Index n_fields = 1;
    Index dim = 1;          // d_L
    Index embed_dim = 1;    // d (scenario and encoded target width)
    Index att_hidden = 16;
    bool att_softmax = false;
    std::vector<Index> sdnn_hidden{256, 128, 64};
    bool no_sdnn = false;
};

template <typename T>
HeadParams register_head(ParamStore<T>& store, const HeadShape& shape, std::uint64_t seed);

template <typename T>
struct HeadState {
    AttentionState<T> attention;
    Matrix<T> h1;
    TowerState<T> tower;
};

template <typename T>
HeadState<T> head_forward(const ParamStore<T>& store, const HeadParams& p,
                          const Matrix<T>& features, const Matrix<T>& behaviors,
                          const std::vector<Index>& seq_len, Index max_seq,
                          const Matrix<T>& target_embed, const Matrix<T>& scenario);

template <typename T>
struct HeadInputGrad {
    Matrix<T> features;
    Matrix<T> behaviors;
    Matrix<T> target_embed;
    Matrix<T> scenario;
};

template <typename T>
HeadInputGrad<T> head_backward(const ParamStore<T>& store, const HeadParams& p,
                               const HeadState<T>& state, const Matrix<T>& d_logits,
                               Grads<T>& grads);

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

inline constexpr double kProbClamp = 1e-12;

/// Mean binary cross-entropy with predictions clamped to [1e-12, 1 - 1e-12].
double bce_loss(std::span<const double> preds, std::span<const int> labels);

/// Loss accumulation type: at least double.
template <typename T>
using LossScalar = std::common_type_t<T, double>;

template <typename T>
LossScalar<T> bce_loss(const Matrix<T>& probs, std::span<const int> labels);

/// d loss / d logit = (p - y) / N for the mean BCE over a batch of sigmoid outputs.
template <typename T>
Matrix<T> bce_logit_grad(const Matrix<T>& probs, std::span<const int> labels);

} // namespace sfpnet
