#pragma once

#include "sfpnet/config.hpp"
#include "sfpnet/encoding.hpp"
#include "sfpnet/head.hpp"
#include "sfpnet/stb.hpp"

#include <span>
#include <string>
#include <vector>

namespace sfpnet {

enum class ModelKind { sfpnet, basednn };

struct AblationFlags {
    bool no_dap = false;
    bool no_sam = false;
    bool no_rtm = false;
    bool no_sdnn = false;
    bool no_stb = false;

    friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct ModelConfig {
    ModelKind kind = ModelKind::sfpnet;
    int L = 3;
    Index d = 40;
    std::vector<Index> block_dims; // d_l per block; empty -> d for every block
    Index gate_hidden = 0;         // 0 -> (n + 2) * d_{l-1}
    Index agg_hidden = 0;          // 0 -> (n + 2) * d_{l-1}
    std::vector<Index> sdnn_hidden{256, 128, 64};
    Index att_hidden = 16;
    bool att_softmax = false;
    AblationFlags flags;

    /// Number of blocks actually built (0 under no_stb).
    int effective_blocks() const { return flags.no_stb ? 0 : L; }
    Index block_dim(int l) const;

    static ModelConfig from_config(const KeyValueConfig& cfg);
    std::vector<std::pair<std::string, std::string>> to_pairs() const;
    std::string to_text() const { return to_config_text(to_pairs()); }
};

/// Variant names of the ablation grid, in report order.
const std::vector<std::string>& ablation_variants();

/// `base` with the flags of `variant` ("full", "no_dap", "no_sam", "no_rtm", "no_sdnn",
/// "no_stb") applied.
ModelConfig apply_variant(ModelConfig base, const std::string& variant);

template <typename T>
class Model {
public:
    /// Builds and initializes every parameter from `seed`. Throws ConfigError on an
    /// inconsistent configuration.
    static Model build(const ModelConfig& cfg, const FeatureSchema& schema, std::uint64_t seed);

    /// Rebuilds a model from a checkpoint written by save().
    static Model from_checkpoint(const CheckpointData& ckpt);

    const ModelConfig& config() const { return cfg_; }
    const FeatureSchema& schema() const { return tables_.schema(); }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    std::size_t param_count() const { return params_.scalar_count(); }
    const std::vector<BlockParams>& blocks() const { return blocks_; }
    const EmbeddingTables<T>& tables() const { return tables_; }

    /// Logits for a batch, one per instance.
    Matrix<T> logits(const ParamStore<T>& params, std::span<const Instance* const> batch) const;

    /// Mean BCE of the batch under `params`; when `grads` is given the gradient of that
    /// loss is accumulated into it.
    double loss(const ParamStore<T>& params, std::span<const Instance* const> batch,
                Grads<T>* grads) const
    {
        return static_cast<double>(evaluate(params, batch, grads));
    }

    /// Forward-only loss kept in the model's own precision.
    LossScalar<T> objective(const ParamStore<T>& params, std::span<const Instance* const> batch) const
    {
        return evaluate(params, batch, nullptr);
    }

    /// Click probabilities for every instance (inference in fixed-size chunks).
    std::vector<double> predict(const std::vector<Instance>& data) const;

    void save(const std::string& path, const std::map<std::string, std::string>& extra = {}) const;

private:
    LossScalar<T> evaluate(const ParamStore<T>& params, std::span<const Instance* const> batch,
                           Grads<T>* grads) const;

    ModelConfig cfg_;
    ParamStore<T> params_;
    EmbeddingTables<T> tables_;
    std::vector<BlockParams> blocks_;
    HeadParams head_;   // sfpnet
    TowerParams mlp_;   // basednn
};

std::map<std::string, std::string> schema_meta(const FeatureSchema& schema);
FeatureSchema schema_from_meta(const std::map<std::string, std::string>& meta);

} // namespace sfpnet
