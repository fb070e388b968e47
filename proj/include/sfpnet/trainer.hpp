#pragma once

#include "sfpnet/data.hpp"
#include "sfpnet/metrics.hpp"
#include "sfpnet/model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace sfpnet {

enum class Precision { f32, f64 };

struct TrainConfig {
    double lr = 1e-3;
    double lr_decay = 0.9; // multiplied into lr after every epoch
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int batch_size = 512;
    int epochs = 5;
    std::uint64_t seed = 1;
    Precision precision = Precision::f32;
    int scenario_filter = -1; // >= 0: train only on this scenario's rows

    void validate() const;
    static TrainConfig from_config(const KeyValueConfig& cfg);
    std::vector<std::pair<std::string, std::string>> to_pairs() const;
    std::string to_text() const { return to_config_text(to_pairs()); }
};

/// Default seed, overridable through the SFPNET_SEED environment variable.
std::uint64_t default_seed();

struct TrainLog {
    std::vector<double> epoch_loss; // mean batch loss per epoch
    std::int64_t steps = 0;
    std::vector<std::int64_t> first_batch; // timestamps of the first batch, for seed audits
};

/// Mini-batch BCE + Adam with a seeded per-epoch shuffle. Throws NumericError on a
/// non-finite loss, naming the epoch, batch and gradient norm.
template <typename T>
TrainLog train(Model<T>& model, const std::vector<Instance>& data, const TrainConfig& cfg);

template <typename T>
EvalReport evaluate(const Model<T>& model, const std::vector<Instance>& test);

struct RunRecord {
    std::string label;
    ModelConfig model_config;
    TrainConfig train_config;
    std::size_t param_count = 0;
    TrainLog log;
    EvalReport report;
    double wall_seconds = 0.0;
    std::string checkpoint; // empty when not saved
};

/// Builds a model from (model_cfg, train_cfg.seed), trains on `data.train` (filtered when
/// train_cfg.scenario_filter >= 0), evaluates on `test` (all of data.test when empty),
/// and optionally saves a checkpoint.
RunRecord run_training(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                       const Dataset& data, const std::string& checkpoint_path = "",
                       const std::vector<Instance>* test = nullptr);

/// Scores `test` with a checkpointed model.
EvalReport evaluate_checkpoint(const std::string& path, const std::vector<Instance>& test);

/// Per-epoch loss CSV: epoch,loss.
std::string loss_csv(const TrainLog& log);

} // namespace sfpnet
