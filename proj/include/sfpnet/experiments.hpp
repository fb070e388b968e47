#pragma once

// Experiment drivers: ablation grid, joint-vs-separate training, and the block-count sweep.

#include "sfpnet/trainer.hpp"

#include <functional>
#include <string>
#include <vector>

namespace sfpnet {

struct ExperimentConfig {
    ModelConfig model;
    TrainConfig train;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

    /// Model/train defaults used by the experiment commands (full-size model, 2 epochs); seeds
    /// are default_seed() .. default_seed() + 4.
    static ExperimentConfig defaults();
};

/// Progress callback, called after every finished run.
using RunObserver = std::function<void(const RunRecord&)>;

struct VariantSummary {
    std::string variant;
    std::size_t param_count = 0;
    std::vector<double> auc;    // per seed, overall test AUC
    std::vector<double> s_gauc; // per seed, overall test S-GAUC
    double wall_seconds = 0.0;  // summed over seeds
};

double mean(const std::vector<double>& v);
double sample_std(const std::vector<double>& v);

struct AblationResult {
    std::vector<VariantSummary> variants; // in ablation_variants() order
    std::vector<RunRecord> runs;

    const VariantSummary& get(const std::string& variant) const;
};

AblationResult run_ablation_grid(const Dataset& data, const ExperimentConfig& cfg,
                                 const std::vector<std::string>& variants = ablation_variants(),
                                 const RunObserver& observer = {});

/// Columns: variant, params, seeds, auc_mean, auc_std, s_gauc_mean, s_gauc_std, wall_s.
std::string ablation_csv(const AblationResult& r);
std::string ablation_table(const AblationResult& r);

struct JointSeparateRow {
    std::int32_t scenario_id = 0;
    std::size_t train_impressions = 0;
    std::vector<double> joint_auc;    // per seed
    std::vector<double> separate_auc; // per seed
    double p_value = 1.0;             // Mann-Whitney, joint vs separate over seeds
};

struct JointSeparateResult {
    std::vector<JointSeparateRow> rows;

    const JointSeparateRow& get(std::int32_t scenario) const;
};

/// For every seed: one model on all scenarios and one model per scenario trained on that
/// scenario alone (same epochs), each scored on the scenario's test rows.
JointSeparateResult run_joint_vs_separate(const Dataset& data, const ExperimentConfig& cfg,
                                          const RunObserver& observer = {});

/// Columns: scenario_id, train_impressions, joint_auc, separate_auc, delta, p_value; the
/// last row ("all") averages the per-scenario deltas.
std::string joint_separate_csv(const JointSeparateResult& r);
std::string joint_separate_table(const JointSeparateResult& r);

struct SweepRow {
    int L = 0;
    std::vector<double> auc;
    std::vector<double> s_gauc;
    double wall_seconds = 0.0;
};

std::vector<SweepRow> run_l_sweep(const Dataset& data, const ExperimentConfig& cfg,
                                  const std::vector<int>& values, const RunObserver& observer = {});

/// Columns: L, seeds, auc_mean, auc_std, s_gauc_mean, wall_s.
std::string sweep_csv(const std::vector<SweepRow>& rows);
std::string sweep_table(const std::vector<SweepRow>& rows);

/// Renders CSV text as an aligned table.
std::string csv_to_table(const std::string& csv);

} // namespace sfpnet
