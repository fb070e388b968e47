#include "sfpnet/experiments.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace sfpnet {

ExperimentConfig ExperimentConfig::defaults()
{
    ExperimentConfig c;
    c.train.epochs = 2;
    c.train.seed = default_seed();
    c.seeds.clear();
    for (std::uint64_t k = 0; k < 5; ++k)
        c.seeds.push_back(c.train.seed + k);
    return c;
}

double mean(const std::vector<double>& v)
{
    if (v.empty())
        return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v)
{
    if (v.size() < 2)
        return 0.0;
    const double m = mean(v);
    double s = 0.0;
    for (double x : v)
        s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

namespace {

double overall_auc(const RunRecord& r)
{
    if (!r.report.overall.auc)
        throw std::runtime_error("run produced no overall AUC (single-class test set)");
    return *r.report.overall.auc;
}

double overall_s_gauc(const RunRecord& r)
{
    return r.report.overall.s_gauc.value_or(std::nan(""));
}

std::string csv_line(const std::vector<std::string>& cells)
{
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i)
        out += (i ? "," : "") + cells[i];
    return out + "\n";
}

} // namespace

// ---------------------------------------------------------------------------

const VariantSummary& AblationResult::get(const std::string& variant) const
{
    for (const auto& v : variants)
        if (v.variant == variant)
            return v;
    throw std::out_of_range("no ablation variant '" + variant + "'");
}

AblationResult run_ablation_grid(const Dataset& data, const ExperimentConfig& cfg,
                                 const std::vector<std::string>& variants,
                                 const RunObserver& observer)
{
    if (cfg.seeds.empty())
        throw std::invalid_argument("ablation grid needs at least one seed");
    AblationResult out;
    for (const auto& name : variants) {
        VariantSummary s;
        s.variant = name;
        const ModelConfig mc = apply_variant(cfg.model, name);
        for (auto seed : cfg.seeds) {
            TrainConfig tc = cfg.train;
            tc.seed = seed;
            RunRecord r = run_training(mc, tc, data);
            r.label = name + "/seed" + std::to_string(seed);
            s.param_count = r.param_count;
            s.auc.push_back(overall_auc(r));
            s.s_gauc.push_back(overall_s_gauc(r));
            s.wall_seconds += r.wall_seconds;
            if (observer)
                observer(r);
            out.runs.push_back(std::move(r));
        }
        out.variants.push_back(std::move(s));
    }
    return out;
}

std::string ablation_csv(const AblationResult& r)
{
    std::string out = csv_line({"variant", "params", "seeds", "auc_mean", "auc_std",
                                "s_gauc_mean", "s_gauc_std", "wall_s"});
    for (const auto& v : r.variants)
        out += csv_line({v.variant, std::to_string(v.param_count), std::to_string(v.auc.size()),
                         format_metric(mean(v.auc)), format_metric(sample_std(v.auc)),
                         format_metric(mean(v.s_gauc)), format_metric(sample_std(v.s_gauc)),
                         format_metric(v.wall_seconds)});
    return out;
}

std::string ablation_table(const AblationResult& r)
{
    return csv_to_table(ablation_csv(r));
}

// ---------------------------------------------------------------------------

const JointSeparateRow& JointSeparateResult::get(std::int32_t scenario) const
{
    for (const auto& row : rows)
        if (row.scenario_id == scenario)
            return row;
    throw std::out_of_range("no scenario " + std::to_string(scenario));
}

JointSeparateResult run_joint_vs_separate(const Dataset& data, const ExperimentConfig& cfg,
                                          const RunObserver& observer)
{
    if (cfg.seeds.empty())
        throw std::invalid_argument("joint-vs-separate needs at least one seed");
    JointSeparateResult out;
    std::vector<std::vector<Instance>> test_by(static_cast<std::size_t>(data.schema.n_scenarios));
    for (std::int32_t m = 0; m < data.schema.n_scenarios; ++m) {
        JointSeparateRow row;
        row.scenario_id = m;
        for (const auto& inst : data.train)
            row.train_impressions += inst.scenario_id == m;
        test_by[static_cast<std::size_t>(m)] = filter_scenario(data.test, m);
        if (row.train_impressions == 0 || test_by[static_cast<std::size_t>(m)].empty())
            throw std::invalid_argument("scenario " + std::to_string(m) +
                                        " has no train or test impressions");
        out.rows.push_back(row);
    }

    auto scenario_auc = [](const RunRecord& r, std::int32_t m) {
        const auto* s = r.report.find(m);
        if (!s || !s->auc)
            throw std::runtime_error("scenario " + std::to_string(m) + " test set is single-class");
        return *s->auc;
    };

    for (auto seed : cfg.seeds) {
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        tc.scenario_filter = -1;
        RunRecord joint = run_training(cfg.model, tc, data);
        joint.label = "joint/seed" + std::to_string(seed);
        for (auto& row : out.rows)
            row.joint_auc.push_back(scenario_auc(joint, row.scenario_id));
        if (observer)
            observer(joint);
        for (auto& row : out.rows) {
            TrainConfig sc = tc;
            sc.scenario_filter = row.scenario_id;
            RunRecord sep = run_training(cfg.model, sc, data, "",
                                         &test_by[static_cast<std::size_t>(row.scenario_id)]);
            sep.label = "separate" + std::to_string(row.scenario_id) + "/seed" + std::to_string(seed);
            row.separate_auc.push_back(scenario_auc(sep, row.scenario_id));
            if (observer)
                observer(sep);
        }
    }
    for (auto& row : out.rows)
        row.p_value = mann_whitney_u(row.joint_auc, row.separate_auc).p;
    return out;
}

std::string joint_separate_csv(const JointSeparateResult& r)
{
    std::string out = csv_line(
        {"scenario_id", "train_impressions", "joint_auc", "separate_auc", "delta", "p_value"});
    std::vector<double> deltas;
    std::size_t total = 0;
    for (const auto& row : r.rows) {
        const double delta = mean(row.joint_auc) - mean(row.separate_auc);
        deltas.push_back(delta);
        total += row.train_impressions;
        out += csv_line({std::to_string(row.scenario_id), std::to_string(row.train_impressions),
                         format_metric(mean(row.joint_auc)), format_metric(mean(row.separate_auc)),
                         format_metric(delta), format_metric(row.p_value)});
    }
    std::vector<double> joint_means, sep_means;
    for (const auto& row : r.rows) {
        joint_means.push_back(mean(row.joint_auc));
        sep_means.push_back(mean(row.separate_auc));
    }
    out += csv_line({"all", std::to_string(total), format_metric(mean(joint_means)),
                     format_metric(mean(sep_means)), format_metric(mean(deltas)), "NA"});
    return out;
}

std::string joint_separate_table(const JointSeparateResult& r)
{
    return csv_to_table(joint_separate_csv(r));
}

// ---------------------------------------------------------------------------

std::vector<SweepRow> run_l_sweep(const Dataset& data, const ExperimentConfig& cfg,
                                  const std::vector<int>& values, const RunObserver& observer)
{
    if (values.empty())
        throw std::invalid_argument("sweep needs at least one value of L");
    std::vector<SweepRow> rows;
    for (int L : values) {
        if (L < 0)
            throw std::invalid_argument("L must be >= 0, got " + std::to_string(L));
        SweepRow row;
        row.L = L;
        ModelConfig mc = cfg.model;
        mc.L = L;
        mc.block_dims.clear();
        for (auto seed : cfg.seeds) {
            TrainConfig tc = cfg.train;
            tc.seed = seed;
            RunRecord r = run_training(mc, tc, data);
            r.label = "L" + std::to_string(L) + "/seed" + std::to_string(seed);
            row.auc.push_back(overall_auc(r));
            row.s_gauc.push_back(overall_s_gauc(r));
            row.wall_seconds += r.wall_seconds;
            if (observer)
                observer(r);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows)
{
    std::string out = csv_line({"L", "seeds", "auc_mean", "auc_std", "s_gauc_mean", "wall_s"});
    for (const auto& r : rows)
        out += csv_line({std::to_string(r.L), std::to_string(r.auc.size()),
                         format_metric(mean(r.auc)), format_metric(sample_std(r.auc)),
                         format_metric(mean(r.s_gauc)), format_metric(r.wall_seconds)});
    return out;
}

std::string sweep_table(const std::vector<SweepRow>& rows)
{
    return csv_to_table(sweep_csv(rows));
}

std::string csv_to_table(const std::string& csv)
{
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(csv);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ','))
            cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return aligned_table(rows);
}

} // namespace sfpnet
