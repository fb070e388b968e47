#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfpnet {

/// AUC requested for a set containing only one class.
class UndefinedAucError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

struct ScoredImpression {
    double score = 0.0;
    int label = 0;
    std::string session_id;
    std::int32_t scenario_id = 0;
};

/// ROC-AUC by rank sum with average ranks for ties (a tied pair counts 1/2).
double auc(std::span<const double> scores, std::span<const int> labels);
double auc(std::span<const ScoredImpression> items);

struct SessionAuc {
    std::string session_id;
    std::size_t impressions = 0;
    double auc = 0.0;
};

/// Per-session AUCs of the sessions that contain both classes, ordered by session id.
std::vector<SessionAuc> session_aucs(std::span<const ScoredImpression> items);

/// Impression-weighted mean of per-session AUCs. Single-class sessions are left out of
/// both sums; throws UndefinedAucError when no session is evaluable.
double s_gauc(std::span<const ScoredImpression> items);

struct UTestResult {
    double u = 0.0; // U of sample a: pairs (a_i, b_j) with a_i > b_j, ties counted 1/2
    double z = 0.0;
    double p = 1.0; // two-sided, normal approximation with tie and continuity correction
};

UTestResult mann_whitney_u(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct ScenarioMetrics {
    std::int32_t scenario_id = -1; // -1 for the overall row
    std::optional<double> auc;     // empty when the scenario holds a single class
    std::optional<double> s_gauc;  // empty when no session is evaluable
    std::size_t impressions = 0;
    std::size_t sessions = 0;
};

struct EvalReport {
    std::vector<ScenarioMetrics> scenarios; // ascending scenario id, only ids present
    ScenarioMetrics overall;
    std::optional<double> u_test_p; // vs a second report, when computed

    const ScenarioMetrics* find(std::int32_t scenario_id) const;
};

EvalReport make_report(std::span<const ScoredImpression> items);

/// Columns: scenario_id, auc, s_gauc, impressions, sessions. The overall row uses the id
/// "all"; unavailable metrics print as "NA".
std::string report_csv(const EvalReport& report);
std::string report_table(const EvalReport& report);

/// Fixed-precision rendering used by every CSV in the project.
std::string format_metric(double x);
std::string format_metric(const std::optional<double>& x);

/// Renders rows of cells with right-aligned, space-padded columns.
std::string aligned_table(const std::vector<std::vector<std::string>>& rows);

} // namespace sfpnet
