#include "sfpnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

namespace sfpnet {

namespace {

/// Twice the Mann-Whitney statistic of the positives (2 * wins + ties), exact in integers.
std::int64_t doubled_u(std::span<const double> scores, std::span<const int> labels,
                       std::int64_t& n_pos, std::int64_t& n_neg)
{
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    n_pos = 0;
    std::int64_t rank_sum2 = 0; // sum of doubled average ranks of positives
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]])
            ++j;
        // ranks i+1 .. j share the doubled average rank i + 1 + j
        const auto avg2 = static_cast<std::int64_t>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]]) {
                ++n_pos;
                rank_sum2 += avg2;
            }
        i = j;
    }
    n_neg = static_cast<std::int64_t>(n) - n_pos;
    return rank_sum2 - n_pos * (n_pos + 1);
}

} // namespace

double auc(std::span<const double> scores, std::span<const int> labels)
{
    if (scores.size() != labels.size())
        throw std::invalid_argument("auc: scores and labels differ in length");
    for (double s : scores)
        if (std::isnan(s))
            throw std::invalid_argument("auc: NaN score");
    std::int64_t p = 0, n = 0;
    const std::int64_t u2 = doubled_u(scores, labels, p, n);
    if (p == 0 || n == 0)
        throw UndefinedAucError("auc: needs at least one positive and one negative (got " +
                                std::to_string(p) + " positive, " + std::to_string(n) +
                                " negative)");
    return static_cast<double>(u2) / static_cast<double>(2 * p * n);
}

double auc(std::span<const ScoredImpression> items)
{
    std::vector<double> s;
    std::vector<int> l;
    s.reserve(items.size());
    l.reserve(items.size());
    for (const auto& it : items) {
        s.push_back(it.score);
        l.push_back(it.label);
    }
    return auc(s, l);
}

std::vector<SessionAuc> session_aucs(std::span<const ScoredImpression> items)
{
    std::map<std::string, std::pair<std::vector<double>, std::vector<int>>> groups;
    for (const auto& it : items) {
        auto& g = groups[it.session_id];
        g.first.push_back(it.score);
        g.second.push_back(it.label);
    }
    std::vector<SessionAuc> out;
    for (const auto& [id, g] : groups) {
        const auto pos = std::count(g.second.begin(), g.second.end(), 1);
        if (pos == 0 || pos == static_cast<std::ptrdiff_t>(g.second.size()))
            continue;
        out.push_back({id, g.first.size(), auc(g.first, g.second)});
    }
    return out;
}

double s_gauc(std::span<const ScoredImpression> items)
{
    if (items.empty())
        throw std::invalid_argument("s_gauc: no impressions");
    const auto sessions = session_aucs(items);
    if (sessions.empty())
        throw UndefinedAucError("s_gauc: no session contains both classes");
    double num = 0.0, den = 0.0;
    for (const auto& s : sessions) {
        num += static_cast<double>(s.impressions) * s.auc;
        den += static_cast<double>(s.impressions);
    }
    return num / den;
}

UTestResult mann_whitney_u(std::span<const double> a, std::span<const double> b)
{
    if (a.empty() || b.empty())
        throw std::invalid_argument("mann_whitney_u: both samples must be nonempty");
    std::vector<double> pooled(a.begin(), a.end());
    pooled.insert(pooled.end(), b.begin(), b.end());
    std::vector<int> from_a(pooled.size(), 0);
    std::fill(from_a.begin(), from_a.begin() + static_cast<std::ptrdiff_t>(a.size()), 1);

    std::int64_t na = 0, nb = 0;
    const std::int64_t u2 = doubled_u(pooled, from_a, na, nb);

    // tie term sum(t^3 - t) over groups of equal values
    std::vector<double> sorted = pooled;
    std::sort(sorted.begin(), sorted.end());
    double ties = 0.0;
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i])
            ++j;
        const double t = static_cast<double>(j - i);
        ties += t * t * t - t;
        i = j;
    }

    UTestResult r;
    r.u = static_cast<double>(u2) / 2.0;
    const double n1 = static_cast<double>(na), n2 = static_cast<double>(nb);
    const double n = n1 + n2;
    const double mean = n1 * n2 / 2.0;
    const double var = n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    if (!(var > 0.0)) {
        r.z = 0.0;
        r.p = 1.0;
        return r;
    }
    const double dev = std::max(std::abs(r.u - mean) - 0.5, 0.0);
    r.z = (r.u >= mean ? dev : -dev) / std::sqrt(var);
    r.p = std::min(1.0, std::erfc(std::abs(r.z) / std::sqrt(2.0)));
    return r;
}

// ---------------------------------------------------------------------------

const ScenarioMetrics* EvalReport::find(std::int32_t scenario_id) const
{
    for (const auto& s : scenarios)
        if (s.scenario_id == scenario_id)
            return &s;
    return nullptr;
}

namespace {

ScenarioMetrics summarize(std::int32_t id, std::span<const ScoredImpression> items)
{
    ScenarioMetrics m;
    m.scenario_id = id;
    m.impressions = items.size();
    std::vector<std::string_view> ids;
    for (const auto& it : items)
        ids.push_back(it.session_id);
    std::sort(ids.begin(), ids.end());
    m.sessions = static_cast<std::size_t>(std::unique(ids.begin(), ids.end()) - ids.begin());
    try {
        m.auc = auc(items);
    } catch (const UndefinedAucError&) {
    }
    try {
        m.s_gauc = s_gauc(items);
    } catch (const UndefinedAucError&) {
    }
    return m;
}

} // namespace

EvalReport make_report(std::span<const ScoredImpression> items)
{
    std::map<std::int32_t, std::vector<ScoredImpression>> by_scenario;
    for (const auto& it : items)
        by_scenario[it.scenario_id].push_back(it);
    EvalReport r;
    for (const auto& [id, group] : by_scenario)
        r.scenarios.push_back(summarize(id, group));
    r.overall = summarize(-1, items);
    return r;
}

std::string format_metric(double x)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", x);
    return buf;
}

std::string format_metric(const std::optional<double>& x)
{
    return x ? format_metric(*x) : "NA";
}

namespace {

std::vector<std::vector<std::string>> report_rows(const EvalReport& r)
{
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"scenario_id", "auc", "s_gauc", "impressions", "sessions"});
    auto add = [&](const ScenarioMetrics& m) {
        rows.push_back({m.scenario_id < 0 ? "all" : std::to_string(m.scenario_id),
                        format_metric(m.auc), format_metric(m.s_gauc),
                        std::to_string(m.impressions), std::to_string(m.sessions)});
    };
    for (const auto& m : r.scenarios)
        add(m);
    add(r.overall);
    return rows;
}

} // namespace

std::string report_csv(const EvalReport& report)
{
    std::ostringstream os;
    for (const auto& row : report_rows(report)) {
        for (std::size_t i = 0; i < row.size(); ++i)
            os << (i ? "," : "") << row[i];
        os << '\n';
    }
    return os.str();
}

std::string report_table(const EvalReport& report)
{
    std::string out = aligned_table(report_rows(report));
    if (report.u_test_p)
        out += "mann-whitney p = " + format_metric(*report.u_test_p) + "\n";
    return out;
}

std::string aligned_table(const std::vector<std::vector<std::string>>& rows)
{
    std::vector<std::size_t> width;
    for (const auto& row : rows) {
        if (width.size() < row.size())
            width.resize(row.size(), 0);
        for (std::size_t i = 0; i < row.size(); ++i)
            width[i] = std::max(width[i], row[i].size());
    }
    std::ostringstream os;
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i)
                os << "  ";
            os << std::string(width[i] - row[i].size(), ' ') << row[i];
        }
        os << '\n';
    }
    return os.str();
}

} // namespace sfpnet
