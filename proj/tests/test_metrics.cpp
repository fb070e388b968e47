#include "sfpnet/metrics.hpp"
#include "sfpnet/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace sfpnet;

namespace {

// Fraction of (positive, negative) pairs ordered correctly, ties counted 1/2.
double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y)
{
    double good = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                pairs += 1.0;
                good += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
            }
    return good / pairs;
}

// One session with n_pos positives and n_neg negatives in which exactly `correct`
// (positive, negative) pairs are ordered correctly, so its AUC is correct / (n_pos * n_neg).
std::vector<ScoredImpression> session_with(const std::string& id, int n_pos, int n_neg,
                                           int correct)
{
    std::vector<ScoredImpression> out;
    for (int j = 0; j < n_neg; ++j)
        out.push_back({static_cast<double>(j) + 0.5, 0, id, 0});
    for (int i = 0; i < n_pos; ++i) {
        const int beats = std::min(correct, n_neg);
        correct -= beats;
        out.push_back({static_cast<double>(beats), 1, id, 0}); // above exactly `beats` negatives
    }
    return out;
}

std::vector<double> scores_of(const std::vector<ScoredImpression>& v)
{
    std::vector<double> s;
    for (const auto& x : v)
        s.push_back(x.score);
    return s;
}

} // namespace

TEST(Auc, WorkedExample)
{
    EXPECT_EQ(auc(std::vector<double>{0.9, 0.8, 0.3}, std::vector<int>{1, 0, 1}), 0.5);
}

TEST(Auc, PerfectAndReversed)
{
    EXPECT_EQ(auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}), 1.0);
    EXPECT_EQ(auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<int>{0, 0, 1, 1}), 0.0);
}

TEST(Auc, AllTiedIsHalf)
{
    EXPECT_EQ(auc(std::vector<double>(7, 0.3), std::vector<int>{1, 0, 0, 1, 0, 1, 1}), 0.5);
}

TEST(Auc, EqualsPairwiseEnumeration)
{
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const auto n = static_cast<std::size_t>(rng.range(2, 120));
        // coarse grid so ties are common
        const auto levels = rng.range(2, 30);
        std::vector<double> s;
        std::vector<int> y;
        for (std::size_t i = 0; i < n; ++i) {
            s.push_back(static_cast<double>(rng.range(0, levels)) / static_cast<double>(levels));
            y.push_back(static_cast<int>(rng.range(0, 1)));
        }
        y[0] = 1;
        y[1] = 0;
        EXPECT_EQ(auc(s, y), pairwise_auc(s, y)) << "trial " << trial;
    }
}

TEST(Auc, InvariantUnderMonotoneTransform)
{
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> s, t;
        std::vector<int> y;
        for (int i = 0; i < 60; ++i) {
            s.push_back(rng.uniform(-3.0, 3.0));
            t.push_back(std::exp(2.0 * s.back()) + 1.0);
            y.push_back(static_cast<int>(rng.range(0, 1)));
        }
        y[0] = 1;
        y[1] = 0;
        EXPECT_EQ(auc(s, y), auc(t, y));
    }
}

TEST(Auc, SingleClassIsUndefined)
{
    EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), UndefinedAucError);
    EXPECT_THROW(auc(std::vector<double>{0.1}, std::vector<int>{1, 0}), std::exception);
}

TEST(SGauc, ImpressionWeightedMean)
{
    // 10 impressions with AUC 15/25 = 0.6 and 30 impressions with AUC 180/225 = 0.8
    auto items = session_with("a", 5, 5, 15);
    const auto b = session_with("b", 15, 15, 180);
    items.insert(items.end(), b.begin(), b.end());

    const auto per = session_aucs(items);
    ASSERT_EQ(per.size(), 2u);
    EXPECT_EQ(per[0].impressions, 10u);
    EXPECT_NEAR(per[0].auc, 0.6, 1e-15);
    EXPECT_EQ(per[1].impressions, 30u);
    EXPECT_NEAR(per[1].auc, 0.8, 1e-15);
    EXPECT_NEAR(s_gauc(items), 0.75, 1e-15);
}

TEST(SGauc, SingleClassSessionsAreSkipped)
{
    auto items = session_with("a", 2, 2, 3);
    items.push_back({0.4, 1, "only_pos", 0});
    items.push_back({0.6, 1, "only_pos", 0});
    items.push_back({0.9, 0, "only_neg", 0});
    EXPECT_EQ(session_aucs(items).size(), 1u);
    EXPECT_EQ(s_gauc(items), 0.75);

    std::vector<ScoredImpression> none{{0.1, 1, "x", 0}, {0.2, 0, "y", 0}};
    EXPECT_THROW(s_gauc(none), UndefinedAucError);
}

TEST(SGauc, BoundedByExtremeSessionsAndDuplicationInvariant)
{
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<ScoredImpression> items;
        const auto n_sessions = rng.range(1, 6);
        for (std::int64_t k = 0; k < n_sessions; ++k) {
            const int pos = static_cast<int>(rng.range(1, 6)), neg = static_cast<int>(rng.range(1, 6));
            const auto s = session_with("s" + std::to_string(k), pos, neg,
                                        static_cast<int>(rng.range(0, pos * neg)));
            items.insert(items.end(), s.begin(), s.end());
        }
        const auto per = session_aucs(items);
        double lo = 1.0, hi = 0.0;
        for (const auto& s : per) {
            lo = std::min(lo, s.auc);
            hi = std::max(hi, s.auc);
        }
        const double g = s_gauc(items);
        EXPECT_GE(g, lo - 1e-15);
        EXPECT_LE(g, hi + 1e-15);

        // duplicating every session (under new ids) leaves the weighted mean unchanged
        auto doubled = items;
        for (auto x : items) {
            x.session_id += "_copy";
            doubled.push_back(x);
        }
        EXPECT_NEAR(s_gauc(doubled), g, 1e-14);
    }
}

TEST(MannWhitney, MatchesReferenceValues)
{
    const auto r = mann_whitney_u(std::vector<double>{1, 2, 3}, std::vector<double>{4, 5, 6});
    EXPECT_EQ(r.u, 0.0);
    EXPECT_NEAR(r.p, 0.0808555983700523, 1e-12);
    // with ties across the samples
    const auto t = mann_whitney_u(std::vector<double>{1, 2, 2, 3, 7}, std::vector<double>{2, 4, 5, 5, 6, 8});
    EXPECT_EQ(t.u, 7.0);
    EXPECT_NEAR(t.p, 0.16601056437093298, 1e-12);
}

TEST(MannWhitney, UCountsPairsAndIsAntisymmetric)
{
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> a, b;
        for (auto k = rng.range(1, 12); k > 0; --k)
            a.push_back(static_cast<double>(rng.range(0, 8)));
        for (auto k = rng.range(1, 12); k > 0; --k)
            b.push_back(static_cast<double>(rng.range(0, 8)));
        double u = 0.0;
        for (double x : a)
            for (double y : b)
                u += x > y ? 1.0 : x == y ? 0.5 : 0.0;
        const auto ab = mann_whitney_u(a, b), ba = mann_whitney_u(b, a);
        EXPECT_EQ(ab.u, u);
        EXPECT_EQ(ab.u + ba.u, static_cast<double>(a.size() * b.size()));
        EXPECT_NEAR(ab.p, ba.p, 1e-15);
        EXPECT_NEAR(ab.z, -ba.z, 1e-15);
        EXPECT_GE(ab.p, 0.0);
        EXPECT_LE(ab.p, 1.0);
    }
}

TEST(MannWhitney, IdenticalSamplesGiveNoEvidence)
{
    const auto r = mann_whitney_u(std::vector<double>{1, 1, 1}, std::vector<double>{1, 1});
    EXPECT_EQ(r.p, 1.0);
    EXPECT_THROW(mann_whitney_u(std::vector<double>{}, std::vector<double>{1.0}), std::invalid_argument);
}

TEST(Report, RowsPerScenarioAndOverall)
{
    std::vector<ScoredImpression> items{
        {0.9, 1, "a", 0}, {0.1, 0, "a", 0}, {0.4, 1, "b", 2}, {0.6, 0, "b", 2}, {0.5, 1, "c", 3}};
    const auto r = make_report(items);
    ASSERT_EQ(r.scenarios.size(), 3u);
    EXPECT_EQ(r.scenarios[0].scenario_id, 0);
    EXPECT_EQ(*r.scenarios[0].auc, 1.0);
    EXPECT_EQ(*r.scenarios[1].auc, 0.0);
    EXPECT_FALSE(r.scenarios[2].auc.has_value());
    EXPECT_FALSE(r.scenarios[2].s_gauc.has_value());
    EXPECT_EQ(r.overall.impressions, 5u);
    EXPECT_EQ(r.overall.sessions, 3u);
    EXPECT_EQ(*r.overall.auc, auc(scores_of(items), std::vector<int>{1, 0, 1, 0, 1}));
    EXPECT_EQ(r.find(2), &r.scenarios[1]);
    EXPECT_EQ(r.find(1), nullptr);

    const std::string csv = report_csv(r);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "scenario_id,auc,s_gauc,impressions,sessions");
    EXPECT_NE(csv.find("\n3,NA,NA,1,1\n"), std::string::npos) << csv;
    EXPECT_NE(csv.find("\nall,"), std::string::npos) << csv;
    EXPECT_NE(csv.find("\n0,1.000000,1.000000,2,1\n"), std::string::npos) << csv;
}

TEST(Report, AlignedTablePadsColumns)
{
    const std::string t = aligned_table({{"a", "bbb"}, {"cccc", "d"}});
    EXPECT_EQ(t, "   a  bbb\ncccc    d\n");
}
