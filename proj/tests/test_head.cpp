#include "sfpnet/head.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace sfpnet;
using sfpnet::test::random_matrix;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Seqs {
    Matrix<double> behaviors;
    std::vector<Index> seq_len;
    Index max_seq = 0;
};

Seqs random_seqs(Rng& rng, Index B, Index max_seq, Index d, Index min_len = 0)
{
    Seqs s;
    s.max_seq = max_seq;
    s.behaviors = Matrix<double>::Zero(B * max_seq, d);
    for (Index k = 0; k < B; ++k) {
        const Index len = rng.range(min_len, max_seq);
        s.seq_len.push_back(len);
        if (len > 0)
            s.behaviors.middleRows(k * max_seq, len) = random_matrix(rng, len, d);
    }
    return s;
}

// Scorer output for one behavior, spelled out with loops.
double score_oracle(const ParamStore<double>& store, const AttentionParams& p,
                    const RowVector<double>& v, const RowVector<double>& t)
{
    const Index d = v.size();
    std::vector<double> u;
    for (Index i = 0; i < d; ++i)
        u.push_back(v(i));
    for (Index i = 0; i < d; ++i)
        u.push_back(t(i));
    for (Index i = 0; i < d; ++i)
        u.push_back(v(i) - t(i));
    for (Index i = 0; i < d; ++i)
        u.push_back(v(i) * t(i));
    const auto &w1 = store.value(p.w1), &b1 = store.value(p.b1), &w2 = store.value(p.w2);
    double s = store.value(p.b2)(0, 0);
    for (Index h = 0; h < w1.rows(); ++h) {
        double a = b1(0, h);
        for (Index j = 0; j < 4 * d; ++j)
            a += w1(h, j) * u[static_cast<std::size_t>(j)];
        s += w2(0, h) * std::max(a, 0.0);
    }
    return s;
}

AttentionParams make_attention(ParamStore<double>& store, Index d, Index td, bool softmax,
                               std::uint64_t seed = 4)
{
    AttentionShape s;
    s.dim = d;
    s.target_dim = td;
    s.hidden = 5;
    s.softmax = softmax;
    return register_attention(store, "din", s, seed);
}

} // namespace

// ---------------------------------------------------------------------------
// Target attention
// ---------------------------------------------------------------------------

TEST(Attention, MatchesScalarOracle)
{
    for (bool softmax : {false, true}) {
        ParamStore<double> store;
        const auto p = make_attention(store, 3, 3, softmax);
        test::jitter(store, 1);
        Rng rng(2);
        const Seqs s = random_seqs(rng, 6, 4, 3);
        const Matrix<double> t = random_matrix(rng, 6, 3);
        const Matrix<double> v = din_attention<double>(store, p, s.behaviors, s.seq_len, 4, t);
        for (Index k = 0; k < 6; ++k) {
            const Index len = s.seq_len[static_cast<std::size_t>(k)];
            std::vector<double> w;
            for (Index r = 0; r < len; ++r)
                w.push_back(score_oracle(store, p, s.behaviors.row(k * 4 + r), t.row(k)));
            if (softmax && len > 0) {
                const double mx = *std::max_element(w.begin(), w.end());
                double z = 0.0;
                for (double& x : w)
                    z += (x = std::exp(x - mx));
                for (double& x : w)
                    x /= z;
            }
            for (Index c = 0; c < 3; ++c) {
                double e = 0.0;
                for (Index r = 0; r < len; ++r)
                    e += w[static_cast<std::size_t>(r)] * s.behaviors(k * 4 + r, c);
                EXPECT_NEAR(v(k, c), e, 1e-13) << "softmax=" << softmax;
            }
        }
    }
}

TEST(Attention, EmptySequenceGivesZero)
{
    ParamStore<double> store;
    const auto p = make_attention(store, 2, 2, false);
    Rng rng(3);
    const Matrix<double> beh = random_matrix(rng, 3, 2);
    const Matrix<double> v =
        din_attention<double>(store, p, beh, {0}, 3, random_matrix(rng, 1, 2));
    EXPECT_TRUE(v.isZero(0.0));
}

TEST(Attention, InvariantToOrderAndPadding)
{
    for (bool softmax : {false, true}) {
        ParamStore<double> store;
        const auto p = make_attention(store, 3, 3, softmax);
        test::jitter(store, 5);
        Rng rng(6);
        for (int trial = 0; trial < 50; ++trial) {
            const Index len = rng.range(1, 6);
            Matrix<double> beh = Matrix<double>::Zero(6, 3);
            beh.topRows(len) = random_matrix(rng, len, 3);
            const Matrix<double> t = random_matrix(rng, 1, 3);
            const Matrix<double> v = din_attention<double>(store, p, beh, {len}, 6, t);

            std::vector<Index> perm(static_cast<std::size_t>(len));
            std::iota(perm.begin(), perm.end(), Index{0});
            rng.shuffle(perm);
            Matrix<double> shuffled = beh;
            for (Index r = 0; r < len; ++r)
                shuffled.row(r) = beh.row(perm[static_cast<std::size_t>(r)]);
            if (len < 6)
                shuffled.bottomRows(6 - len) = random_matrix(rng, 6 - len, 3, -5.0, 5.0);
            const Matrix<double> w = din_attention<double>(store, p, shuffled, {len}, 6, t);
            EXPECT_LE((v - w).cwiseAbs().maxCoeff(), 1e-12);

            Matrix<double> longer = Matrix<double>::Zero(9, 3);
            longer.topRows(6) = beh;
            EXPECT_LE((din_attention<double>(store, p, longer, {len}, 9, t) - v).cwiseAbs().maxCoeff(),
                      1e-15);
        }
    }
}

TEST(Attention, SoftmaxWeightsSumToOne)
{
    ParamStore<double> store;
    const auto p = make_attention(store, 3, 3, true);
    test::jitter(store, 7, 2.0);
    Rng rng(8);
    const Seqs s = random_seqs(rng, 10, 5, 3, 1);
    const auto st = din_forward<double>(store, p, s.behaviors, s.seq_len, 5, random_matrix(rng, 10, 3));
    for (Index k = 0; k < 10; ++k) {
        const Index len = s.seq_len[static_cast<std::size_t>(k)];
        EXPECT_NEAR(st.weights.middleRows(k * 5, len).sum(), 1.0, 1e-14);
        EXPECT_TRUE((st.weights.middleRows(k * 5, len).array() > 0.0).all());
        EXPECT_TRUE(st.weights.middleRows(k * 5 + len, 5 - len).isZero(0.0));
    }
}

TEST(Attention, TargetProjectedWhenWidthsDiffer)
{
    ParamStore<double> store;
    const auto p = make_attention(store, 2, 4, false);
    ASSERT_TRUE(p.target_proj.valid());
    EXPECT_EQ(store.value(p.target_proj).rows(), 2);
    EXPECT_EQ(store.value(p.target_proj).cols(), 4);
    Rng rng(9);
    const Matrix<double> t = random_matrix(rng, 2, 4);
    const Seqs s = random_seqs(rng, 2, 3, 2, 1);
    const auto st = din_forward<double>(store, p, s.behaviors, s.seq_len, 3, t);
    EXPECT_TRUE(st.target.isApprox(t * store.value(p.target_proj).transpose(), 1e-15));

    ParamStore<double> same;
    EXPECT_FALSE(make_attention(same, 3, 3, false).target_proj.valid());
}

// ---------------------------------------------------------------------------
// Tower
// ---------------------------------------------------------------------------

namespace {

TowerParams make_tower(ParamStore<double>& store, Index in, Index ds, std::vector<Index> hidden,
                       bool no_sdnn)
{
    TowerShape s;
    s.input_width = in;
    s.scenario_dim = ds;
    s.hidden = std::move(hidden);
    s.no_sdnn = no_sdnn;
    return register_tower(store, "sdnn", s, 11);
}

} // namespace

TEST(Tower, GatedLayerMatchesScalarOracle)
{
    ParamStore<double> store;
    const auto p = make_tower(store, 4, 2, {3}, false);
    test::jitter(store, 12);
    const auto& l = p.layers[0];
    Rng rng(13);
    const Matrix<double> h = random_matrix(rng, 5, 4), s = random_matrix(rng, 5, 2);
    const Matrix<double> out = sdnn_layer<double>(store, l, false, h, s);
    const auto &w6 = store.value(l.w6), &b6 = store.value(l.b6), &g = store.value(l.ln_gain),
               &be = store.value(l.ln_bias), &w7 = store.value(l.w7), &b7 = store.value(l.b7),
               &w8 = store.value(l.w8), &b8 = store.value(l.b8);
    const Index gh = w6.rows();
    for (Index r = 0; r < 5; ++r) {
        std::vector<double> hid(static_cast<std::size_t>(gh));
        for (Index j = 0; j < gh; ++j) {
            double a = b6(0, j);
            for (Index i = 0; i < 4; ++i)
                a += w6(j, i) * h(r, i);
            for (Index i = 0; i < 2; ++i)
                a += w6(j, 4 + i) * s(r, i);
            hid[static_cast<std::size_t>(j)] = std::max(a, 0.0);
        }
        double mean = 0.0, var = 0.0;
        for (double x : hid)
            mean += x / static_cast<double>(gh);
        for (double x : hid)
            var += (x - mean) * (x - mean) / static_cast<double>(gh);
        std::vector<double> ln;
        for (Index j = 0; j < gh; ++j)
            ln.push_back(g(0, j) * (hid[static_cast<std::size_t>(j)] - mean) / std::sqrt(var + 1e-5) +
                         be(0, j));
        std::vector<double> gated;
        for (Index i = 0; i < 4; ++i) {
            double a = b7(0, i);
            for (Index j = 0; j < gh; ++j)
                a += w7(i, j) * ln[static_cast<std::size_t>(j)];
            gated.push_back(h(r, i) * sig(a));
        }
        for (Index o = 0; o < 3; ++o) {
            double a = b8(0, o);
            for (Index i = 0; i < 4; ++i)
                a += w8(o, i) * gated[static_cast<std::size_t>(i)];
            EXPECT_NEAR(out(r, o), std::max(a, 0.0), 1e-12);
        }
    }
}

TEST(Tower, UngatedIsPlainMlp)
{
    ParamStore<double> store;
    const auto p = make_tower(store, 4, 2, {3, 2}, true);
    test::jitter(store, 14);
    Rng rng(15);
    const Matrix<double> h = random_matrix(rng, 6, 4);
    const auto st = tower_forward<double>(store, p, h, random_matrix(rng, 6, 2));
    Matrix<double> x = h;
    for (const auto& l : p.layers) {
        Matrix<double> pre = x * store.value(l.w8).transpose();
        pre.rowwise() += store.value(l.b8).row(0);
        x = pre.cwiseMax(0.0);
    }
    Matrix<double> logit = x * store.value(p.out_w).transpose();
    logit.array() += store.value(p.out_b)(0, 0);
    EXPECT_TRUE(st.logits.isApprox(logit, 1e-13));
    EXPECT_FALSE(store.contains("sdnn0/gate/w6"));
}

TEST(Tower, ScenarioOnlyEntersThroughGate)
{
    Rng rng(16);
    const Matrix<double> h = random_matrix(rng, 4, 3), s1 = random_matrix(rng, 4, 2),
                         s2 = random_matrix(rng, 4, 2);
    ParamStore<double> gated;
    const auto pg = make_tower(gated, 3, 2, {4}, false);
    test::jitter(gated, 17);
    EXPECT_GT((tower_forward<double>(gated, pg, h, s1).logits -
               tower_forward<double>(gated, pg, h, s2).logits)
                  .cwiseAbs()
                  .maxCoeff(),
              0.0);
    ParamStore<double> plain;
    const auto pp = make_tower(plain, 3, 2, {4}, true);
    EXPECT_EQ(tower_forward<double>(plain, pp, h, s1).logits,
              tower_forward<double>(plain, pp, h, s2).logits);
}

TEST(Tower, ZeroHiddenLayersIsLinear)
{
    ParamStore<double> store;
    const auto p = make_tower(store, 3, 2, {}, false);
    Rng rng(18);
    const Matrix<double> h = random_matrix(rng, 4, 3);
    const auto st = tower_forward<double>(store, p, h, random_matrix(rng, 4, 2));
    EXPECT_TRUE(st.logits.isApprox(h * store.value(p.out_w).transpose(), 1e-15));
}

TEST(Tower, RejectsBadWidths)
{
    ParamStore<double> store;
    EXPECT_THROW(make_tower(store, 3, 2, {0}, false), ConfigError);
    ParamStore<double> other;
    EXPECT_THROW(make_tower(other, 1, 1, {2}, false), ConfigError); // layer norm over 1 unit
}

// ---------------------------------------------------------------------------
// Whole head
// ---------------------------------------------------------------------------

TEST(Head, InputIsFeaturesThenAttendedSequence)
{
    ParamStore<double> store;
    HeadShape shape;
    shape.n_fields = 2;
    shape.dim = 3;
    shape.embed_dim = 3;
    shape.sdnn_hidden = {4};
    const auto p = register_head(store, shape, 19);
    test::jitter(store, 20);
    Rng rng(21);
    const Matrix<double> f = random_matrix(rng, 5, 6);
    const Seqs s = random_seqs(rng, 5, 4, 3);
    const Matrix<double> t = random_matrix(rng, 5, 3), sc = random_matrix(rng, 5, 3);
    const auto st = head_forward<double>(store, p, f, s.behaviors, s.seq_len, 4, t, sc);
    EXPECT_EQ(st.h1.leftCols(6), f);
    EXPECT_EQ(st.h1.rightCols(3), din_attention<double>(store, p.attention, s.behaviors, s.seq_len, 4, t));
    EXPECT_EQ(st.tower.logits, tower_forward<double>(store, p.tower, st.h1, sc).logits);
}

namespace {

double head_grad_error(bool softmax, bool no_sdnn, Index embed_dim)
{
    const Index n = 2, d = 3, nb = 4, B = 5;
    ParamStore<double> store;
    HeadShape shape;
    shape.n_fields = n;
    shape.dim = d;
    shape.embed_dim = embed_dim;
    shape.att_hidden = 4;
    shape.att_softmax = softmax;
    shape.sdnn_hidden = {5, 3};
    shape.no_sdnn = no_sdnn;
    const auto p = register_head(store, shape, 22);
    test::jitter(store, 23);
    Rng rng(24);
    const Seqs s = random_seqs(rng, B, nb, d);
    store.add("in/features", random_matrix(rng, B, n * d));
    store.add("in/behaviors", s.behaviors);
    store.add("in/target", random_matrix(rng, B, embed_dim));
    store.add("in/scenario", random_matrix(rng, B, embed_dim));
    std::vector<int> labels;
    for (Index k = 0; k < B; ++k)
        labels.push_back(static_cast<int>(rng.range(0, 1)));

    const auto f = [&](const auto& ps, auto* g) {
        using T = typename std::decay_t<decltype(ps["in/features"])>::Scalar;
        const auto st = head_forward<T>(ps, p, ps["in/features"], ps["in/behaviors"], s.seq_len, nb,
                                        ps["in/target"], ps["in/scenario"]);
        const Matrix<T> probs = sigmoid(st.tower.logits);
        if (g) {
            const auto in = head_backward<T>(ps, p, st, bce_logit_grad<T>(probs, labels), *g);
            (*g)["in/features"] += in.features;
            (*g)["in/behaviors"] += in.behaviors;
            (*g)["in/target"] += in.target_embed;
            (*g)["in/scenario"] += in.scenario;
        }
        return bce_loss<T>(probs, labels);
    };
    return test::max_grad_error(store, f);
}

} // namespace

TEST(Head, BackwardMatchesFiniteDifferences)
{
    EXPECT_LT(head_grad_error(false, false, 3), 1e-4);
    EXPECT_LT(head_grad_error(true, false, 3), 1e-4);
    EXPECT_LT(head_grad_error(false, true, 3), 1e-4);
    EXPECT_LT(head_grad_error(true, false, 2), 1e-4);
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

TEST(Loss, WorkedExamples)
{
    const std::vector<double> p{0.9, 0.8};
    const std::vector<int> y{1, 1};
    EXPECT_NEAR(bce_loss(p, y), 0.1643, 5e-5);
    EXPECT_NEAR(bce_loss(p, y), -(std::log(0.9) + std::log(0.8)) / 2.0, 1e-15);
    const std::vector<double> half{0.5, 0.5, 0.5};
    EXPECT_NEAR(bce_loss(half, std::vector<int>{1, 0, 1}), std::log(2.0), 1e-15);
}

TEST(Loss, ClampKeepsLossFinite)
{
    const std::vector<double> p{0.0, 1.0};
    const double l = bce_loss(p, std::vector<int>{1, 0});
    EXPECT_TRUE(std::isfinite(l));
    // 1 - 1e-12 is not exact in binary, so the two clamped terms differ slightly
    EXPECT_NEAR(l, -(std::log(1e-12) + std::log1p(-(1.0 - 1e-12))) / 2.0, 1e-12);
    EXPECT_NEAR(l, -std::log(1e-12), 1e-4);
    EXPECT_EQ(bce_loss(std::vector<double>{1.0}, std::vector<int>{1}), -std::log(1.0 - 1e-12));
}

TEST(Loss, RejectsMismatchedOrEmpty)
{
    EXPECT_THROW(bce_loss(std::vector<double>{}, std::vector<int>{}), std::invalid_argument);
    EXPECT_THROW(bce_loss(std::vector<double>{0.5}, std::vector<int>{1, 0}), ShapeError);
}

TEST(Loss, ConvexInLogitAndMinimizedAtLabel)
{
    // loss(sigmoid(z)) sampled on a grid has non-negative second differences
    for (int y : {0, 1}) {
        std::vector<double> v;
        for (double z = -8.0; z <= 8.0; z += 0.25)
            v.push_back(bce_loss(std::vector<double>{sig(z)}, std::vector<int>{y}));
        for (std::size_t i = 1; i + 1 < v.size(); ++i)
            EXPECT_GE(v[i - 1] + v[i + 1] - 2.0 * v[i], -1e-12);
        EXPECT_TRUE(y ? v.back() < v.front() : v.back() > v.front());
    }
}

TEST(Loss, MatrixFormAgreesWithSpanForm)
{
    Rng rng(25);
    const Matrix<double> p = random_matrix(rng, 20, 1, 0.01, 0.99);
    std::vector<int> y;
    for (int i = 0; i < 20; ++i)
        y.push_back(static_cast<int>(rng.range(0, 1)));
    const std::span<const double> ps(p.data(), 20);
    EXPECT_NEAR(bce_loss<double>(p, y), bce_loss(ps, y), 1e-15);
    const Matrix<double> g = bce_logit_grad<double>(p, y);
    for (int i = 0; i < 20; ++i)
        EXPECT_DOUBLE_EQ(g(i, 0), (p(i, 0) - y[static_cast<std::size_t>(i)]) / 20.0);
}
