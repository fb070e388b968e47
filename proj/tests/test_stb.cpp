#include "sfpnet/stb.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace sfpnet;
using sfpnet::test::random_matrix;

namespace {

// Two-pass population statistics, written independently of the implementation.
void two_pass(const Matrix<double>& rows, Index len, std::vector<double>& mean,
              std::vector<double>& sd)
{
    const Index d = rows.cols();
    mean.assign(static_cast<std::size_t>(d), 0.0);
    sd.assign(static_cast<std::size_t>(d), 0.0);
    for (Index c = 0; c < d; ++c) {
        double s = 0.0;
        for (Index r = 0; r < len; ++r)
            s += rows(r, c);
        const double m = s / static_cast<double>(len);
        double q = 0.0;
        for (Index r = 0; r < len; ++r)
            q += (rows(r, c) - m) * (rows(r, c) - m);
        mean[static_cast<std::size_t>(c)] = m;
        sd[static_cast<std::size_t>(c)] = std::sqrt(q / static_cast<double>(len));
    }
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Batch {
    Matrix<double> features;
    Matrix<double> behaviors;
    std::vector<Index> seq_len;
    Index max_seq = 0;
    Matrix<double> scenario;
};

Batch random_batch(Rng& rng, Index B, Index n, Index d, Index max_seq, Index ds)
{
    Batch b;
    b.max_seq = max_seq;
    b.features = random_matrix(rng, B, n * d);
    b.behaviors = Matrix<double>::Zero(B * max_seq, d);
    for (Index k = 0; k < B; ++k) {
        const Index len = rng.range(0, max_seq);
        b.seq_len.push_back(len);
        if (len > 0)
            b.behaviors.middleRows(k * max_seq, len) = random_matrix(rng, len, d);
    }
    b.scenario = random_matrix(rng, B, ds);
    return b;
}

BlockParams make_block(ParamStore<double>& store, Index n, Index din, Index dout, Index ds,
                       BlockFlags flags = {}, const std::string& prefix = "stb0", std::uint64_t seed = 3)
{
    BlockShape shape;
    shape.n_fields = n;
    shape.in_dim = din;
    shape.out_dim = dout;
    shape.scenario_dim = ds;
    return register_block(store, prefix, shape, flags, seed);
}

} // namespace

// ---------------------------------------------------------------------------
// Distribution-aware pooling
// ---------------------------------------------------------------------------

TEST(Dap, HandExample)
{
    Matrix<double> rows(2, 2);
    rows << 1, 3, 3, 1;
    const RowVector<double> p = dap_pool<double>(rows, 2);
    EXPECT_EQ(p(0), 2.0);
    EXPECT_EQ(p(1), 2.0);
    EXPECT_EQ(p(2), 1.0);
    EXPECT_EQ(p(3), 1.0);
}

TEST(Dap, IdenticalRowsHaveZeroStd)
{
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const Index k = rng.range(1, 20);
        const Matrix<double> v = random_matrix(rng, 1, 5, -100.0, 100.0);
        const Matrix<double> rows = v.replicate(k, 1);
        const RowVector<double> p = dap_pool<double>(rows, k);
        for (Index c = 0; c < 5; ++c) {
            EXPECT_NEAR(p(c), v(0, c), 1e-12 * std::abs(v(0, c)));
            EXPECT_NEAR(p(5 + c), 0.0, 1e-12 * std::abs(v(0, c)));
        }
    }
}

TEST(Dap, SingleRow)
{
    Rng rng(2);
    const Matrix<double> rows = random_matrix(rng, 3, 4);
    const RowVector<double> p = dap_pool<double>(rows, 1);
    EXPECT_EQ(p.head(4), rows.row(0));
    EXPECT_TRUE(p.tail(4).isZero(0.0));
}

TEST(Dap, EmptySequencePoolsToZero)
{
    const Matrix<double> rows = Matrix<double>::Ones(3, 2);
    EXPECT_TRUE(dap_pool<double>(rows, 0).isZero(0.0));
}

TEST(Dap, MatchesTwoPassOracleAndIgnoresOrder)
{
    Rng rng(3);
    for (int trial = 0; trial < 1000; ++trial) {
        const Index len = rng.range(1, 30), d = rng.range(1, 8);
        const double scale = std::pow(10.0, rng.uniform(-2.0, 2.0));
        const double shift = rng.uniform(-3.0, 3.0) * scale;
        Matrix<double> rows = random_matrix(rng, len + 3, d, -scale, scale).array() + shift;
        rows.bottomRows(3).setConstant(1e6); // padding garbage beyond seq_len
        const RowVector<double> p = dap_pool<double>(rows, len);
        std::vector<double> mean, sd;
        two_pass(rows, len, mean, sd);
        for (Index c = 0; c < d; ++c) {
            EXPECT_NEAR(p(c), mean[static_cast<std::size_t>(c)], 1e-10);
            EXPECT_NEAR(p(d + c), sd[static_cast<std::size_t>(c)], 1e-10);
            EXPECT_GE(p(d + c), 0.0);
        }
        std::vector<Index> perm(static_cast<std::size_t>(len));
        std::iota(perm.begin(), perm.end(), Index{0});
        rng.shuffle(perm);
        Matrix<double> shuffled = rows;
        for (Index r = 0; r < len; ++r)
            shuffled.row(r) = rows.row(perm[static_cast<std::size_t>(r)]);
        EXPECT_LE((dap_pool<double>(shuffled, len) - p).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Dap, BatchedMatchesSingle)
{
    Rng rng(4);
    const Batch b = random_batch(rng, 7, 1, 3, 6, 2);
    const Matrix<double> pooled = dap_pool<double>(b.behaviors, b.seq_len, b.max_seq);
    const Matrix<double> mean_only = dap_pool<double>(b.behaviors, b.seq_len, b.max_seq, false);
    for (Index k = 0; k < 7; ++k) {
        const Matrix<double> rows = b.behaviors.middleRows(k * 6, 6);
        EXPECT_EQ(pooled.row(k), dap_pool<double>(rows, b.seq_len[static_cast<std::size_t>(k)]));
        EXPECT_EQ(mean_only.row(k).head(3), pooled.row(k).head(3));
        EXPECT_TRUE(mean_only.row(k).tail(3).isZero(0.0));
    }
}

// ---------------------------------------------------------------------------
// Scenario-adaptive gate
// ---------------------------------------------------------------------------

TEST(Sam, ZeroOutputLayerGivesHalf)
{
    ParamStore<double> store;
    const BlockParams p = make_block(store, 2, 3, 3, 3);
    store.value(p.gate_w1).setZero();
    Rng rng(5);
    const Batch b = random_batch(rng, 4, 2, 3, 5, 3);
    const Matrix<double> pooled = dap_pool<double>(b.behaviors, b.seq_len, b.max_seq);
    const Matrix<double> a = sam_gate<double>(store, p, b.features, pooled, b.scenario);
    EXPECT_EQ(a.cols(), 4 * 3);
    EXPECT_TRUE((a.array() == 0.5).all());
}

TEST(Sam, ScenarioChangesGateAndRescaledInput)
{
    ParamStore<double> store;
    const BlockParams p = make_block(store, 2, 3, 3, 3);
    test::jitter(store, 1, 0.3);
    Rng rng(6);
    const Batch b = random_batch(rng, 4, 2, 3, 5, 3);
    const Matrix<double> pooled = dap_pool<double>(b.behaviors, b.seq_len, b.max_seq);
    const Matrix<double> other = random_matrix(rng, 4, 3);
    const Matrix<double> a1 = sam_gate<double>(store, p, b.features, pooled, b.scenario);
    const Matrix<double> a2 = sam_gate<double>(store, p, b.features, pooled, other);
    EXPECT_GT((a1 - a2).cwiseAbs().maxCoeff(), 0.0);
    const Matrix<double> x1 = sam_rescale<double>(b.features, pooled, a1);
    const Matrix<double> x2 = sam_rescale<double>(b.features, pooled, a2);
    EXPECT_GT((x1 - x2).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Sam, GateStaysInsideOpenInterval)
{
    ParamStore<double> store;
    const BlockParams p = make_block(store, 3, 4, 4, 4);
    for (std::size_t i = 0; i < store.size(); ++i)
        store.value(ParamId{i}) *= 40.0; // push the logits far into saturation
    Rng rng(7);
    const Batch b = random_batch(rng, 6, 3, 4, 5, 4);
    const Matrix<double> pooled = dap_pool<double>(b.behaviors, b.seq_len, b.max_seq);
    const Matrix<double> a = sam_gate<double>(store, p, b.features * 50.0, pooled, b.scenario);
    EXPECT_TRUE((a.array() > 0.0).all());
    EXPECT_TRUE((a.array() < 1.0).all());
}

TEST(Sam, RescaleIsElementwiseProduct)
{
    Rng rng(8);
    const Matrix<double> f = random_matrix(rng, 3, 6), pooled = random_matrix(rng, 3, 4);
    EXPECT_EQ(sam_rescale<double>(f, pooled, Matrix<double>::Ones(3, 10)).leftCols(6), f);
    const Matrix<double> half = sam_rescale<double>(f, pooled, Matrix<double>::Constant(3, 10, 0.5));
    EXPECT_EQ(half.rightCols(4), (0.5 * pooled).eval());
    const Matrix<double> a = random_matrix(rng, 3, 10, 0.0, 1.0);
    const Matrix<double> x = sam_rescale<double>(f, pooled, a);
    for (Index r = 0; r < 3; ++r)
        for (Index c = 0; c < 10; ++c)
            EXPECT_EQ(x(r, c), (c < 6 ? f(r, c) : pooled(r, c - 6)) * a(r, c));
}

// ---------------------------------------------------------------------------
// Residual tailoring
// ---------------------------------------------------------------------------

TEST(Rtm, AggregateConstantPaths)
{
    ParamStore<double> store;
    const BlockParams p = make_block(store, 2, 2, 3, 2);
    Rng rng(9);
    const Matrix<double> x = random_matrix(rng, 5, p.shape.concat_width());
    for (ParamId id : {p.agg_w2, p.agg_b2, p.agg_w3, p.agg_b3})
        store.value(id).setZero();
    EXPECT_TRUE(rtm_aggregate<double>(store, p, x).isZero(0.0));
    const Matrix<double> c = random_matrix(rng, 1, p.shape.context_width());
    store.value(p.agg_b3) = c;
    const Matrix<double> out = rtm_aggregate<double>(store, p, x);
    for (Index r = 0; r < 5; ++r)
        EXPECT_EQ(out.row(r), c.row(0));
}

TEST(Rtm, FeatureTailoringSpecialCases)
{
    ParamStore<double> store;
    const BlockParams p = make_block(store, 2, 3, 2, 2);
    Rng rng(10);
    const Matrix<double> x = random_matrix(rng, 4, 3);
    const Matrix<double> ci = random_matrix(rng, 4, 2);
    const auto& fp = p.fields[1];
    Matrix<double> relu_only;
    linear_rows<double>(x, store.value(fp.w1), store.value(fp.b1), relu_only);
    relu_only = relu(relu_only);
    EXPECT_EQ(rtm_tailor_feature<double>(store, p, 1, x, Matrix<double>::Zero(4, 2)), relu_only);

    for (ParamId id : {fp.w1, fp.b1, fp.w2, fp.b2})
        store.value(id).setZero();
    EXPECT_EQ(rtm_tailor_feature<double>(store, p, 1, x, ci), (0.5 * ci).eval());
}

TEST(Rtm, FeatureTailoringMatchesScalarLoop)
{
    ParamStore<double> store;
    const BlockParams p = make_block(store, 2, 3, 2, 2);
    test::jitter(store, 2, 0.5);
    Rng rng(11);
    const Matrix<double> x = random_matrix(rng, 4, 3), ci = random_matrix(rng, 4, 2);
    const auto& fp = p.fields[0];
    const auto &w1 = store.value(fp.w1), &b1 = store.value(fp.b1), &w2 = store.value(fp.w2),
               &b2 = store.value(fp.b2);
    const Matrix<double> out = rtm_tailor_feature<double>(store, p, 0, x, ci);
    for (Index r = 0; r < 4; ++r)
        for (Index o = 0; o < 2; ++o) {
            double a = b1(0, o), g = b2(0, o);
            for (Index i = 0; i < 3; ++i) {
                a += w1(o, i) * x(r, i);
                g += w2(o, i) * x(r, i);
            }
            EXPECT_NEAR(out(r, o), std::max(a, 0.0) + sig(g) * ci(r, o), 1e-14);
        }
}

TEST(Rtm, BehaviorTailoringMatchesScalarLoop)
{
    ParamStore<double> store;
    const BlockParams p = make_block(store, 1, 2, 3, 2);
    test::jitter(store, 3, 0.5);
    Rng rng(12);
    const RowVector<double> v = random_matrix(rng, 1, 2), cb = random_matrix(rng, 1, 6);
    const RowVector<double> out = rtm_tailor_behavior<double>(store, p, v, cb);
    const auto &w4 = store.value(p.seq_w4), &b4 = store.value(p.seq_b4), &w5 = store.value(p.seq_w5),
               &b5 = store.value(p.seq_b5), &P = store.value(p.seq_proj), &pb = store.value(p.seq_proj_b);
    for (Index o = 0; o < 3; ++o) {
        double a = b4(0, o), g = b5(0, o), c = pb(0, o);
        for (Index i = 0; i < 2; ++i) {
            a += w4(o, i) * v(i);
            g += w5(o, i) * v(i);
        }
        for (Index j = 0; j < 6; ++j)
            c += P(o, j) * cb(j);
        EXPECT_NEAR(out(o), std::max(a, 0.0) + sig(g) * c, 1e-14);
    }
}

TEST(Rtm, BehaviorTailoringZeroContextAndWeightSharing)
{
    ParamStore<double> store;
    const BlockParams p = make_block(store, 1, 3, 3, 2);
    test::jitter(store, 4, 0.5);
    Rng rng(13);
    const RowVector<double> v = random_matrix(rng, 1, 3), cb = random_matrix(rng, 1, 6);
    store.value(p.seq_proj).setZero();
    store.value(p.seq_proj_b).setZero();
    const RowVector<double> b4 = store.value(p.seq_b4).row(0);
    EXPECT_EQ(rtm_tailor_behavior<double>(store, p, v, cb),
              relu(linear<double>(v, store.value(p.seq_w4), b4)).eval());

    // two identical behaviors in one sequence tailor identically
    Matrix<double> rows(4, 3);
    rows << v, random_matrix(rng, 1, 3), v, Matrix<double>::Zero(1, 3);
    const Matrix<double> ctx = random_matrix(rng, 1, 6);
    const Matrix<double> out = rtm_tailor_behaviors<double>(store, p, rows, ctx, {3}, 4);
    EXPECT_EQ(out.row(0), out.row(2));
}

TEST(Rtm, BatchedBehaviorsEqualRowwise)
{
    ParamStore<double> store;
    const BlockParams p = make_block(store, 2, 3, 2, 3);
    test::jitter(store, 5, 0.3);
    Rng rng(14);
    const Batch b = random_batch(rng, 6, 2, 3, 5, 3);
    const Matrix<double> ctx = random_matrix(rng, 6, 4);
    const Matrix<double> out =
        rtm_tailor_behaviors<double>(store, p, b.behaviors, ctx, b.seq_len, b.max_seq);
    for (Index k = 0; k < 6; ++k)
        for (Index r = 0; r < b.max_seq; ++r) {
            const Index row = k * b.max_seq + r;
            if (r < b.seq_len[static_cast<std::size_t>(k)])
                EXPECT_EQ(out.row(row), rtm_tailor_behavior<double>(store, p, b.behaviors.row(row),
                                                                     ctx.row(k)));
            else
                EXPECT_TRUE(out.row(row).isZero(0.0));
        }
}

// ---------------------------------------------------------------------------
// Whole block
// ---------------------------------------------------------------------------

TEST(Block, StateInvariants)
{
    ParamStore<double> store;
    const BlockParams p = make_block(store, 3, 4, 4, 4);
    test::jitter(store, 6);
    Rng rng(15);
    const Batch b = random_batch(rng, 5, 3, 4, 5, 4);
    const auto st = block_forward<double>(store, p, b.features, b.behaviors, b.seq_len, b.max_seq, b.scenario);
    EXPECT_TRUE((st.gate.array() > 0.0).all() && (st.gate.array() < 1.0).all());
    EXPECT_EQ(st.context.cols(), (3 + 2) * 4);
    // field slices and the sequence slice partition C
    for (Index i = 0; i < 3; ++i) {
        const Matrix<double> xi = st.rescaled.middleCols(i * 4, 4);
        const Matrix<double> ci = st.context.middleCols(i * 4, 4);
        EXPECT_EQ(st.out_features.middleCols(i * 4, 4), rtm_tailor_feature<double>(store, p, i, xi, ci));
    }
    // the block's fused batched products round differently from the row-wise op
    const Matrix<double> cb = st.context.rightCols(8);
    EXPECT_LE((st.out_behaviors -
               rtm_tailor_behaviors<double>(store, p, b.behaviors, cb, b.seq_len, b.max_seq))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-13);
    EXPECT_EQ(st.context, rtm_aggregate<double>(store, p, st.rescaled));
}

TEST(Block, EmptySequenceGivesZeroBehaviorRowsAndPooling)
{
    ParamStore<double> store;
    const BlockParams p = make_block(store, 2, 3, 3, 3);
    Rng rng(16);
    Batch b = random_batch(rng, 3, 2, 3, 4, 3);
    b.seq_len = {0, 0, 0};
    b.behaviors.setZero();
    const auto st = block_forward<double>(store, p, b.features, b.behaviors, b.seq_len, b.max_seq, b.scenario);
    EXPECT_TRUE(st.pooled.isZero(0.0));
    EXPECT_TRUE(st.out_behaviors.isZero(0.0));
}

TEST(Block, PaddingContentNeverMatters)
{
    for (int variant = 0; variant < 4; ++variant) {
        BlockFlags flags;
        flags.no_dap = variant == 1;
        flags.no_sam = variant == 2;
        flags.no_rtm = variant == 3;
        ParamStore<double> store;
        const BlockParams p = make_block(store, 2, 3, 2, 3, flags);
        test::jitter(store, 7);
        Rng rng(17 + static_cast<std::uint64_t>(variant));
        const Batch b = random_batch(rng, 4, 2, 3, 5, 3);
        Matrix<double> noisy = b.behaviors;
        for (Index k = 0; k < 4; ++k) {
            const Index len = b.seq_len[static_cast<std::size_t>(k)];
            if (len < 5)
                noisy.middleRows(k * 5 + len, 5 - len) = random_matrix(rng, 5 - len, 3, -9.0, 9.0);
        }
        const auto a = block_forward<double>(store, p, b.features, b.behaviors, b.seq_len, 5, b.scenario);
        const auto c = block_forward<double>(store, p, b.features, noisy, b.seq_len, 5, b.scenario);
        EXPECT_EQ(a.out_features, c.out_features) << variant;
        EXPECT_EQ(a.out_behaviors, c.out_behaviors) << variant;

        // and appending extra padding rows changes nothing either
        Matrix<double> longer = Matrix<double>::Zero(4 * 7, 3);
        for (Index k = 0; k < 4; ++k)
            longer.middleRows(k * 7, 5) = b.behaviors.middleRows(k * 5, 5);
        const auto e = block_forward<double>(store, p, b.features, longer, b.seq_len, 7, b.scenario);
        EXPECT_EQ(a.out_features, e.out_features) << variant;
        for (Index k = 0; k < 4; ++k)
            EXPECT_EQ(a.out_behaviors.middleRows(k * 5, 5), e.out_behaviors.middleRows(k * 7, 5));
    }
}

TEST(Block, DegenerateFlagsAreShapePreservingPerFieldMaps)
{
    BlockFlags flags;
    flags.no_sam = true;
    flags.no_rtm = true;
    ParamStore<double> store;
    const BlockParams p = make_block(store, 2, 3, 3, 2, flags);
    for (const auto& f : p.fields) {
        store.value(f.w1).setIdentity();
        store.value(f.b1).setConstant(10.0);
    }
    Rng rng(18);
    const Batch b = random_batch(rng, 3, 2, 3, 4, 2);
    const auto st = block_forward<double>(store, p, b.features, b.behaviors, b.seq_len, 4, b.scenario);
    ASSERT_EQ(st.out_features.cols(), 6);
    EXPECT_TRUE(st.out_features.isApprox((b.features.array() + 10.0).matrix(), 1e-14));
}

TEST(Block, ScenarioMattersOnlyThroughTheGate)
{
    ParamStore<double> store;
    const BlockParams p = make_block(store, 2, 3, 3, 3);
    test::jitter(store, 8);
    Rng rng(19);
    const Batch b = random_batch(rng, 4, 2, 3, 5, 3);
    const Matrix<double> s2 = random_matrix(rng, 4, 3);
    const auto a = block_forward<double>(store, p, b.features, b.behaviors, b.seq_len, 5, b.scenario);
    const auto c = block_forward<double>(store, p, b.features, b.behaviors, b.seq_len, 5, s2);
    EXPECT_GT((a.rescaled - c.rescaled).cwiseAbs().maxCoeff(), 0.0);

    BlockFlags off;
    off.no_sam = true;
    ParamStore<double> store2;
    const BlockParams q = make_block(store2, 2, 3, 3, 3, off);
    const auto x = block_forward<double>(store2, q, b.features, b.behaviors, b.seq_len, 5, b.scenario);
    const auto y = block_forward<double>(store2, q, b.features, b.behaviors, b.seq_len, 5, s2);
    EXPECT_EQ(x.out_features, y.out_features);
}

TEST(Block, ParameterCensusPerFlag)
{
    auto count = [](BlockFlags f) {
        ParamStore<double> s;
        make_block(s, 3, 4, 4, 4, f);
        return s.scalar_count();
    };
    const auto full = count({});
    BlockFlags no_dap, no_sam, no_rtm;
    no_dap.no_dap = true;
    no_sam.no_sam = true;
    no_rtm.no_rtm = true;
    EXPECT_EQ(count(no_dap), full); // same weights, std half fed as zero
    const Index w = 5 * 4, in = w + 4;
    EXPECT_EQ(full - count(no_sam), static_cast<std::size_t>(w * in + w + 2 * w + w * w + w));
    EXPECT_LT(count(no_rtm), full);
}

TEST(Block, InconsistentStackNamesBlock)
{
    ParamStore<double> store;
    std::vector<BlockParams> blocks{make_block(store, 3, 4, 5, 4, {}, "stb0"),
                                    make_block(store, 3, 4, 4, 4, {}, "stb1")};
    try {
        validate_stack(blocks, 3, 4, 4);
        FAIL() << "mismatched chain accepted";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("stb1"), std::string::npos) << e.what();
    }
    EXPECT_THROW(validate_stack(blocks, 2, 4, 4), ConfigError);
    blocks.pop_back();
    EXPECT_NO_THROW(validate_stack(blocks, 3, 4, 4));
}

// ---------------------------------------------------------------------------
// Stack
// ---------------------------------------------------------------------------

namespace {

EncodedBatch<double> to_encoded(const Batch& b, Index n, Index d)
{
    EncodedBatch<double> e;
    e.size = b.features.rows();
    e.n_fields = n;
    e.max_seq = b.max_seq;
    e.dim = d;
    e.features = b.features;
    e.behaviors = b.behaviors;
    e.seq_len = b.seq_len;
    e.target = Matrix<double>::Zero(e.size, d);
    e.scenario = b.scenario;
    return e;
}

} // namespace

TEST(Stack, CompositionOfBlocks)
{
    ParamStore<double> store;
    std::vector<BlockParams> blocks{make_block(store, 3, 4, 3, 4, {}, "stb0"),
                                    make_block(store, 3, 3, 4, 4, {}, "stb1")};
    test::jitter(store, 9);
    Rng rng(20);
    const Batch b = random_batch(rng, 5, 3, 4, 5, 4);
    const auto enc = to_encoded(b, 3, 4);

    const auto none = stack_forward<double>(store, {}, enc);
    EXPECT_EQ(none.features, enc.features);
    EXPECT_EQ(none.behaviors, enc.behaviors);

    const auto one = stack_forward<double>(store, {blocks[0]}, enc);
    const auto b0 = block_forward<double>(store, blocks[0], enc.features, enc.behaviors, enc.seq_len, 5, enc.scenario);
    EXPECT_EQ(one.features, b0.out_features);
    EXPECT_EQ(one.behaviors, b0.out_behaviors);

    const auto two = stack_forward<double>(store, blocks, enc);
    const auto b1 = block_forward<double>(store, blocks[1], b0.out_features, b0.out_behaviors, enc.seq_len, 5, enc.scenario);
    EXPECT_EQ(two.features, b1.out_features);
    EXPECT_EQ(two.behaviors, b1.out_behaviors);
}

namespace {

// Gradient of <R1, features_L> + <R2, behaviors_L> through a two-block stack, with the
// stack inputs registered as parameters so their gradients are checked as well.
double stack_grad_error(BlockFlags flags, std::uint64_t seed)
{
    const Index n = 3, d = 4, nb = 5, B = 4;
    Rng rng(seed);
    const Batch b = random_batch(rng, B, n, d, nb, d);
    ParamStore<double> store;
    std::vector<BlockParams> blocks{make_block(store, n, d, d, d, flags, "stb0", seed),
                                    make_block(store, n, d, d, d, flags, "stb1", seed)};
    test::jitter(store, seed);
    store.add("in/features", b.features);
    store.add("in/behaviors", b.behaviors);
    store.add("in/scenario", b.scenario);
    const Matrix<double> r1 = random_matrix(rng, B, n * d), r2 = random_matrix(rng, B * nb, d);

    const auto f = [&](const auto& p, auto* g) {
        using T = typename std::decay_t<decltype(p["in/features"])>::Scalar;
        EncodedBatch<T> e;
        e.size = B;
        e.n_fields = n;
        e.max_seq = nb;
        e.dim = d;
        e.features = p["in/features"];
        e.behaviors = p["in/behaviors"];
        e.seq_len = b.seq_len;
        e.target = Matrix<T>::Zero(B, d);
        e.scenario = p["in/scenario"];
        const auto st = stack_forward<T>(p, blocks, e);
        if (g) {
            const auto in = stack_backward<T>(p, blocks, st, r1.cast<T>(), r2.cast<T>(), *g);
            (*g)["in/features"] += in.features;
            (*g)["in/behaviors"] += in.behaviors;
            if (in.scenario.size())
                (*g)["in/scenario"] += in.scenario;
        }
        return test::weighted_sum(st.features, r1) + test::weighted_sum(st.behaviors, r2);
    };
    return test::max_grad_error(store, f);
}

} // namespace

TEST(Stack, BackwardMatchesFiniteDifferences)
{
    for (std::uint64_t seed : {1, 2}) {
        for (int variant = 0; variant < 5; ++variant) {
            BlockFlags flags;
            flags.no_dap = variant == 1 || variant == 4;
            flags.no_sam = variant == 2 || variant == 4;
            flags.no_rtm = variant == 3 || variant == 4;
            EXPECT_LT(stack_grad_error(flags, seed), 1e-4) << "variant " << variant << " seed " << seed;
        }
    }
}
