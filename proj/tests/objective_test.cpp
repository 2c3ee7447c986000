#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ppdn/grad_check.hpp"
#include "ppdn/objective.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace ppdn;

namespace {

double match_value(const std::vector<Tensor>& nonpeak, const std::vector<Tensor>& peak) {
    Graph g;
    std::vector<NodeId> n, p;
    for (const auto& t : nonpeak) n.push_back(g.input(t));
    for (const auto& t : peak) p.push_back(g.input(t));
    auto l = feature_match_loss(g, n, p);
    g.forward();
    return g.value(l).item();
}

} // namespace

TEST(FeatureMatch, IdenticalFeaturesGiveZero) {
    const auto f = Tensor::matrix(2, 3, {1, 2, 3, -1, 0, 4});
    EXPECT_EQ(match_value({f}, {f}), 0.0);
}

TEST(FeatureMatch, OrthonormalVectors) {
    EXPECT_DOUBLE_EQ(match_value({Tensor::matrix(1, 2, {1, 0})}, {Tensor::matrix(1, 2, {0, 1})}), 2.0);
}

TEST(FeatureMatch, ScaleInvariantAfterNormalization) {
    EXPECT_DOUBLE_EQ(match_value({Tensor::matrix(1, 2, {2, 0})}, {Tensor::matrix(1, 2, {0, 3})}), 2.0);
}

TEST(FeatureMatch, ConcatenatesLayersBeforeNormalizing) {
    // Layers [3] and [4] concatenate to [3, 4] -> [0.6, 0.8]; peak [0, 0] + [0, 5] -> [0, 1].
    const double v = match_value({Tensor::matrix(1, 1, {3}), Tensor::matrix(1, 1, {4})},
                                 {Tensor::matrix(1, 1, {0}), Tensor::matrix(1, 1, {5})});
    EXPECT_NEAR(v, 0.36 + 0.04, 1e-15);
}

TEST(FeatureMatch, ShapeMismatch) {
    Graph g;
    std::vector<NodeId> n{g.input(Tensor(Shape{1, 2}))};
    std::vector<NodeId> p{g.input(Tensor(Shape{1, 3}))};
    EXPECT_THROW(feature_match_loss(g, n, p), Error);
    std::vector<NodeId> two{n[0], n[0]};
    EXPECT_THROW(feature_match_loss(g, two, n), Error);
}

TEST(PpdnLoss, PairCollapse) {
    auto c = test::small_config();
    std::mt19937_64 rng(1);
    auto p = test::random_params(c, rng);
    auto b = test::random_batch(c, 1, rng);
    b.x_peak = b.x_nonpeak;
    Graph g;
    const auto og = ppdn_loss(g, p, c, b, {0.0}, BranchGating::none);
    EXPECT_EQ(og.breakdown.j1, 0.0);
    EXPECT_EQ(og.breakdown.j2, og.breakdown.j3);
    EXPECT_DOUBLE_EQ(og.breakdown.total, 2.0 * og.breakdown.j2);
}

TEST(PpdnLoss, ZeroNetworkUniformSoftmax) {
    auto c = test::small_config();
    std::mt19937_64 rng(2);
    auto p = build_network(c, 1).zeros_like();
    auto b = test::random_batch(c, 5, rng);
    Graph g;
    const auto og = ppdn_loss(g, p, c, b, {0.0}, BranchGating::none);
    EXPECT_EQ(og.breakdown.j1, 0.0);
    EXPECT_NEAR(og.breakdown.j2, 5.0 * std::log(3.0), 1e-12);
    EXPECT_NEAR(og.breakdown.j3, 5.0 * std::log(3.0), 1e-12);
}

TEST(PpdnLoss, MatchesStraightLineOracle) {
    auto c = test::small_config();
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed);
        auto p = test::random_params(c, rng);
        auto b = test::random_batch(c, 4, rng);
        Graph g;
        const auto got = ppdn_loss(g, p, c, b, {0.0002}, BranchGating::none).breakdown;
        const auto want = oracle::ppdn_loss(p, c, b, 0.0002);
        EXPECT_NEAR(got.total, want.total, 1e-10);
        EXPECT_NEAR(got.j1, want.j1, 1e-10);
        EXPECT_NEAR(got.j2, want.j2, 1e-10);
        EXPECT_NEAR(got.j3, want.j3, 1e-10);
        EXPECT_NEAR(got.reg, want.reg, 1e-10);
    }
}

TEST(PpdnLoss, LabelOutOfRange) {
    auto c = test::small_config();
    std::mt19937_64 rng(3);
    auto p = build_network(c, 1);
    auto b = test::random_batch(c, 2, rng);
    b.y_nonpeak[1] = b.y_peak[1] = 7;
    Graph g;
    EXPECT_THROW(ppdn_loss(g, p, c, b, {}, BranchGating::none), Error);
}

TEST(PpdnLoss, MismatchedPairLabelsRejected) {
    auto c = test::small_config();
    std::mt19937_64 rng(3);
    auto b = test::random_batch(c, 2, rng);
    b.y_peak[0] = (b.y_nonpeak[0] + 1) % 3;
    Graph g;
    EXPECT_THROW(ppdn_loss(g, build_network(c, 1), c, b, {}, BranchGating::none), Error);
}

TEST(PpdnLoss, NegativeLambdaRejected) {
    auto c = test::small_config();
    std::mt19937_64 rng(3);
    Graph g;
    EXPECT_THROW(ppdn_loss(g, build_network(c, 1), c, test::random_batch(c, 2, rng), {-1.0}, BranchGating::none),
                 Error);
}

TEST(PpdnLossProperty, GatingLeavesForwardBitwiseIdentical) {
    auto c = test::small_config();
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        std::mt19937_64 rng(seed);
        auto p = test::random_params(c, rng);
        auto b = test::random_batch(c, 1 + seed % 6, rng);
        Graph g1, g2;
        const auto a = ppdn_loss(g1, p, c, b, {}, BranchGating::none).breakdown;
        const auto s = ppdn_loss(g2, p, c, b, {}, BranchGating::suppress_peak).breakdown;
        EXPECT_EQ(a.total, s.total);
        EXPECT_EQ(a.j1, s.j1);
    }
}

TEST(PpdnLossProperty, J1BoundAndNonNegativity) {
    auto c = test::small_config();
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        std::mt19937_64 rng(seed);
        auto p = test::random_params(c, rng);
        const std::size_t n = 1 + seed % 5;
        auto b = test::random_batch(c, n, rng);
        Graph g;
        const auto r = ppdn_loss(g, p, c, b, {}, BranchGating::none).breakdown;
        EXPECT_GE(r.j1, 0.0);
        EXPECT_LE(r.j1, 4.0 * static_cast<double>(n) + 1e-12);
        EXPECT_GE(r.j2, 0.0);
        EXPECT_GE(r.j3, 0.0);
        EXPECT_GE(r.reg, 0.0);
    }
}

TEST(PpdnLossProperty, SwappingBranchesSwapsCrossEntropies) {
    auto c = test::small_config();
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        auto p = test::random_params(c, rng);
        auto b = test::random_batch(c, 3, rng);
        PairBatch swapped{b.x_peak, b.x_nonpeak, b.y_peak, b.y_nonpeak};
        Graph g1, g2;
        const auto a = ppdn_loss(g1, p, c, b, {}, BranchGating::none).breakdown;
        const auto s = ppdn_loss(g2, p, c, swapped, {}, BranchGating::none).breakdown;
        EXPECT_NEAR(a.j1, s.j1, 1e-14);
        EXPECT_EQ(a.j2, s.j3);
        EXPECT_EQ(a.j3, s.j2);
    }
}

TEST(PpdnLoss, GradCheckBothGatings) {
    auto c = test::small_config();
    std::mt19937_64 rng(12);
    auto p = test::random_params(c, rng);
    auto b = test::random_batch(c, 4, rng);
    for (auto gating : {BranchGating::none, BranchGating::suppress_peak}) {
        Graph g;
        const auto og = ppdn_loss(g, p, c, b, {0.01}, gating);
        EXPECT_LT(grad_check(g, og.total, 1e-5).max_relative_error, 1e-4);
    }
}

TEST(PpdnLoss, PerLayerNormalizationGradCheck) {
    auto c = test::small_config();
    std::mt19937_64 rng(13);
    auto p = test::random_params(c, rng);
    auto b = test::random_batch(c, 3, rng);
    ObjectiveConfig o;
    o.normalization = OmegaNormalization::per_layer;
    Graph g;
    const auto og = ppdn_loss(g, p, c, b, o, BranchGating::none);
    EXPECT_LE(og.breakdown.j1, 4.0 * 2 * 3);
    EXPECT_LT(grad_check(g, og.total, 1e-5).max_relative_error, 1e-4);
}

TEST(PpdnLoss, SuppressedGradientDiffersOnlyByPeakMatchingTerm) {
    // grad(none) - grad(suppress) must equal the gradient of J1/N through the
    // peak branch alone.
    auto c = test::small_config();
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        auto p = test::random_params(c, rng);
        auto b = test::random_batch(c, 4, rng);
        const auto full = data_gradients(p, c, b, {}, BranchGating::none).grads.flatten();
        const auto supp = data_gradients(p, c, b, {}, BranchGating::suppress_peak).grads.flatten();
        Graph g;
        auto og = ppdn_loss(g, p, c, b, {}, BranchGates{GateMode::blocked, GateMode::open});
        auto peak_only_nodes = og.params;
        // Differentiate J1 alone on this graph (nonpeak side blocked).
        g.backward(og.j1);
        const auto peak_only = collect_grads(g, peak_only_nodes).flatten();
        for (std::size_t i = 0; i < full.size(); ++i) {
            EXPECT_NEAR(full[i] - supp[i], peak_only[i] / 4.0, 1e-10);
        }
    }
}
