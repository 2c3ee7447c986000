#include <gtest/gtest.h>

#include <random>

#include "ppdn/descent.hpp"
#include "ppdn/optimizer.hpp"
#include "test_util.hpp"

using namespace ppdn;

namespace {

NetworkParams single_weight(double w) {
    NetworkParams p;
    p.layers.push_back({Tensor::matrix(1, 1, {w}), Tensor::vector({0.0})});
    return p;
}

double total_loss(const NetworkParams& p, const NetworkConfig& c, const PairBatch& b, const ObjectiveConfig& o) {
    Graph g;
    return ppdn_loss(g, p, c, b, o, BranchGating::none).breakdown.total;
}

} // namespace

TEST(Step, PlainGradient) {
    auto p = single_weight(1.0);
    auto g = single_weight(1.0);
    step(p, g, {0.1, 0.0});
    EXPECT_DOUBLE_EQ(p.layers[0].weight[0], 0.9);
}

TEST(Step, DecayOnly) {
    auto p = single_weight(1.0);
    auto g = single_weight(0.0);
    step(p, g, {0.1, 0.5});
    EXPECT_DOUBLE_EQ(p.layers[0].weight[0], 0.9);
}

TEST(Step, BiasNotDecayed) {
    auto p = single_weight(1.0);
    p.layers[0].bias[0] = 2.0;
    auto g = p.zeros_like();
    step(p, g, {0.1, 0.5});
    EXPECT_DOUBLE_EQ(p.layers[0].bias[0], 2.0);
}

TEST(Step, MissingGradient) {
    auto p = single_weight(1.0);
    NetworkParams g;
    EXPECT_THROW(step(p, g, {0.1, 0.0}), Error);
    NetworkParams wrong;
    wrong.layers.push_back({Tensor::matrix(1, 2, {0, 0}), Tensor::vector({0})});
    EXPECT_THROW(step(p, wrong, {0.1, 0.0}), Error);
}

TEST(Step, NonFiniteUpdateNamesParameterAndKeepsParams) {
    auto p = single_weight(1.0);
    auto g = single_weight(1e308);
    try {
        step(p, g, {1e10, 0.0});
        FAIL() << "expected throw";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("W0"), std::string::npos);
    }
    EXPECT_EQ(p.layers[0].weight[0], 1.0);
}

TEST(Step, SmallSgdStepDecreasesLoss) {
    auto c = test::small_config();
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed);
        auto p = test::random_params(c, rng);
        auto b = test::random_batch(c, 4, rng);
        ObjectiveConfig o;
        const OptimizerConfig opt{1e-4, o.lambda, UpdateMode::sgd};
        const double before = total_loss(p, c, b, o);
        step(p, data_gradients(p, c, b, o, BranchGating::none).grads, opt);
        EXPECT_LT(total_loss(p, c, b, o), before);
    }
}

TEST(TrainEpoch, EmptyDataLeavesParams) {
    auto c = test::small_config();
    auto p = build_network(c, 1);
    const auto before = p;
    EXPECT_FALSE(train_epoch(p, std::span<const PairBatch>{}, c, {}, {}).has_value());
    EXPECT_EQ(p, before);
}

TEST(TrainEpoch, ZeroRateLeavesParams) {
    auto c = test::small_config();
    std::mt19937_64 rng(1);
    auto p = build_network(c, 1);
    const auto before = p;
    std::vector<PairBatch> data{test::random_batch(c, 3, rng)};
    OptimizerConfig opt;
    opt.learning_rate = 0.0;
    opt.lambda = 0.0;
    EXPECT_TRUE(train_epoch(p, data, c, {0.0}, opt).has_value());
    EXPECT_EQ(p, before);
}

TEST(TrainEpoch, ReplaysTwoManualSteps) {
    auto c = test::small_config();
    std::mt19937_64 rng(2);
    auto p = test::random_params(c, rng);
    const auto b = test::random_batch(c, 4, rng);
    ObjectiveConfig o;
    OptimizerConfig opt{0.05, o.lambda, UpdateMode::sgd};
    auto manual = p;
    for (int i = 0; i < 2; ++i) step(manual, data_gradients(manual, c, b, o, BranchGating::none).grads, opt);
    std::vector<PairBatch> data{b, b};
    const auto mean = train_epoch(p, data, c, o, opt);
    EXPECT_EQ(p, manual);
    ASSERT_TRUE(mean.has_value());
    EXPECT_GT(mean->total, 0.0);
}

TEST(TrainEpochProperty, ModesCoincideWithoutMatching) {
    auto c = test::small_config();
    std::mt19937_64 rng(3);
    auto init = test::random_params(c, rng);
    std::vector<PairBatch> data;
    for (int i = 0; i < 5; ++i) data.push_back(test::random_batch(c, 4, rng));
    ObjectiveConfig o;
    o.j1_weight = 0.0;
    auto a = init, b = init;
    for (int epoch = 0; epoch < 3; ++epoch) {
        train_epoch(a, data, c, o, {0.05, o.lambda, UpdateMode::sgd});
        train_epoch(b, data, c, o, {0.05, o.lambda, UpdateMode::pgs});
    }
    EXPECT_EQ(a, b);
}

TEST(StepProperty, SgdMinusPgsIsPeakMatchingTerm) {
    auto c = test::small_config();
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        std::mt19937_64 rng(seed);
        const auto p = test::random_params(c, rng);
        const std::size_t n = 2 + seed % 5;
        const auto b = test::random_batch(c, n, rng);
        ObjectiveConfig o;
        const double lr = 0.03;
        auto ps = p, pp = p;
        step(ps, data_gradients(p, c, b, o, BranchGating::none).grads, {lr, o.lambda, UpdateMode::sgd});
        step(pp, data_gradients(p, c, b, o, BranchGating::suppress_peak).grads, {lr, o.lambda, UpdateMode::pgs});
        const auto w = p.flatten(), ws = ps.flatten(), wp = pp.flatten();
        const auto ab = compute_ab(p, c, b);
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double update_sgd = w[i] - ws[i];
            const double update_pgs = w[i] - wp[i];
            EXPECT_NEAR(update_sgd - update_pgs, lr / static_cast<double>(n) * 2.0 * ab.b[i], 1e-10);
        }
    }
}
