#pragma once

#include <optional>
#include <span>
#include <string>

#include "ppdn/objective.hpp"

namespace ppdn {

enum class UpdateMode { sgd, pgs };

struct OptimizerConfig {
    double learning_rate = 0.05;
    double lambda = 0.0002;
    UpdateMode mode = UpdateMode::pgs;
    std::size_t iterations = 1000;
    std::size_t batch_size = 32;

    void validate() const {
        // A zero rate freezes the parameters; the harness config requires > 0.
        if (!(learning_rate >= 0.0)) throw Error("optimizer: learning-rate must be non-negative");
        if (lambda < 0.0) throw Error("optimizer: lambda must be non-negative");
        if (batch_size == 0) throw Error("optimizer: batch-size must be positive");
    }
};

// sgd differentiates the full objective; pgs blocks the peak branch of J1.
inline BranchGating gating_for(UpdateMode mode) {
    return mode == UpdateMode::pgs ? BranchGating::suppress_peak : BranchGating::none;
}

// W <- W - lr * (grad + 2 lambda W) for weights, b <- b - lr * grad for biases.
// `grads` are gradients of the averaged data term only. params is left
// untouched if the update fails.
inline void step(NetworkParams& params, const NetworkParams& grads, const OptimizerConfig& config) {
    if (grads.layers.size() != params.layers.size()) {
        throw Error("step: gradients for " + std::to_string(grads.layers.size()) + " layers, expected " +
                    std::to_string(params.layers.size()));
    }
    NetworkParams next = params;
    const double lr = config.learning_rate;
    for (std::size_t k = 0; k < next.layers.size(); ++k) {
        auto& w = next.layers[k].weight;
        auto& b = next.layers[k].bias;
        const auto& gw = grads.layers[k].weight;
        const auto& gb = grads.layers[k].bias;
        if (gw.shape() != w.shape()) throw Error("step: missing or misshaped gradient for W" + std::to_string(k));
        if (gb.shape() != b.shape()) throw Error("step: missing or misshaped gradient for b" + std::to_string(k));
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * (gw[i] + 2.0 * config.lambda * w[i]);
        for (std::size_t i = 0; i < b.size(); ++i) b[i] -= lr * gb[i];
        if (!w.all_finite()) throw NumericalError("step: non-finite update for W" + std::to_string(k));
        if (!b.all_finite()) throw NumericalError("step: non-finite update for b" + std::to_string(k));
    }
    params = std::move(next);
}

inline LossBreakdown& operator+=(LossBreakdown& a, const LossBreakdown& b) {
    a.j1 += b.j1;
    a.j2 += b.j2;
    a.j3 += b.j3;
    a.reg += b.reg;
    a.total += b.total;
    a.lambda = b.lambda;
    return a;
}

// One pass over `batches`: forward, backward and step per batch. Returns the
// mean pre-step breakdown, or nothing for an empty sequence.
inline std::optional<LossBreakdown> train_epoch(NetworkParams& params, std::span<const PairBatch> batches,
                                                const NetworkConfig& network, const ObjectiveConfig& objective,
                                                const OptimizerConfig& optimizer) {
    optimizer.validate();
    if (batches.empty()) return std::nullopt;
    LossBreakdown mean;
    for (const auto& batch : batches) {
        auto dg = data_gradients(params, network, batch, objective, gating_for(optimizer.mode));
        step(params, dg.grads, optimizer);
        mean += dg.breakdown;
    }
    const double n = static_cast<double>(batches.size());
    mean.j1 /= n;
    mean.j2 /= n;
    mean.j3 /= n;
    mean.reg /= n;
    mean.total /= n;
    return mean;
}

} // namespace ppdn
