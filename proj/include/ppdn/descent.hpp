#pragma once

// Numerical check that the peak-suppressed update is a descent direction.
//
// With g(x) the normalized omega features,
//   A = sum_i (g(x_peak_i) - g(x_nonpeak_i)) . dg(x_nonpeak_i)/dW
//   B = sum_i (g(x_peak_i) - g(x_nonpeak_i)) . dg(x_peak_i)/dW
// the full gradient of J1 is 2B - 2A and the suppressed one is -2A, so
//   <grad J1, suppressed grad J1> = -4 <A, B> + 4 ||A||^2,
// which is positive whenever ||B|| cos(theta) < ||A||.

#include <vector>

#include "ppdn/objective.hpp"

namespace ppdn {

struct ABPair {
    std::vector<double> a;
    std::vector<double> b;
};

struct DescentReport {
    double norm_a = 0.0;
    double norm_b = 0.0;
    double cos_theta = 0.0;
    double dot_value = 0.0;
    bool condition_a8 = false;
    double identity_residual = 0.0;
    bool total_loss_descent = false;
};

// Flattened gradient of the raw J1 sum with the given branch gates.
inline std::vector<double> j1_gradient(const NetworkParams& params, const NetworkConfig& config,
                                       const PairBatch& batch, BranchGates gates,
                                       OmegaNormalization normalization = OmegaNormalization::concat) {
    config.validate(true);
    check_compatible(params, config);
    batch.validate(config);
    Graph graph;
    const ParamNodes nodes = bind_params(graph, params);
    const auto fn = forward_pass(graph, nodes, config, graph.input(batch.x_nonpeak));
    const auto fp = forward_pass(graph, nodes, config, graph.input(batch.x_peak));
    const NodeId j1 = feature_match_loss(graph, fn.omega_features, fp.omega_features, gates, normalization);
    graph.forward();
    graph.backward(j1);
    return collect_grads(graph, nodes).flatten();
}

inline ABPair compute_ab(const NetworkParams& params, const NetworkConfig& config, const PairBatch& batch,
                         OmegaNormalization normalization = OmegaNormalization::concat) {
    // Only the non-peak branch open: grad = -2A. Only the peak branch open: grad = 2B.
    ABPair ab{j1_gradient(params, config, batch, {GateMode::open, GateMode::blocked}, normalization),
              j1_gradient(params, config, batch, {GateMode::blocked, GateMode::open}, normalization)};
    for (auto& v : ab.a) v *= -0.5;
    for (auto& v : ab.b) v *= 0.5;
    return ab;
}

// Data-term gradient plus the 2 lambda W decay, flattened.
inline std::vector<double> update_direction(const NetworkParams& params, const NetworkConfig& config,
                                            const PairBatch& batch, const ObjectiveConfig& objective,
                                            BranchGating gating) {
    NetworkParams g = data_gradients(params, config, batch, objective, gating).grads;
    for (std::size_t k = 0; k < g.layers.size(); ++k) {
        auto& gw = g.layers[k].weight;
        const auto& w = params.layers[k].weight;
        for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += 2.0 * objective.lambda * w[i];
    }
    return g.flatten();
}

inline DescentReport descent_report(const NetworkParams& params, const NetworkConfig& config,
                                    const PairBatch& batch, const ObjectiveConfig& objective) {
    const ABPair ab = compute_ab(params, config, batch, objective.normalization);
    const auto full = j1_gradient(params, config, batch, {}, objective.normalization);
    const auto suppressed =
        j1_gradient(params, config, batch, gates_for(BranchGating::suppress_peak), objective.normalization);

    DescentReport r;
    r.norm_a = norm(ab.a);
    r.norm_b = norm(ab.b);
    const double ab_dot = dot(ab.a, ab.b);
    r.cos_theta = (r.norm_a > 0.0 && r.norm_b > 0.0) ? std::clamp(ab_dot / (r.norm_a * r.norm_b), -1.0, 1.0) : 0.0;
    r.dot_value = dot(full, suppressed);
    const double identity = -4.0 * ab_dot + 4.0 * r.norm_a * r.norm_a;
    r.identity_residual = std::abs(r.dot_value - identity);
    r.condition_a8 = (r.norm_a > 0.0 || r.norm_b > 0.0) && r.norm_b * r.cos_theta < r.norm_a;

    const auto total_grad = update_direction(params, config, batch, objective, BranchGating::none);
    const auto pgs_dir = update_direction(params, config, batch, objective, BranchGating::suppress_peak);
    r.total_loss_descent = dot(total_grad, pgs_dir) > 0.0;
    return r;
}

} // namespace ppdn
