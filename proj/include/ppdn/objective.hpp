#pragma once

// Peak-piloted training objective:
//
//   total = (j1_weight * J1 + J2 + J3) / N + lambda * sum_k ||W_k||^2
//   J1    = sum_i || n(f(x_peak_i)) - n(f(x_nonpeak_i)) ||^2
//   J2    = sum_i CE(y_peak_i, logits(x_peak_i))
//   J3    = sum_i CE(y_nonpeak_i, logits(x_nonpeak_i))
//
// f(x) concatenates the omega-layer features of x and n() is the per-sample
// L2 normalization. Biases are not decayed.

#include <span>
#include <string>
#include <vector>

#include "ppdn/graph.hpp"
#include "ppdn/network.hpp"

namespace ppdn {

// Aligned (non-peak, peak) rows; row i of both tensors comes from the same
// subject and class.
struct PairBatch {
    Tensor x_nonpeak;
    Tensor x_peak;
    std::vector<std::size_t> y_nonpeak;
    std::vector<std::size_t> y_peak;

    std::size_t size() const noexcept { return y_nonpeak.size(); }

    void validate(const NetworkConfig& config) const {
        const std::size_t n = size();
        if (n == 0) throw Error("pair batch is empty");
        if (y_peak.size() != n || x_nonpeak.shape() != Shape{n, config.input_dim} ||
            x_peak.shape() != Shape{n, config.input_dim}) {
            throw Error("pair batch: inconsistent shapes for " + std::to_string(n) + " rows of width " +
                        std::to_string(config.input_dim));
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (y_nonpeak[i] != y_peak[i]) {
                throw Error("pair batch: row " + std::to_string(i) + " pairs different classes");
            }
            if (y_nonpeak[i] >= config.num_classes) {
                throw Error("pair batch: label " + std::to_string(y_nonpeak[i]) + " out of range");
            }
        }
    }
};

enum class BranchGating { none, suppress_peak };

// How omega features are normalized before the distance is taken.
enum class OmegaNormalization {
    concat,     // one vector per sample across all omega layers
    per_layer,  // each layer separately
    none,       // raw features, for analysis only
};

struct ObjectiveConfig {
    double lambda = 0.0002;
    double j1_weight = 1.0;
    OmegaNormalization normalization = OmegaNormalization::concat;
};

struct LossBreakdown {
    double j1 = 0.0;
    double j2 = 0.0;
    double j3 = 0.0;
    double reg = 0.0;
    double total = 0.0;
    double lambda = 0.0;
};

// Gate state on each branch of the feature-matching term.
struct BranchGates {
    GateMode nonpeak = GateMode::open;
    GateMode peak = GateMode::open;
};

inline BranchGates gates_for(BranchGating gating) {
    return gating == BranchGating::suppress_peak ? BranchGates{GateMode::open, GateMode::blocked} : BranchGates{};
}

inline NodeId feature_match_loss(Graph& graph, std::span<const NodeId> nonpeak, std::span<const NodeId> peak,
                                 BranchGates gates = {},
                                 OmegaNormalization normalization = OmegaNormalization::concat) {
    if (nonpeak.size() != peak.size() || nonpeak.empty()) {
        throw Error("feature_match_loss: need equally many non-empty feature lists");
    }
    auto branch = [&](std::span<const NodeId> features, GateMode mode) {
        std::vector<NodeId> parts;
        for (auto f : features) {
            NodeId g = graph.gate(f, mode);
            if (normalization == OmegaNormalization::per_layer) g = graph.l2_normalize(g);
            parts.push_back(g);
        }
        NodeId v = graph.concat(parts);
        if (normalization == OmegaNormalization::concat) v = graph.l2_normalize(v);
        return v;
    };
    for (std::size_t k = 0; k < nonpeak.size(); ++k) {
        if (graph.shape(nonpeak[k]) != graph.shape(peak[k])) {
            throw Error("feature_match_loss: layer " + std::to_string(k) + " shapes differ: " +
                        to_string(graph.shape(nonpeak[k])) + " vs " + to_string(graph.shape(peak[k])));
        }
    }
    const NodeId vn = branch(nonpeak, gates.nonpeak);
    const NodeId vp = branch(peak, gates.peak);
    return graph.squared_diff_sum(vp, vn);
}

struct ObjectiveGraph {
    ParamNodes params;
    ForwardResult nonpeak;
    ForwardResult peak;
    NodeId j1, j2, j3, reg;
    NodeId data;   // (j1_weight * J1 + J2 + J3) / N
    NodeId total;  // data + lambda * reg
    LossBreakdown breakdown;
};

// Records the objective on `graph` and evaluates it.
inline ObjectiveGraph ppdn_loss(Graph& graph, const NetworkParams& params, const NetworkConfig& config,
                                const PairBatch& batch, const ObjectiveConfig& objective, BranchGates gates) {
    if (objective.lambda < 0.0) throw Error("ppdn_loss: lambda must be non-negative");
    check_compatible(params, config);
    batch.validate(config);
    const double n = static_cast<double>(batch.size());

    ObjectiveGraph og;
    og.params = bind_params(graph, params);
    const NodeId xn = graph.input(batch.x_nonpeak, "x_nonpeak");
    const NodeId xp = graph.input(batch.x_peak, "x_peak");
    og.nonpeak = forward_pass(graph, og.params, config, xn);
    og.peak = forward_pass(graph, og.params, config, xp);

    og.j1 = og.nonpeak.omega_features.empty()
                ? graph.input(Tensor::scalar(0.0), "j1_empty")
                : feature_match_loss(graph, og.nonpeak.omega_features, og.peak.omega_features, gates,
                                     objective.normalization);
    og.j2 = graph.softmax_cross_entropy(og.peak.logits, batch.y_peak);
    og.j3 = graph.softmax_cross_entropy(og.nonpeak.logits, batch.y_nonpeak);

    og.reg = graph.input(Tensor::scalar(0.0), "reg_zero");
    for (auto w : og.params.weights) {
        const NodeId zero = graph.input(Tensor(graph.shape(w), 0.0));
        og.reg = graph.add(og.reg, graph.squared_diff_sum(w, zero));
    }

    const NodeId matched = graph.scale(og.j1, objective.j1_weight);
    og.data = graph.scale(graph.add(graph.add(matched, og.j2), og.j3), 1.0 / n);
    og.total = graph.add(og.data, graph.scale(og.reg, objective.lambda));

    graph.forward();
    og.breakdown = {graph.value(og.j1).item(),  graph.value(og.j2).item(),    graph.value(og.j3).item(),
                    graph.value(og.reg).item(), graph.value(og.total).item(), objective.lambda};
    return og;
}

inline ObjectiveGraph ppdn_loss(Graph& graph, const NetworkParams& params, const NetworkConfig& config,
                                const PairBatch& batch, const ObjectiveConfig& objective, BranchGating gating) {
    return ppdn_loss(graph, params, config, batch, objective, gates_for(gating));
}

struct DataGradients {
    NetworkParams grads;  // d data / d params, decay excluded
    LossBreakdown breakdown;
};

inline DataGradients data_gradients(const NetworkParams& params, const NetworkConfig& config,
                                    const PairBatch& batch, const ObjectiveConfig& objective,
                                    BranchGating gating) {
    Graph graph;
    auto og = ppdn_loss(graph, params, config, batch, objective, gating);
    graph.backward(og.data);
    return {collect_grads(graph, og.params), og.breakdown};
}

} // namespace ppdn
