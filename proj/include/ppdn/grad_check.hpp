#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ppdn/graph.hpp"

namespace ppdn {

// Gradients of a scalar loss, one tensor per parameter node in graph order.
struct GradientSet {
    std::vector<NodeId> params;
    std::vector<Tensor> grads;
};

struct ParameterCheck {
    NodeId param;
    std::string name;
    double max_relative_error = 0.0;
    double max_abs_analytic = 0.0;
};

struct GradCheckReport {
    std::vector<ParameterCheck> parameters;
    double max_relative_error = 0.0;

    bool passed(double threshold) const { return max_relative_error < threshold; }
};

inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

inline GradientSet analytic_gradients(Graph& graph, NodeId loss) {
    graph.forward();
    graph.backward(loss);
    GradientSet out;
    out.params = graph.parameters();
    for (auto p : out.params) out.grads.push_back(graph.grad(p));
    return out;
}

// Central differences (L(w + eps) - L(w - eps)) / 2 eps for every parameter
// entry. Blocked gates keep the values of the unperturbed evaluation, so the
// probe differentiates the same gated function that backward() does.
inline GradientSet numeric_gradients(Graph& graph, NodeId loss, double epsilon) {
    if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
        throw Error("grad_check: epsilon " + std::to_string(epsilon) + " outside [1e-7, 1e-3]");
    }
    graph.forward();
    GradientSet out;
    out.params = graph.parameters();
    for (auto p : out.params) {
        Tensor base = graph.value(p);
        Tensor g(base.shape(), 0.0);
        Tensor probe = base;
        for (std::size_t i = 0; i < base.size(); ++i) {
            probe[i] = base[i] + epsilon;
            graph.set_value(p, probe);
            graph.forward({}, BlockedGates::hold_values);
            const double up = graph.value(loss).item();
            probe[i] = base[i] - epsilon;
            graph.set_value(p, probe);
            graph.forward({}, BlockedGates::hold_values);
            const double down = graph.value(loss).item();
            probe[i] = base[i];
            g[i] = (up - down) / (2.0 * epsilon);
        }
        graph.set_value(p, base);
        out.grads.push_back(std::move(g));
    }
    graph.forward();
    return out;
}

inline GradCheckReport compare_gradients(const Graph& graph, const GradientSet& analytic,
                                         const GradientSet& numeric) {
    if (analytic.params != numeric.params) throw Error("compare_gradients: parameter sets differ");
    GradCheckReport report;
    for (std::size_t k = 0; k < analytic.params.size(); ++k) {
        ParameterCheck pc{analytic.params[k], graph.entry(analytic.params[k]).name};
        const Tensor& a = analytic.grads[k];
        const Tensor& n = numeric.grads[k];
        for (std::size_t i = 0; i < a.size(); ++i) {
            pc.max_relative_error = std::max(pc.max_relative_error, relative_error(a[i], n[i]));
            pc.max_abs_analytic = std::max(pc.max_abs_analytic, std::abs(a[i]));
        }
        report.max_relative_error = std::max(report.max_relative_error, pc.max_relative_error);
        report.parameters.push_back(std::move(pc));
    }
    return report;
}

inline GradCheckReport grad_check(Graph& graph, NodeId loss, double epsilon) {
    const GradientSet analytic = analytic_gradients(graph, loss);
    const GradientSet numeric = numeric_gradients(graph, loss, epsilon);
    return compare_gradients(graph, analytic, numeric);
}

} // namespace ppdn
