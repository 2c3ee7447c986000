#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "ppdn/graph.hpp"

namespace ppdn {

enum class Activation { relu };

// Feedforward classifier layout. Layer k maps dims[k] -> dims[k + 1] where
// dims = {input_dim, hidden_dims..., num_classes}. omega_layers index the
// post-activation outputs of hidden layers whose features enter the
// feature-matching loss.
struct NetworkConfig {
    std::size_t input_dim = 96;
    std::vector<std::size_t> hidden_dims{64, 32};
    std::size_t num_classes = 6;
    Activation activation = Activation::relu;
    std::vector<std::size_t> omega_layers{0, 1};

    std::vector<std::size_t> dims() const {
        std::vector<std::size_t> d{input_dim};
        d.insert(d.end(), hidden_dims.begin(), hidden_dims.end());
        d.push_back(num_classes);
        return d;
    }

    std::size_t num_layers() const { return hidden_dims.size() + 1; }

    void validate(bool require_omega = true) const {
        if (input_dim == 0) throw Error("network: input-dim must be positive");
        if (num_classes == 0) throw Error("network: num-classes must be positive");
        for (auto h : hidden_dims) {
            if (h == 0) throw Error("network: hidden dims must be positive");
        }
        if (require_omega && omega_layers.empty()) throw Error("network: omega-layers must be non-empty");
        for (std::size_t i = 0; i < omega_layers.size(); ++i) {
            if (omega_layers[i] >= hidden_dims.size()) {
                throw Error("network: omega layer " + std::to_string(omega_layers[i]) +
                            " is not a hidden layer (have " + std::to_string(hidden_dims.size()) + ")");
            }
            if (i > 0 && omega_layers[i] <= omega_layers[i - 1]) {
                throw Error("network: omega-layers must be strictly ascending");
            }
        }
    }

    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

struct DenseLayer {
    Tensor weight;  // fan_in x fan_out
    Tensor bias;    // fan_out

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct NetworkParams {
    std::vector<DenseLayer> layers;

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.weight.size() + l.bias.size();
        return n;
    }

    // Weights then bias for each layer, in layer order.
    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(count());
        for (const auto& l : layers) {
            out.insert(out.end(), l.weight.values().begin(), l.weight.values().end());
            out.insert(out.end(), l.bias.values().begin(), l.bias.values().end());
        }
        return out;
    }

    void unflatten(std::span<const double> flat) {
        if (flat.size() != count()) throw Error("unflatten: expected " + std::to_string(count()) + " values");
        std::size_t k = 0;
        for (auto& l : layers) {
            for (auto& v : l.weight.data()) v = flat[k++];
            for (auto& v : l.bias.data()) v = flat[k++];
        }
    }

    // Same shapes, all zero.
    NetworkParams zeros_like() const {
        NetworkParams z;
        for (const auto& l : layers) z.layers.push_back({Tensor(l.weight.shape()), Tensor(l.bias.shape())});
        return z;
    }

    friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

// Xavier-uniform weights, zero biases.
inline NetworkParams build_network(const NetworkConfig& config, std::uint64_t seed) {
    config.validate(false);
    std::mt19937_64 rng(seed);
    const auto d = config.dims();
    NetworkParams params;
    for (std::size_t k = 0; k + 1 < d.size(); ++k) {
        const double bound = std::sqrt(6.0 / static_cast<double>(d[k] + d[k + 1]));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Tensor w(Shape{d[k], d[k + 1]});
        for (auto& v : w.data()) v = dist(rng);
        params.layers.push_back({std::move(w), Tensor(Shape{d[k + 1]}, 0.0)});
    }
    return params;
}

inline void check_compatible(const NetworkParams& params, const NetworkConfig& config) {
    const auto d = config.dims();
    if (params.layers.size() + 1 != d.size()) throw Error("network: parameter layer count does not match config");
    for (std::size_t k = 0; k < params.layers.size(); ++k) {
        if (params.layers[k].weight.shape() != Shape{d[k], d[k + 1]} ||
            params.layers[k].bias.shape() != Shape{d[k + 1]}) {
            throw Error("network: layer " + std::to_string(k) + " shape does not match config");
        }
    }
}

// Parameter nodes registered once per graph and shared by every forward
// pass recorded on it.
struct ParamNodes {
    std::vector<NodeId> weights;
    std::vector<NodeId> biases;
};

inline ParamNodes bind_params(Graph& graph, const NetworkParams& params) {
    ParamNodes nodes;
    for (std::size_t k = 0; k < params.layers.size(); ++k) {
        nodes.weights.push_back(graph.parameter(params.layers[k].weight, "W" + std::to_string(k)));
        nodes.biases.push_back(graph.parameter(params.layers[k].bias, "b" + std::to_string(k)));
    }
    return nodes;
}

// Reads gradients for every bound parameter after backward().
inline NetworkParams collect_grads(const Graph& graph, const ParamNodes& nodes) {
    NetworkParams g;
    for (std::size_t k = 0; k < nodes.weights.size(); ++k) {
        g.layers.push_back({graph.grad(nodes.weights[k]), graph.grad(nodes.biases[k])});
    }
    return g;
}

struct ForwardResult {
    NodeId logits;
    std::vector<NodeId> omega_features;  // ascending layer index
};

inline ForwardResult forward_pass(Graph& graph, const ParamNodes& params, const NetworkConfig& config, NodeId x) {
    const auto& xs = graph.shape(x);
    if (xs.size() != 2 || xs[1] != config.input_dim) {
        throw Error("forward_pass: input shape " + to_string(xs) + ", expected (batch x " +
                    std::to_string(config.input_dim) + ")");
    }
    if (params.weights.size() != config.num_layers()) throw Error("forward_pass: parameter count mismatch");
    ForwardResult out;
    NodeId h = x;
    const std::size_t hidden = config.hidden_dims.size();
    for (std::size_t k = 0; k <= hidden; ++k) {
        h = graph.add(graph.matmul(h, params.weights[k]), params.biases[k]);
        if (k < hidden) {
            h = graph.relu(h);
            if (std::find(config.omega_layers.begin(), config.omega_layers.end(), k) != config.omega_layers.end()) {
                out.omega_features.push_back(h);
            }
        }
    }
    out.logits = h;
    return out;
}

// Tape-free inference: logits for each row of x.
namespace detail {

// Tape-free forward pass; on_hidden sees each hidden pre-activation row.
template <class OnHidden>
Tensor dense_pass(const NetworkParams& params, const Tensor& x, OnHidden&& on_hidden) {
    Tensor h = x;
    for (std::size_t k = 0; k < params.layers.size(); ++k) {
        const auto& w = params.layers[k].weight;
        const auto& b = params.layers[k].bias;
        if (h.cols() != w.shape()[0]) throw Error("predict: input width does not match layer " + std::to_string(k));
        const std::size_t rows = h.rows(), n = w.shape()[1], fan_in = w.shape()[0];
        Tensor out(Shape{rows, n});
        for (std::size_t r = 0; r < rows; ++r) {
            auto orow = out.row(r);
            std::copy(b.data().begin(), b.data().end(), orow.begin());
            for (std::size_t p = 0; p < fan_in; ++p) {
                const double hv = h.at(r, p);
                if (hv == 0.0) continue;
                for (std::size_t j = 0; j < n; ++j) orow[j] += hv * w.at(p, j);
            }
            if (k + 1 < params.layers.size()) {
                on_hidden(std::span<const double>(orow));
                for (auto& v : orow) v = std::max(v, 0.0);
            }
        }
        h = std::move(out);
    }
    return h;
}

} // namespace detail

inline Tensor predict_logits(const NetworkParams& params, const Tensor& x) {
    return detail::dense_pass(params, x, [](std::span<const double>) {});
}

// Smallest |pre-activation| over every hidden unit and row: the distance to
// the nearest ReLU kink.
inline double relu_margin(const NetworkParams& params, const Tensor& x) {
    double margin = std::numeric_limits<double>::infinity();
    detail::dense_pass(params, x, [&](std::span<const double> z) {
        for (double v : z) margin = std::min(margin, std::abs(v));
    });
    return margin;
}

inline std::vector<double> softmax(std::span<const double> logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] = std::exp(logits[i] - m));
    for (auto& v : p) v /= s;
    return p;
}

inline std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

} // namespace ppdn
