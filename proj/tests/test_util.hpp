#pragma once

#include <random>

#include "ppdn/objective.hpp"

namespace ppdn::test {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> gauss(0.0, scale);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = gauss(rng);
    return t;
}

inline NetworkParams random_params(const NetworkConfig& config, std::mt19937_64& rng, double bias_scale = 0.1) {
    NetworkParams p = build_network(config, rng());
    for (auto& l : p.layers) {
        std::normal_distribution<double> gauss(0.0, bias_scale);
        for (auto& v : l.bias.data()) v = gauss(rng);
    }
    return p;
}

// Pair batch with random inputs; labels are shared by both sides.
inline PairBatch random_batch(const NetworkConfig& config, std::size_t n, std::mt19937_64& rng) {
    PairBatch b{random_tensor(Shape{n, config.input_dim}, rng), random_tensor(Shape{n, config.input_dim}, rng), {}, {}};
    std::uniform_int_distribution<std::size_t> cls(0, config.num_classes - 1);
    for (std::size_t i = 0; i < n; ++i) {
        const auto y = cls(rng);
        b.y_nonpeak.push_back(y);
        b.y_peak.push_back(y);
    }
    return b;
}

inline NetworkConfig small_config(std::vector<std::size_t> hidden = {6, 5}, std::vector<std::size_t> omega = {0, 1}) {
    NetworkConfig c;
    c.input_dim = 4;
    c.hidden_dims = std::move(hidden);
    c.num_classes = 3;
    c.omega_layers = std::move(omega);
    return c;
}

} // namespace ppdn::test
