#pragma once

// Experiment configuration in a line-based `key = value` format.
//
//   # comment
//   synth.num_subjects = 24
//   network.hidden_dims = 64, 32
//   optimizer.mode = pgs
//
// Unknown keys, malformed values and inconsistent combinations are errors.

#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ppdn/optimizer.hpp"
#include "ppdn/synth.hpp"

namespace ppdn {

class ConfigError : public Error {
public:
    using Error::Error;
};

enum class TrainMode { baseline, sgd, pgs };

inline const char* to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::baseline: return "baseline-no-pairs";
        case TrainMode::sgd: return "sgd";
        case TrainMode::pgs: return "pgs";
    }
    return "unknown";
}

struct EvalConfig {
    std::size_t k_folds = 10;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::vector<TrainMode> modes{TrainMode::baseline, TrainMode::sgd, TrainMode::pgs};
};

struct ExperimentConfig {
    SynthConfig synth;
    NetworkConfig network;
    OptimizerConfig optimizer;
    ObjectiveConfig objective;
    FramePolicy frame_policy = FramePolicy::from_frame_7;
    EvalConfig eval;
    std::string output_dir = "out";

    void validate() const {
        try {
            synth.validate();
        } catch (const Error& e) {
            throw ConfigError(e.what());
        }
        if (network.input_dim != synth.input_dim) throw ConfigError("network.input_dim must equal synth.input_dim");
        if (network.num_classes != synth.num_classes) {
            throw ConfigError("network.num_classes must equal synth.num_classes");
        }
        try {
            network.validate(true);
            optimizer.validate();
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            throw ConfigError(e.what());
        }
        if (!(optimizer.learning_rate > 0.0)) throw ConfigError("optimizer.learning_rate must be positive");
        if (optimizer.lambda != objective.lambda) throw ConfigError("objective lambda must match optimizer.lambda");
        if (eval.k_folds < 2) throw ConfigError("eval.k_folds must be at least 2");
        if (eval.k_folds > synth.num_subjects) throw ConfigError("eval.k_folds exceeds synth.num_subjects");
        if (eval.seeds.empty()) throw ConfigError("eval.seeds must list at least one seed");
        if (eval.modes.empty()) throw ConfigError("eval.modes must list at least one mode");
    }

    TrainMode train_mode() const { return optimizer.mode == UpdateMode::pgs ? TrainMode::pgs : TrainMode::sgd; }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    unsigned long long x = 0;
    try {
        if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
        x = std::stoull(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    }
    if (pos != v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return static_cast<std::size_t>(x);
}

inline double parse_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
    if (pos != v.size() || !std::isfinite(x)) throw ConfigError(key + ": expected a number, got '" + v + "'");
    return x;
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <class T>
std::string join(const std::vector<T>& xs, const std::function<std::string(const T&)>& f) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ",";
        out += f(xs[i]);
    }
    return out;
}

} // namespace detail

inline TrainMode parse_train_mode(const std::string& v) {
    if (v == "baseline" || v == "baseline-no-pairs") return TrainMode::baseline;
    if (v == "sgd") return TrainMode::sgd;
    if (v == "pgs") return TrainMode::pgs;
    throw ConfigError("unknown mode '" + v + "' (expected baseline-no-pairs, sgd or pgs)");
}

// Applies one key/value pair.
inline void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& value) {
    using namespace detail;
    auto size = [&] { return parse_size(key, value); };
    auto real = [&] { return parse_double(key, value); };
    auto sizes = [&] {
        std::vector<std::size_t> out;
        for (const auto& s : split_list(value)) out.push_back(parse_size(key, s));
        return out;
    };
    auto choose = [&](std::initializer_list<const char*> options) -> std::size_t {
        std::size_t i = 0;
        for (const char* o : options) {
            if (value == o) return i;
            ++i;
        }
        throw ConfigError(key + ": unsupported value '" + value + "'");
    };

    if (key == "synth.num_subjects") c.synth.num_subjects = size();
    else if (key == "synth.num_classes") c.synth.num_classes = c.network.num_classes = size();
    else if (key == "synth.input_dim") c.synth.input_dim = c.network.input_dim = size();
    else if (key == "synth.frames_per_sequence") c.synth.frames_per_sequence = size();
    else if (key == "synth.noise_sigma") c.synth.noise_sigma = real();
    else if (key == "synth.subject_offset_sigma") c.synth.subject_offset_sigma = real();
    else if (key == "synth.seed") c.synth.seed = size();
    else if (key == "synth.ramp") c.synth.ramp = choose({"linear", "sigmoid"}) == 0 ? IntensityRamp::linear : IntensityRamp::sigmoid;
    else if (key == "network.input_dim") c.network.input_dim = size();
    else if (key == "network.num_classes") c.network.num_classes = size();
    else if (key == "network.hidden_dims") c.network.hidden_dims = sizes();
    else if (key == "network.omega_layers") c.network.omega_layers = sizes();
    else if (key == "network.activation") { choose({"relu"}); c.network.activation = Activation::relu; }
    else if (key == "optimizer.learning_rate") c.optimizer.learning_rate = real();
    else if (key == "optimizer.lambda") c.optimizer.lambda = c.objective.lambda = real();
    else if (key == "optimizer.mode") c.optimizer.mode = choose({"sgd", "pgs"}) == 0 ? UpdateMode::sgd : UpdateMode::pgs;
    else if (key == "optimizer.iterations") c.optimizer.iterations = size();
    else if (key == "optimizer.batch_size") c.optimizer.batch_size = size();
    else if (key == "objective.omega_normalization") {
        const auto i = choose({"concat", "per-layer", "none"});
        c.objective.normalization = i == 0 ? OmegaNormalization::concat
                                  : i == 1 ? OmegaNormalization::per_layer
                                           : OmegaNormalization::none;
    }
    else if (key == "objective.j1_weight") c.objective.j1_weight = real();
    else if (key == "data.frame_policy") c.frame_policy = choose({"from-frame-7", "all-nonpeak"}) == 0 ? FramePolicy::from_frame_7 : FramePolicy::all_nonpeak;
    else if (key == "eval.k_folds") c.eval.k_folds = size();
    else if (key == "eval.seeds") {
        c.eval.seeds.clear();
        for (auto s : sizes()) c.eval.seeds.push_back(s);
    }
    else if (key == "eval.modes") {
        c.eval.modes.clear();
        for (const auto& m : split_list(value)) c.eval.modes.push_back(parse_train_mode(m));
    }
    else if (key == "output_dir") c.output_dir = value;
    else throw ConfigError("unknown config key '" + key + "'");
}

inline ExperimentConfig parse_config(std::istream& is) {
    ExperimentConfig c;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        try {
            apply_setting(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    c.validate();
    return c;
}

inline ExperimentConfig parse_config(const std::string& text) {
    std::istringstream is(text);
    return parse_config(is);
}

// Every field in a fixed order; parse_config(canonical_text(c)) == c.
inline std::string canonical_text(const ExperimentConfig& c) {
    using detail::format_double;
    std::ostringstream os;
    auto num = [](std::size_t v) { return std::to_string(v); };
    const std::function<std::string(const std::size_t&)> sz = [](const std::size_t& v) { return std::to_string(v); };
    const std::function<std::string(const std::uint64_t&)> u64 = [](const std::uint64_t& v) { return std::to_string(v); };
    const std::function<std::string(const TrainMode&)> md = [](const TrainMode& m) { return std::string(to_string(m)); };
    os << "synth.num_subjects = " << num(c.synth.num_subjects) << '\n'
       << "synth.num_classes = " << num(c.synth.num_classes) << '\n'
       << "synth.input_dim = " << num(c.synth.input_dim) << '\n'
       << "synth.frames_per_sequence = " << num(c.synth.frames_per_sequence) << '\n'
       << "synth.noise_sigma = " << format_double(c.synth.noise_sigma) << '\n'
       << "synth.subject_offset_sigma = " << format_double(c.synth.subject_offset_sigma) << '\n'
       << "synth.seed = " << c.synth.seed << '\n'
       << "synth.ramp = " << (c.synth.ramp == IntensityRamp::linear ? "linear" : "sigmoid") << '\n'
       << "network.input_dim = " << num(c.network.input_dim) << '\n'
       << "network.num_classes = " << num(c.network.num_classes) << '\n'
       << "network.hidden_dims = " << detail::join(c.network.hidden_dims, sz) << '\n'
       << "network.omega_layers = " << detail::join(c.network.omega_layers, sz) << '\n'
       << "network.activation = relu\n"
       << "optimizer.learning_rate = " << format_double(c.optimizer.learning_rate) << '\n'
       << "optimizer.lambda = " << format_double(c.optimizer.lambda) << '\n'
       << "optimizer.mode = " << (c.optimizer.mode == UpdateMode::sgd ? "sgd" : "pgs") << '\n'
       << "optimizer.iterations = " << num(c.optimizer.iterations) << '\n'
       << "optimizer.batch_size = " << num(c.optimizer.batch_size) << '\n'
       << "objective.omega_normalization = "
       << (c.objective.normalization == OmegaNormalization::concat      ? "concat"
           : c.objective.normalization == OmegaNormalization::per_layer ? "per-layer"
                                                                        : "none")
       << '\n'
       << "objective.j1_weight = " << format_double(c.objective.j1_weight) << '\n'
       << "data.frame_policy = " << (c.frame_policy == FramePolicy::from_frame_7 ? "from-frame-7" : "all-nonpeak")
       << '\n'
       << "eval.k_folds = " << num(c.eval.k_folds) << '\n'
       << "eval.seeds = " << detail::join(c.eval.seeds, u64) << '\n'
       << "eval.modes = " << detail::join(c.eval.modes, md) << '\n'
       << "output_dir = " << c.output_dir << '\n';
    return os.str();
}

// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t config_hash(const ExperimentConfig& c) { return fnv1a(canonical_text(c)); }

} // namespace ppdn
