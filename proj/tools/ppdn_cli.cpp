#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "ppdn/checkpoint.hpp"
#include "ppdn/protocol.hpp"

namespace fs = std::filesystem;
using namespace ppdn;

namespace {

enum Exit { ok = 0, usage = 1, numerical = 2, ordering = 3 };

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
};

ExperimentConfig load_config(const Common& c) {
    if (c.config_path.empty()) {
        ExperimentConfig d;
        d.validate();
        return d;
    }
    std::ifstream in(c.config_path);
    if (!in) throw ConfigError("cannot open config file '" + c.config_path + "'");
    return parse_config(in);
}

fs::path out_dir(const Common& c, const ExperimentConfig& config) {
    fs::path p = c.out.empty() ? fs::path(config.output_dir) : fs::path(c.out);
    fs::create_directories(p);
    return p;
}

std::ofstream open_out(const fs::path& p, std::ios::openmode mode = std::ios::out) {
    std::ofstream os(p, mode);
    if (!os) throw Error("cannot write '" + p.string() + "'");
    return os;
}

// key=value lines, echoed to stdout and appended to summary.txt.
class Summary {
public:
    explicit Summary(const fs::path& dir, const std::string& command) : path_(dir / "summary.txt") {
        add("command", command);
    }

    template <class T>
    void add(const std::string& key, const T& value) {
        std::ostringstream os;
        if constexpr (std::is_floating_point_v<T>) {
            os << detail::format_double(value);
        } else {
            os << value;
        }
        lines_.push_back(key + "=" + os.str());
    }

    void flush() const {
        auto os = open_out(path_, std::ios::app);
        for (const auto& l : lines_) {
            os << l << '\n';
            std::cout << l << '\n';
        }
        os << '\n';
    }

private:
    fs::path path_;
    std::vector<std::string> lines_;
};

Corpus load_corpus(const std::string& path, const ExperimentConfig& config) {
    if (path.empty()) return generate_corpus(config.synth);
    std::ifstream in(path);
    if (!in) throw Error("cannot open corpus '" + path + "'");
    return read_corpus(in);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint '" + path + "'");
    return read_checkpoint(in);
}

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
    auto os = open_out(path, std::ios::binary);
    write_checkpoint(os, ck);
}

std::vector<std::size_t> all_sequences(const Corpus& corpus) {
    std::vector<std::size_t> idx(corpus.size());
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

int cmd_gen_data(const Common& common) {
    auto config = load_config(common);
    if (common.seed) config.synth.seed = *common.seed;
    const auto dir = out_dir(common, config);
    const Corpus corpus = generate_corpus(config.synth);
    auto os = open_out(dir / "corpus.csv");
    write_corpus(os, corpus);
    Summary s(dir, "gen-data");
    s.add("seed", config.synth.seed);
    s.add("sequences", corpus.size());
    s.add("frames", corpus.size() * config.synth.frames_per_sequence);
    s.add("corpus", (dir / "corpus.csv").string());
    s.flush();
    return ok;
}

int cmd_train(const Common& common, const std::string& mode_name, const std::string& corpus_path) {
    const auto config = load_config(common);
    const TrainMode mode = mode_name.empty() ? config.train_mode() : parse_train_mode(mode_name);
    const std::uint64_t seed = common.seed.value_or(config.eval.seeds.front());
    const auto dir = out_dir(common, config);
    const Corpus corpus = load_corpus(corpus_path, config);

    const auto result = train_model(config, corpus, all_sequences(corpus), mode, seed);
    {
        auto os = open_out(dir / "train_log.csv");
        write_loss_log_csv(os, result.log);
    }
    const Checkpoint ck{config.network, result.params, config_hash(config), seed};
    const auto ck_path = dir / (result.failure ? "checkpoint_last_good.bin" : "checkpoint.bin");
    save_checkpoint(ck_path, ck);

    Summary s(dir, "train");
    s.add("mode", to_string(mode));
    s.add("seed", seed);
    s.add("config_hash", config_hash(config));
    s.add("epochs", result.log.size());
    s.add("iterations", result.log.empty() ? 0 : result.log.back().iterations);
    if (!result.log.empty()) {
        s.add("first_j1", result.log.front().mean.j1);
        s.add("final_j1", result.log.back().mean.j1);
        s.add("final_total", result.log.back().mean.total);
    }
    s.add("checkpoint", ck_path.string());
    s.add("status", result.failure ? "numerical-failure" : "ok");
    if (result.failure) s.add("error", *result.failure);
    s.flush();
    return result.failure ? numerical : ok;
}

int cmd_eval(const Common& common, const std::string& checkpoint, const std::string& corpus_path,
             const std::string& set_name) {
    const auto config = load_config(common);
    const auto dir = out_dir(common, config);
    const Checkpoint ck = load_checkpoint(checkpoint);
    const Corpus corpus = load_corpus(corpus_path, config);
    const EvalSets sets = make_eval_sets(corpus);

    std::vector<EvalSet> which;
    if (set_name == "all") which = {EvalSet::weak, EvalSet::peak, EvalSet::combined};
    else if (set_name == "weak") which = {EvalSet::weak};
    else if (set_name == "peak") which = {EvalSet::peak};
    else which = {EvalSet::combined};

    auto os = open_out(dir / "metrics.csv");
    write_metrics_header(os, ck.network.num_classes);
    Summary s(dir, "eval");
    s.add("checkpoint", checkpoint);
    for (EvalSet e : which) {
        MetricsRecord m = evaluate(ck.params, ck.network.num_classes, corpus, sets.get(e));
        m.seed = ck.seed;
        m.set = e;
        m.run_id = "eval-" + std::string(to_string(e));
        write_metrics_row(os, m);
        s.add(std::string("accuracy_") + to_string(e), m.accuracy);
    }
    s.flush();
    return ok;
}

int cmd_compare(const Common& common) {
    auto config = load_config(common);
    if (common.seed) config.eval.seeds = {*common.seed};
    const auto dir = out_dir(common, config);
    const CompareResult result = run_compare(config);
    {
        auto os = open_out(dir / "compare.csv");
        write_compare_csv(os, result);
    }
    {
        auto os = open_out(dir / "metrics.csv");
        write_metrics_header(os, config.network.num_classes);
        std::vector<const MetricsRecord*> records;
        for (const auto& o : result.outcomes) {
            for (const auto& r : o.records) records.push_back(&r);
        }
        std::sort(records.begin(), records.end(), [](auto* a, auto* b) {
            return std::tie(a->run_id, a->set) < std::tie(b->run_id, b->set);
        });
        for (auto* r : records) write_metrics_row(os, *r);
    }
    Summary s(dir, "compare");
    s.add("seeds", config.eval.seeds.size());
    s.add("folds", config.eval.k_folds);
    for (const auto& r : result.rows) {
        const std::string key = std::string(to_string(r.mode)) + "." + to_string(r.set);
        s.add(key + ".mean", r.accuracy.mean);
        s.add(key + ".std", r.accuracy.stddev);
    }
    std::size_t failures = 0;
    for (const auto& o : result.outcomes) failures += o.failure.has_value();
    s.add("numerical_failures", failures);
    s.add("ordering_holds", result.ordering_holds ? "true" : "false");
    s.flush();
    if (failures) return numerical;
    return result.ordering_holds ? ok : ordering;
}

int cmd_descent_report(const Common& common, const std::string& checkpoint, const std::string& corpus_path,
                       std::size_t batches) {
    const auto config = load_config(common);
    const auto dir = out_dir(common, config);
    const Checkpoint ck = load_checkpoint(checkpoint);
    ExperimentConfig run = config;
    run.network = ck.network;
    const Corpus corpus = load_corpus(corpus_path, config);
    const auto rows = run_descent_report(ck.params, run, corpus, batches, common.seed.value_or(ck.seed));
    {
        auto os = open_out(dir / "descent.csv");
        write_descent_csv(os, rows);
    }
    std::size_t cond = 0, descent = 0, implication_violations = 0;
    double max_residual = 0.0;
    for (const auto& r : rows) {
        cond += r.condition_a8;
        descent += r.total_loss_descent;
        if (r.condition_a8 && !(r.dot_value > 0.0)) ++implication_violations;
        max_residual = std::max(max_residual, r.identity_residual);
    }
    const double n = static_cast<double>(std::max<std::size_t>(rows.size(), 1));
    Summary s(dir, "descent-report");
    s.add("batches", rows.size());
    s.add("condition_a8_fraction", static_cast<double>(cond) / n);
    s.add("total_loss_descent_fraction", static_cast<double>(descent) / n);
    s.add("max_identity_residual", max_residual);
    s.add("implication_violations", implication_violations);
    s.flush();
    return ok;
}

int cmd_grad_check(const Common& common, std::size_t batch_rows) {
    const auto config = load_config(common);
    const auto dir = out_dir(common, config);
    const auto r = run_grad_check(config, common.seed.value_or(config.eval.seeds.front()), batch_rows);
    Summary s(dir, "grad-check");
    s.add("parameters", r.parameter_count);
    s.add("batch_rows", r.batch_rows);
    s.add("batch_draws", r.batch_draws);
    s.add("max_relative_error_none", r.max_error_none);
    s.add("max_relative_error_suppress_peak", r.max_error_suppress_peak);
    s.add("threshold", r.threshold);
    s.add("result", r.passed() ? "pass" : "fail");
    s.flush();
    return r.passed() ? ok : numerical;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Peak-piloted training harness"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "Experiment config (key = value lines)");
        sub->add_option("--seed", common.seed, "Seed override");
        sub->add_option("--out", common.out, "Output directory (default: output_dir from config)");
    };

    std::string mode, corpus, checkpoint, set = "all";
    std::size_t batches = 20, batch_rows = 4;

    auto* gen = app.add_subcommand("gen-data", "Write a synthetic corpus");
    add_common(gen);

    auto* train = app.add_subcommand("train", "Train on the whole corpus and write a checkpoint");
    add_common(train);
    train->add_option("--mode", mode, "baseline-no-pairs, sgd or pgs (default: optimizer.mode)");
    train->add_option("--corpus", corpus, "Corpus CSV (default: generate from config)");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on weak/peak/combined frames");
    add_common(eval);
    eval->add_option("--checkpoint", checkpoint)->required();
    eval->add_option("--corpus", corpus, "Corpus CSV (default: generate from config)");
    eval->add_option("--set", set)->check(CLI::IsMember({"weak", "peak", "combined", "all"}));

    auto* compare = app.add_subcommand("compare", "k-fold comparison of the configured modes");
    add_common(compare);

    auto* descent = app.add_subcommand("descent-report", "Descent-direction report on sampled pair batches");
    add_common(descent);
    descent->add_option("--checkpoint", checkpoint)->required();
    descent->add_option("--corpus", corpus, "Corpus CSV (default: generate from config)");
    descent->add_option("--batches", batches)->check(CLI::PositiveNumber);

    auto* grad = app.add_subcommand("grad-check", "Finite-difference check of the full loss");
    add_common(grad);
    grad->add_option("--batch-rows", batch_rows)->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : usage;
    }

    try {
        if (*gen) return cmd_gen_data(common);
        if (*train) return cmd_train(common, mode, corpus);
        if (*eval) return cmd_eval(common, checkpoint, corpus, set);
        if (*compare) return cmd_compare(common);
        if (*descent) return cmd_descent_report(common, checkpoint, corpus, batches);
        if (*grad) return cmd_grad_check(common, batch_rows);
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return numerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return usage;
    }
    return usage;
}
