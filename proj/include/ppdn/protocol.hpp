#pragma once

// Experiment protocol: seeded training runs, single-frame evaluation,
// subject-independent cross-validation and the optimizer comparison.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <thread>
#include <vector>

#include "ppdn/config.hpp"
#include "ppdn/descent.hpp"
#include "ppdn/grad_check.hpp"

namespace ppdn {

struct EpochLog {
    std::size_t epoch = 0;
    std::size_t iterations = 0;  // cumulative
    LossBreakdown mean;
};

struct TrainResult {
    NetworkParams params;
    std::vector<EpochLog> log;
    std::optional<std::string> failure;  // set when training hit a non-finite value
};

inline ObjectiveConfig objective_for(const ExperimentConfig& config, TrainMode mode) {
    ObjectiveConfig o = config.objective;
    if (mode == TrainMode::baseline) o.j1_weight = 0.0;
    return o;
}

inline OptimizerConfig optimizer_for(const ExperimentConfig& config, TrainMode mode) {
    OptimizerConfig o = config.optimizer;
    o.mode = mode == TrainMode::pgs ? UpdateMode::pgs : UpdateMode::sgd;
    return o;
}

// Training rows for a mode. The paired modes pair each window frame with
// the sequence peak; the baseline sees every window frame (peak included)
// once as an independent image, encoded as a self-pair so that J1 is zero
// and J2 + J3 is twice the single-image cross-entropy.
inline std::vector<PairRow> training_rows(const Corpus& train, FramePolicy policy, TrainMode mode,
                                          std::span<const std::size_t> peak_index = {}) {
    if (mode != TrainMode::baseline) return make_pairs(train, policy, peak_index).rows;
    std::vector<PairRow> rows;
    const std::size_t start = policy_start(policy);
    for (std::size_t s = 0; s < train.size(); ++s) {
        for (std::size_t t = start; t < train[s].length(); ++t) rows.push_back({s, t, t});
    }
    return rows;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Runs optimizer.iterations mini-batch steps over shuffled rows, one epoch
// per pass. Starts from build_network(seed).
inline TrainResult train_rows(const ExperimentConfig& config, const Corpus& train, std::vector<PairRow> rows,
                              TrainMode mode, std::uint64_t seed,
                              const std::function<void(const EpochLog&)>& on_epoch = {}) {
    TrainResult result{build_network(config.network, seed), {}, std::nullopt};
    const auto objective = objective_for(config, mode);
    const auto optimizer = optimizer_for(config, mode);
    if (rows.empty() || optimizer.iterations == 0) return result;

    std::mt19937_64 rng(mix_seed(seed, 1));
    std::size_t done = 0;
    for (std::size_t epoch = 0; done < optimizer.iterations; ++epoch) {
        std::shuffle(rows.begin(), rows.end(), rng);
        std::vector<PairBatch> batches;
        for (std::size_t at = 0; at < rows.size() && done + batches.size() < optimizer.iterations;
             at += optimizer.batch_size) {
            const std::size_t len = std::min(optimizer.batch_size, rows.size() - at);
            batches.push_back(assemble_batch(train, std::span(rows).subspan(at, len)));
        }
        NetworkParams before = result.params;
        try {
            auto mean = train_epoch(result.params, batches, config.network, objective, optimizer);
            done += batches.size();
            EpochLog row{epoch, done, *mean};
            if (!std::isfinite(mean->total)) throw NumericalError("non-finite mean loss");
            result.log.push_back(row);
            if (on_epoch) on_epoch(row);
        } catch (const NumericalError& e) {
            // Parameters from the last completed epoch.
            result.params = std::move(before);
            result.failure = e.what();
            return result;
        }
    }
    return result;
}

inline TrainResult train_model(const ExperimentConfig& config, const Corpus& corpus,
                               std::span<const std::size_t> train_sequences, TrainMode mode, std::uint64_t seed,
                               std::span<const std::size_t> peak_index = {},
                               const std::function<void(const EpochLog&)>& on_epoch = {}) {
    const Corpus train = subset(corpus, train_sequences);
    return train_rows(config, train, training_rows(train, config.frame_policy, mode, peak_index), mode, seed,
                      on_epoch);
}

struct MetricsRecord {
    std::string run_id;
    std::uint64_t seed = 0;
    std::size_t fold = 0;
    TrainMode mode = TrainMode::pgs;
    EvalSet set = EvalSet::weak;
    double accuracy = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;
    std::vector<std::size_t> class_correct;
    std::vector<std::size_t> class_total;
    LossBreakdown final_loss;

    double class_accuracy(std::size_t c) const {
        return class_total[c] ? static_cast<double>(class_correct[c]) / static_cast<double>(class_total[c]) : 0.0;
    }
};

// Single-frame inference: argmax of the logits of each frame.
inline MetricsRecord evaluate(const NetworkParams& params, std::size_t num_classes, const Corpus& corpus,
                              std::span<const FrameRef> frames) {
    if (frames.empty()) throw Error("evaluate: empty evaluation set");
    const std::size_t dim = corpus.at(frames[0].sequence).frames.at(0).size();
    if (params.layers.empty() || params.layers.front().weight.shape()[0] != dim) {
        throw Error("evaluate: corpus frames of width " + std::to_string(dim) + " do not match the network input");
    }
    Tensor x(Shape{frames.size(), dim});
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const auto& f = corpus.at(frames[i].sequence).frames.at(frames[i].frame);
        std::copy(f.data().begin(), f.data().end(), x.row(i).begin());
    }
    const Tensor logits = predict_logits(params, x);
    MetricsRecord m;
    m.class_correct.assign(num_classes, 0);
    m.class_total.assign(num_classes, 0);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const std::size_t y = corpus.at(frames[i].sequence).class_label;
        if (y >= num_classes) throw Error("evaluate: label out of range");
        const bool hit = argmax(logits.row(i)) == y;
        ++m.class_total[y];
        m.total += 1;
        if (hit) {
            ++m.class_correct[y];
            ++m.correct;
        }
    }
    m.accuracy = static_cast<double>(m.correct) / static_cast<double>(m.total);
    return m;
}

// Softmax probabilities per frame; usable as a FrameScorer.
struct ModelScorer {
    const NetworkParams* params;

    Tensor operator()(const Tensor& frames) const {
        Tensor out = predict_logits(*params, frames);
        for (std::size_t r = 0; r < out.rows(); ++r) {
            auto row = out.row(r);
            const auto p = softmax(row);
            std::copy(p.begin(), p.end(), row.begin());
        }
        return out;
    }
};

// Where the peak frame of each training sequence comes from.
enum class PeakSource {
    ground_truth,   // last frame
    auto_selected,  // argmax score of a baseline trained without peak labels
};

struct FoldOutcome {
    std::uint64_t seed = 0;
    std::size_t fold = 0;
    TrainMode mode = TrainMode::pgs;
    std::vector<MetricsRecord> records;  // weak, peak, combined
    std::size_t auto_selected_last = 0;  // auto_selected only
    std::size_t auto_selected_total = 0;
    std::optional<std::string> failure;
};

inline SynthConfig synth_for_seed(const SynthConfig& synth, std::uint64_t seed) {
    SynthConfig s = synth;
    s.seed = synth.seed + seed;
    return s;
}

inline FoldOutcome run_fold(const ExperimentConfig& config, const Corpus& corpus, const FoldSplit& split,
                            std::size_t fold, TrainMode mode, std::uint64_t seed, PeakSource peaks) {
    FoldOutcome out{seed, fold, mode, {}, 0, 0, std::nullopt};
    const auto train_seq = sequences_of(corpus, split.train_subjects(fold));
    const auto test_seq = sequences_of(corpus, split.test_subjects(fold));

    std::vector<std::size_t> peak_index;
    if (peaks == PeakSource::auto_selected) {
        const Corpus train = subset(corpus, train_seq);
        const auto probe = train_rows(config, train, training_rows(train, config.frame_policy, TrainMode::baseline),
                                      TrainMode::baseline, mix_seed(seed, 7));
        peak_index = auto_select_peak(ModelScorer{&probe.params}, train);
        out.auto_selected_total = peak_index.size();
        for (std::size_t i = 0; i < train.size(); ++i) {
            if (peak_index[i] + 1 == train[i].length()) ++out.auto_selected_last;
        }
    }

    const TrainResult trained = train_model(config, corpus, train_seq, mode, seed, peak_index);
    out.failure = trained.failure;
    const EvalSets sets = make_eval_sets(corpus, test_seq);
    for (EvalSet s : {EvalSet::weak, EvalSet::peak, EvalSet::combined}) {
        MetricsRecord m = evaluate(trained.params, config.network.num_classes, corpus, sets.get(s));
        m.seed = seed;
        m.fold = fold;
        m.mode = mode;
        m.set = s;
        m.run_id = std::string(to_string(mode)) + "-s" + std::to_string(seed) + "-f" + std::to_string(fold);
        if (!trained.log.empty()) m.final_loss = trained.log.back().mean;
        out.records.push_back(std::move(m));
    }
    return out;
}

// Runs jobs on hardware threads; results land in job order.
template <class Job, class Result>
std::vector<Result> parallel_map(const std::vector<Job>& jobs, const std::function<Result(const Job&)>& fn,
                                 std::size_t threads = 0) {
    std::vector<Result> results(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
            try {
                results[i] = fn(jobs[i]);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return results;
}

// k-fold subject-independent cross-validation for every (seed, mode). Each
// seed draws its own corpus, fold assignment and initialization; all modes
// of a seed share them.
inline std::vector<FoldOutcome> cross_validate(const ExperimentConfig& config, std::span<const TrainMode> modes,
                                               std::span<const std::uint64_t> seeds,
                                               PeakSource peaks = PeakSource::ground_truth) {
    struct Job {
        std::size_t seed_index;
        std::size_t fold;
        TrainMode mode;
    };
    std::vector<Corpus> corpora;
    std::vector<FoldSplit> splits;
    for (auto seed : seeds) {
        corpora.push_back(generate_corpus(synth_for_seed(config.synth, seed)));
        const auto ids = subject_ids(corpora.back());
        splits.push_back(kfold_split(ids, config.eval.k_folds, seed));
    }
    std::vector<Job> jobs;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
        for (std::size_t f = 0; f < config.eval.k_folds; ++f) {
            for (auto m : modes) jobs.push_back({si, f, m});
        }
    }
    return parallel_map<Job, FoldOutcome>(jobs, [&](const Job& j) {
        return run_fold(config, corpora[j.seed_index], splits[j.seed_index], j.fold, j.mode, seeds[j.seed_index],
                        peaks);
    });
}

struct SummaryStat {
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t n = 0;
};

// Per-seed fold-averaged accuracy, then mean and sample std across seeds.
inline SummaryStat summarize(const std::vector<FoldOutcome>& outcomes, TrainMode mode, EvalSet set) {
    std::map<std::uint64_t, std::pair<double, std::size_t>> per_seed;
    for (const auto& o : outcomes) {
        if (o.mode != mode) continue;
        for (const auto& r : o.records) {
            if (r.set != set) continue;
            auto& [sum, n] = per_seed[o.seed];
            sum += r.accuracy;
            ++n;
        }
    }
    SummaryStat s;
    std::vector<double> means;
    for (const auto& [seed, acc] : per_seed) means.push_back(acc.first / static_cast<double>(acc.second));
    s.n = means.size();
    if (means.empty()) return s;
    for (double m : means) s.mean += m;
    s.mean /= static_cast<double>(s.n);
    if (s.n > 1) {
        double v = 0.0;
        for (double m : means) v += (m - s.mean) * (m - s.mean);
        s.stddev = std::sqrt(v / static_cast<double>(s.n - 1));
    }
    return s;
}

struct CompareRow {
    TrainMode mode;
    EvalSet set;
    SummaryStat accuracy;
};

struct CompareResult {
    std::vector<FoldOutcome> outcomes;
    std::vector<CompareRow> rows;
    bool ordering_holds = true;  // pgs >= sgd >= baseline on the weak set, over modes present
};

inline CompareResult run_compare(const ExperimentConfig& config) {
    if (config.eval.modes.size() < 2) throw ConfigError("compare: eval.modes must list at least two modes");
    // Duplicate modes train identical models; train each once.
    std::vector<TrainMode> unique;
    for (auto m : config.eval.modes) {
        if (std::find(unique.begin(), unique.end(), m) == unique.end()) unique.push_back(m);
    }
    CompareResult result;
    result.outcomes = cross_validate(config, unique, config.eval.seeds);
    for (auto m : config.eval.modes) {
        for (EvalSet s : {EvalSet::weak, EvalSet::peak, EvalSet::combined}) {
            result.rows.push_back({m, s, summarize(result.outcomes, m, s)});
        }
    }
    std::optional<double> prev;
    for (auto m : {TrainMode::baseline, TrainMode::sgd, TrainMode::pgs}) {
        if (std::find(unique.begin(), unique.end(), m) == unique.end()) continue;
        const double acc = summarize(result.outcomes, m, EvalSet::weak).mean;
        if (prev && acc < *prev) result.ordering_holds = false;
        prev = acc;
    }
    return result;
}

// Shuffled batches of ground-truth pairs; cycles when the corpus is small.
inline std::vector<PairBatch> sample_pair_batches(const ExperimentConfig& config, const Corpus& corpus,
                                                  std::size_t num_batches, std::uint64_t seed) {
    auto rows = make_pairs(corpus, config.frame_policy).rows;
    if (rows.empty()) throw Error("no pairs available in corpus");
    std::mt19937_64 rng(mix_seed(seed, 3));
    std::shuffle(rows.begin(), rows.end(), rng);
    std::vector<PairBatch> out;
    std::size_t at = 0;
    for (std::size_t b = 0; b < num_batches; ++b) {
        std::vector<PairRow> chunk;
        for (std::size_t i = 0; i < std::min(config.optimizer.batch_size, rows.size()); ++i) {
            chunk.push_back(rows[at]);
            at = (at + 1) % rows.size();
        }
        out.push_back(assemble_batch(corpus, chunk));
    }
    return out;
}

inline std::vector<DescentReport> run_descent_report(const NetworkParams& params, const ExperimentConfig& config,
                                                     const Corpus& corpus, std::size_t num_batches,
                                                     std::uint64_t seed) {
    std::vector<DescentReport> out;
    for (const auto& batch : sample_pair_batches(config, corpus, num_batches, seed)) {
        out.push_back(descent_report(params, config.network, batch, config.objective));
    }
    return out;
}

struct GradCheckOutcome {
    double max_error_none = 0.0;
    double max_error_suppress_peak = 0.0;
    std::size_t parameter_count = 0;
    std::size_t batch_rows = 0;
    std::size_t batch_draws = 0;
    double threshold = 1e-4;

    bool passed() const { return max_error_none < threshold && max_error_suppress_peak < threshold; }
};

inline constexpr std::size_t grad_check_parameter_limit = 10000;

// Finite-difference check of the full objective under both gatings on a
// batch drawn from the configured corpus. `tamper`, when set, edits the
// analytic gradients before comparison.
inline GradCheckOutcome run_grad_check(const ExperimentConfig& config, std::uint64_t seed, std::size_t batch_rows,
                                       double epsilon = 1e-5,
                                       const std::function<void(GradientSet&)>& tamper = {}) {
    const NetworkParams params = build_network(config.network, seed);
    if (params.count() > grad_check_parameter_limit) {
        throw ConfigError("grad-check: " + std::to_string(params.count()) + " parameters exceed the limit of " +
                          std::to_string(grad_check_parameter_limit));
    }
    ExperimentConfig small = config;
    small.optimizer.batch_size = batch_rows;
    const Corpus corpus = generate_corpus(synth_for_seed(config.synth, seed));
    // A central difference across a ReLU kink is not a derivative, so the
    // batch is redrawn until every hidden pre-activation clears the kink by
    // more than one epsilon perturbation can move it.
    const double margin = 50.0 * epsilon;
    std::size_t draws = 0;
    PairBatch batch;
    do {
        batch = sample_pair_batches(small, corpus, 1, mix_seed(seed, 100 + draws)).front();
        ++draws;
    } while (std::min(relu_margin(params, batch.x_nonpeak), relu_margin(params, batch.x_peak)) < margin &&
             draws < 1000);

    GradCheckOutcome out;
    out.parameter_count = params.count();
    out.batch_rows = batch.size();
    out.batch_draws = draws;
    for (auto gating : {BranchGating::none, BranchGating::suppress_peak}) {
        Graph graph;
        const auto og = ppdn_loss(graph, params, config.network, batch, config.objective, gating);
        GradientSet analytic = analytic_gradients(graph, og.total);
        if (tamper) tamper(analytic);
        const GradientSet numeric = numeric_gradients(graph, og.total, epsilon);
        const double err = compare_gradients(graph, analytic, numeric).max_relative_error;
        (gating == BranchGating::none ? out.max_error_none : out.max_error_suppress_peak) = err;
    }
    return out;
}

// CSV emitters. Numbers use 17 significant digits.

inline void write_loss_log_csv(std::ostream& os, const std::vector<EpochLog>& log) {
    using detail::format_double;
    os << "epoch,iterations,j1,j2,j3,reg,total,lambda\n";
    for (const auto& r : log) {
        os << r.epoch << ',' << r.iterations << ',' << format_double(r.mean.j1) << ',' << format_double(r.mean.j2)
           << ',' << format_double(r.mean.j3) << ',' << format_double(r.mean.reg) << ','
           << format_double(r.mean.total) << ',' << format_double(r.mean.lambda) << '\n';
    }
}

inline void write_metrics_header(std::ostream& os, std::size_t num_classes) {
    os << "run_id,mode,seed,fold,test_set,accuracy,correct,total";
    for (std::size_t c = 0; c < num_classes; ++c) os << ",class" << c << "_accuracy";
    os << ",final_j1,final_j2,final_j3,final_reg,final_total\n";
}

inline void write_metrics_row(std::ostream& os, const MetricsRecord& m) {
    using detail::format_double;
    os << m.run_id << ',' << to_string(m.mode) << ',' << m.seed << ',' << m.fold << ',' << to_string(m.set) << ','
       << format_double(m.accuracy) << ',' << m.correct << ',' << m.total;
    for (std::size_t c = 0; c < m.class_total.size(); ++c) {
        os << ',';
        if (m.class_total[c]) os << format_double(m.class_accuracy(c));
    }
    os << ',' << format_double(m.final_loss.j1) << ',' << format_double(m.final_loss.j2) << ','
       << format_double(m.final_loss.j3) << ',' << format_double(m.final_loss.reg) << ','
       << format_double(m.final_loss.total) << '\n';
}

inline void write_descent_csv(std::ostream& os, const std::vector<DescentReport>& rows) {
    using detail::format_double;
    os << "batch,norm_a,norm_b,cos_theta,dot_value,condition_a8,identity_residual,total_loss_descent\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        os << i << ',' << format_double(r.norm_a) << ',' << format_double(r.norm_b) << ','
           << format_double(r.cos_theta) << ',' << format_double(r.dot_value) << ',' << (r.condition_a8 ? 1 : 0)
           << ',' << format_double(r.identity_residual) << ',' << (r.total_loss_descent ? 1 : 0) << '\n';
    }
}

inline void write_compare_csv(std::ostream& os, const CompareResult& result) {
    using detail::format_double;
    os << "mode,test_set,mean_accuracy,std_accuracy,seeds\n";
    for (const auto& r : result.rows) {
        os << to_string(r.mode) << ',' << to_string(r.set) << ',' << format_double(r.accuracy.mean) << ','
           << format_double(r.accuracy.stddev) << ',' << r.accuracy.n << '\n';
    }
}

} // namespace ppdn
