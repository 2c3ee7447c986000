#pragma once

// Synthetic expression sequences.
//
// Each class c has a unit prototype p_c and each subject s an offset o_s.
// Frame t of the (s, c) sequence is
//     intensity(t) * p_c + o_s + noise,
// with intensity ramping from 0 (neutral, class-free) to 1 (peak) at the
// last frame. Low-intensity frames of different classes collapse onto the
// subject offset and are hard to tell apart; the peak frame is easy.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ppdn/objective.hpp"

namespace ppdn {

enum class IntensityRamp { linear, sigmoid };

struct SynthConfig {
    std::size_t num_subjects = 24;
    std::size_t num_classes = 6;
    std::size_t input_dim = 96;
    std::size_t frames_per_sequence = 12;
    double noise_sigma = 0.35;
    double subject_offset_sigma = 0.1;
    std::uint64_t seed = 1;
    IntensityRamp ramp = IntensityRamp::linear;

    void validate() const {
        if (num_subjects == 0) throw Error("synth: num-subjects must be positive");
        if (num_classes == 0) throw Error("synth: num-classes must be positive");
        if (input_dim == 0) throw Error("synth: input-dim must be positive");
        if (frames_per_sequence < 10) throw Error("synth: frames-per-sequence must be at least 10");
        if (noise_sigma < 0.0 || subject_offset_sigma < 0.0) throw Error("synth: sigmas must be non-negative");
    }
};

struct SequenceSample {
    int subject_id = 0;
    std::size_t class_label = 0;
    std::vector<Tensor> frames;
    std::vector<double> intensities;

    std::size_t length() const noexcept { return frames.size(); }

    friend bool operator==(const SequenceSample&, const SequenceSample&) = default;
};

using Corpus = std::vector<SequenceSample>;

inline double ramp_intensity(std::size_t t, std::size_t frames, IntensityRamp ramp) {
    const double u = static_cast<double>(t) / static_cast<double>(frames - 1);
    if (ramp == IntensityRamp::linear) return u;
    constexpr double steepness = 10.0;
    auto logistic = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
    const double lo = logistic(-steepness / 2.0), hi = logistic(steepness / 2.0);
    if (t + 1 == frames) return 1.0;
    return (logistic(steepness * (u - 0.5)) - lo) / (hi - lo);
}

// Unit vectors with pairwise cosine <= 0.5. Orthonormal when the dimension
// allows it.
inline std::vector<std::vector<double>> class_prototypes(std::size_t classes, std::size_t dim, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto random_unit = [&] {
        std::vector<double> v(dim);
        double n = 0.0;
        while (n < 1e-6) {
            for (auto& x : v) x = gauss(rng);
            n = norm(v);
        }
        for (auto& x : v) x /= n;
        return v;
    };
    std::vector<std::vector<double>> protos;
    if (classes <= dim) {
        while (protos.size() < classes) {
            auto v = random_unit();
            for (const auto& q : protos) {
                const double d = dot(v, q);
                for (std::size_t i = 0; i < dim; ++i) v[i] -= d * q[i];
            }
            const double n = norm(v);
            if (n < 1e-6) continue;
            for (auto& x : v) x /= n;
            protos.push_back(std::move(v));
        }
        return protos;
    }
    constexpr int max_attempts = 100000;
    for (int attempt = 0; protos.size() < classes; ++attempt) {
        if (attempt == max_attempts) {
            throw Error("synth: cannot place " + std::to_string(classes) + " prototypes 60 degrees apart in " +
                        std::to_string(dim) + " dimensions");
        }
        auto v = random_unit();
        if (std::all_of(protos.begin(), protos.end(), [&](const auto& q) { return dot(v, q) <= 0.5; })) {
            protos.push_back(std::move(v));
        }
    }
    return protos;
}

// One sequence per (subject, class), subject-major.
inline Corpus generate_corpus(const SynthConfig& config) {
    config.validate();
    std::mt19937_64 rng(config.seed);
    const auto protos = class_prototypes(config.num_classes, config.input_dim, rng);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<std::vector<double>> offsets(config.num_subjects, std::vector<double>(config.input_dim));
    for (auto& o : offsets) {
        for (auto& x : o) x = config.subject_offset_sigma * gauss(rng);
    }

    Corpus corpus;
    for (std::size_t s = 0; s < config.num_subjects; ++s) {
        for (std::size_t c = 0; c < config.num_classes; ++c) {
            SequenceSample seq;
            seq.subject_id = static_cast<int>(s);
            seq.class_label = c;
            for (std::size_t t = 0; t < config.frames_per_sequence; ++t) {
                const double a = ramp_intensity(t, config.frames_per_sequence, config.ramp);
                Tensor frame(Shape{config.input_dim});
                for (std::size_t i = 0; i < config.input_dim; ++i) {
                    frame[i] = a * protos[c][i] + offsets[s][i] + config.noise_sigma * gauss(rng);
                }
                seq.frames.push_back(std::move(frame));
                seq.intensities.push_back(a);
            }
            corpus.push_back(std::move(seq));
        }
    }
    return corpus;
}

// Which non-peak frames are paired with the peak.
enum class FramePolicy {
    all_nonpeak,     // frames 0 .. T-2
    from_frame_7,    // frames 6 .. T-2 (seventh frame onwards, 1-indexed)
};

inline std::size_t policy_start(FramePolicy policy) { return policy == FramePolicy::from_frame_7 ? 6 : 0; }

struct FrameRef {
    std::size_t sequence = 0;
    std::size_t frame = 0;

    friend auto operator<=>(const FrameRef&, const FrameRef&) = default;
};

struct PairRow {
    std::size_t sequence = 0;
    std::size_t nonpeak_frame = 0;
    std::size_t peak_frame = 0;
};

struct PairSet {
    std::vector<PairRow> rows;
    std::size_t skipped_sequences = 0;
};

// Pairs every non-peak frame in the policy window with the sequence's peak.
// peak_index, when given, overrides the last frame as the peak of each
// sequence; the remaining window frames become the non-peak side.
inline PairSet make_pairs(const Corpus& corpus, FramePolicy policy, std::span<const std::size_t> peak_index = {}) {
    if (corpus.empty()) throw Error("make_pairs: empty corpus");
    if (!peak_index.empty() && peak_index.size() != corpus.size()) {
        throw Error("make_pairs: peak index list does not match corpus size");
    }
    const std::size_t start = policy_start(policy);
    PairSet out;
    for (std::size_t s = 0; s < corpus.size(); ++s) {
        const std::size_t len = corpus[s].length();
        if (len < 2 || start + 1 >= len) {
            ++out.skipped_sequences;
            continue;
        }
        const std::size_t peak = peak_index.empty() ? len - 1 : peak_index[s];
        if (peak >= len) throw Error("make_pairs: peak index out of range");
        for (std::size_t t = start; t < len; ++t) {
            if (t != peak) out.rows.push_back({s, t, peak});
        }
    }
    return out;
}

inline PairBatch assemble_batch(const Corpus& corpus, std::span<const PairRow> rows) {
    if (rows.empty()) throw Error("assemble_batch: no rows");
    const std::size_t dim = corpus.at(rows[0].sequence).frames.at(0).size();
    PairBatch b{Tensor(Shape{rows.size(), dim}), Tensor(Shape{rows.size(), dim}), {}, {}};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& seq = corpus.at(rows[i].sequence);
        const auto& xn = seq.frames.at(rows[i].nonpeak_frame);
        const auto& xp = seq.frames.at(rows[i].peak_frame);
        std::copy(xn.data().begin(), xn.data().end(), b.x_nonpeak.row(i).begin());
        std::copy(xp.data().begin(), xp.data().end(), b.x_peak.row(i).begin());
        b.y_nonpeak.push_back(seq.class_label);
        b.y_peak.push_back(seq.class_label);
    }
    return b;
}

enum class EvalSet { weak, peak, combined };

inline const char* to_string(EvalSet set) {
    switch (set) {
        case EvalSet::weak: return "weak";
        case EvalSet::peak: return "peak";
        case EvalSet::combined: return "combined";
    }
    return "unknown";
}

struct EvalSets {
    std::vector<FrameRef> weak;      // 1-indexed frames 7..9
    std::vector<FrameRef> peak;      // last frame
    std::vector<FrameRef> combined;  // 1-indexed frames 7..T

    const std::vector<FrameRef>& get(EvalSet set) const {
        switch (set) {
            case EvalSet::weak: return weak;
            case EvalSet::peak: return peak;
            case EvalSet::combined: break;
        }
        return combined;
    }
};

inline EvalSets make_eval_sets(const Corpus& corpus, std::span<const std::size_t> sequences = {}) {
    EvalSets sets;
    auto add = [&](std::size_t s) {
        const std::size_t len = corpus.at(s).length();
        if (len < 10) throw Error("make_eval_sets: sequence " + std::to_string(s) + " has fewer than 10 frames");
        for (std::size_t t = 6; t <= 8; ++t) sets.weak.push_back({s, t});
        sets.peak.push_back({s, len - 1});
        for (std::size_t t = 6; t < len; ++t) sets.combined.push_back({s, t});
    };
    if (sequences.empty()) {
        for (std::size_t s = 0; s < corpus.size(); ++s) add(s);
    } else {
        for (auto s : sequences) add(s);
    }
    return sets;
}

struct FoldSplit {
    std::size_t k = 0;
    std::map<int, std::size_t> fold_of;

    std::set<int> test_subjects(std::size_t fold) const {
        std::set<int> out;
        for (const auto& [s, f] : fold_of) {
            if (f == fold) out.insert(s);
        }
        return out;
    }

    std::set<int> train_subjects(std::size_t fold) const {
        std::set<int> out;
        for (const auto& [s, f] : fold_of) {
            if (f != fold) out.insert(s);
        }
        return out;
    }

    std::vector<std::size_t> fold_sizes() const {
        std::vector<std::size_t> sizes(k, 0);
        for (const auto& [s, f] : fold_of) ++sizes[f];
        return sizes;
    }
};

// Subject-independent k-fold assignment: deterministic shuffle, then
// round-robin dealing. Duplicate ids are collapsed.
inline FoldSplit kfold_split(std::span<const int> subject_ids, std::size_t k, std::uint64_t seed) {
    std::vector<int> subjects(subject_ids.begin(), subject_ids.end());
    std::sort(subjects.begin(), subjects.end());
    subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
    if (k < 2) throw Error("kfold_split: k must be at least 2");
    if (subjects.size() < k) {
        throw Error("kfold_split: " + std::to_string(subjects.size()) + " subjects cannot fill " +
                    std::to_string(k) + " folds");
    }
    std::mt19937_64 rng(seed);
    std::shuffle(subjects.begin(), subjects.end(), rng);
    FoldSplit split{k, {}};
    for (std::size_t i = 0; i < subjects.size(); ++i) split.fold_of[subjects[i]] = i % k;
    return split;
}

inline std::vector<int> subject_ids(const Corpus& corpus) {
    std::vector<int> ids;
    for (const auto& s : corpus) ids.push_back(s.subject_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

inline std::vector<std::size_t> sequences_of(const Corpus& corpus, const std::set<int>& subjects) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (subjects.count(corpus[i].subject_id)) out.push_back(i);
    }
    return out;
}

inline Corpus subset(const Corpus& corpus, std::span<const std::size_t> sequences) {
    Corpus out;
    for (auto s : sequences) out.push_back(corpus.at(s));
    return out;
}

// Stacks frames of a sequence into a (T x dim) matrix.
inline Tensor sequence_matrix(const SequenceSample& seq) {
    const std::size_t dim = seq.frames.at(0).size();
    Tensor x(Shape{seq.length(), dim});
    for (std::size_t t = 0; t < seq.length(); ++t) {
        std::copy(seq.frames[t].data().begin(), seq.frames[t].data().end(), x.row(t).begin());
    }
    return x;
}

enum class PeakScore {
    ground_truth,  // probability of the sequence's labelled class
    max_class,     // highest probability over all classes
};

// Frame-level scorer: (T x dim) frames -> (T x C) class probabilities.
template <class Scorer>
concept FrameScorer = std::invocable<Scorer&, const Tensor&> &&
                      std::convertible_to<std::invoke_result_t<Scorer&, const Tensor&>, Tensor>;

// Index of the highest-scoring frame per sequence; ties go to the later frame.
template <FrameScorer Scorer>
std::vector<std::size_t> auto_select_peak(Scorer&& scorer, const Corpus& corpus,
                                          PeakScore mode = PeakScore::ground_truth) {
    std::vector<std::size_t> picks;
    picks.reserve(corpus.size());
    for (const auto& seq : corpus) {
        const Tensor probs = scorer(sequence_matrix(seq));
        if (probs.rows() != seq.length()) throw Error("auto_select_peak: scorer returned wrong row count");
        std::size_t best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < seq.length(); ++t) {
            auto row = probs.row(t);
            const double score =
                mode == PeakScore::ground_truth ? row[seq.class_label] : *std::max_element(row.begin(), row.end());
            if (score >= best_score) {
                best_score = score;
                best = t;
            }
        }
        picks.push_back(best);
    }
    return picks;
}

// Line-delimited corpus records, one frame per line:
//   subject_id,class,frame_index,intensity,x0,...,x{d-1}
// preceded by a header line naming the fields. Values use 17 significant
// digits so a write/read cycle is exact.
inline void write_corpus(std::ostream& os, const Corpus& corpus) {
    const std::size_t dim = corpus.empty() ? 0 : corpus[0].frames.at(0).size();
    os << "subject_id,class,frame_index,intensity";
    for (std::size_t i = 0; i < dim; ++i) os << ",x" << i;
    os << '\n';
    char buf[32];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << ',' << buf;
    };
    for (const auto& seq : corpus) {
        for (std::size_t t = 0; t < seq.length(); ++t) {
            os << seq.subject_id << ',' << seq.class_label << ',' << t;
            put(seq.intensities[t]);
            for (double v : seq.frames[t].data()) put(v);
            os << '\n';
        }
    }
}

inline Corpus read_corpus(std::istream& is) {
    Corpus corpus;
    std::map<std::pair<int, std::size_t>, std::size_t> index;
    std::string line;
    std::size_t line_no = 0;
    std::size_t dim = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line.rfind("subject_id", 0) == 0 || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
        auto fail = [&](const std::string& why) {
            return Error("corpus line " + std::to_string(line_no) + ": " + why);
        };
        if (fields.size() < 5) throw fail("expected at least 5 fields");
        std::vector<double> values;
        try {
            for (std::size_t i = 3; i < fields.size(); ++i) values.push_back(std::stod(fields[i]));
        } catch (const std::exception&) {
            throw fail("malformed number");
        }
        const int subject = std::stoi(fields[0]);
        const auto label = static_cast<std::size_t>(std::stoul(fields[1]));
        const auto frame = static_cast<std::size_t>(std::stoul(fields[2]));
        const std::size_t d = values.size() - 1;
        if (dim == 0) dim = d;
        if (d != dim) throw fail("inconsistent vector width");
        auto [it, inserted] = index.try_emplace({subject, label}, corpus.size());
        if (inserted) corpus.push_back(SequenceSample{subject, label, {}, {}});
        auto& seq = corpus[it->second];
        if (frame != seq.length()) throw fail("frames must be listed in order starting at 0");
        seq.intensities.push_back(values[0]);
        seq.frames.emplace_back(Shape{dim}, std::vector<double>(values.begin() + 1, values.end()));
    }
    for (const auto& seq : corpus) {
        if (seq.length() < 2) throw Error("corpus: sequence with fewer than 2 frames");
    }
    return corpus;
}

} // namespace ppdn
