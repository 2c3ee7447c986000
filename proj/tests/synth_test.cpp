#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "ppdn/synth.hpp"

using namespace ppdn;

namespace {

SynthConfig tiny(std::size_t frames = 12) {
    SynthConfig c;
    c.num_subjects = 3;
    c.num_classes = 4;
    c.input_dim = 6;
    c.frames_per_sequence = frames;
    return c;
}

Tensor intensity_scores(const Tensor& frames, const Corpus& corpus, double sign) {
    // Looks the frame up by value; used only with distinct frames.
    Tensor out(Shape{frames.rows(), 4});
    for (std::size_t t = 0; t < frames.rows(); ++t) {
        for (const auto& seq : corpus) {
            for (std::size_t u = 0; u < seq.length(); ++u) {
                if (std::equal(seq.frames[u].data().begin(), seq.frames[u].data().end(), frames.row(t).begin())) {
                    for (std::size_t k = 0; k < 4; ++k) out.at(t, k) = sign * seq.intensities[u];
                }
            }
        }
    }
    return out;
}

} // namespace

TEST(Ramp, LinearEndpoints) {
    EXPECT_EQ(ramp_intensity(0, 12, IntensityRamp::linear), 0.0);
    EXPECT_EQ(ramp_intensity(11, 12, IntensityRamp::linear), 1.0);
    EXPECT_DOUBLE_EQ(ramp_intensity(6, 12, IntensityRamp::linear), 6.0 / 11.0);
}

TEST(Ramp, SigmoidIsMonotoneFromZeroToOne) {
    EXPECT_NEAR(ramp_intensity(0, 12, IntensityRamp::sigmoid), 0.0, 1e-12);
    EXPECT_NEAR(ramp_intensity(11, 12, IntensityRamp::sigmoid), 1.0, 1e-12);
    for (std::size_t t = 1; t < 12; ++t) {
        EXPECT_GT(ramp_intensity(t, 12, IntensityRamp::sigmoid), ramp_intensity(t - 1, 12, IntensityRamp::sigmoid));
    }
}

TEST(Prototypes, UnitAndSeparated) {
    for (auto [classes, dim] : {std::pair<std::size_t, std::size_t>{6, 16}, {8, 4}, {6, 6}}) {
        std::mt19937_64 rng(3);
        const auto p = class_prototypes(classes, dim, rng);
        ASSERT_EQ(p.size(), classes);
        for (std::size_t i = 0; i < classes; ++i) {
            EXPECT_NEAR(std::sqrt(std::inner_product(p[i].begin(), p[i].end(), p[i].begin(), 0.0)), 1.0, 1e-12);
            for (std::size_t j = 0; j < i; ++j) {
                EXPECT_LE(std::inner_product(p[i].begin(), p[i].end(), p[j].begin(), 0.0), 0.5 + 1e-12);
            }
        }
    }
}

TEST(GenerateCorpus, NoiselessLimit) {
    auto c = tiny();
    c.noise_sigma = 0.0;
    c.subject_offset_sigma = 0.0;
    const auto corpus = generate_corpus(c);
    std::mt19937_64 rng(c.seed);
    const auto protos = class_prototypes(c.num_classes, c.input_dim, rng);
    for (const auto& seq : corpus) {
        for (std::size_t t = 0; t < seq.length(); ++t) {
            for (std::size_t i = 0; i < c.input_dim; ++i) {
                EXPECT_EQ(seq.frames[t][i], seq.intensities[t] * protos[seq.class_label][i]);
            }
        }
        for (std::size_t i = 0; i < c.input_dim; ++i) EXPECT_EQ(seq.frames.back()[i], protos[seq.class_label][i]);
    }
}

TEST(GenerateCorpus, FirstFrameIsClassIndependent) {
    auto c = tiny();
    c.noise_sigma = 0.0;
    const auto corpus = generate_corpus(c);
    for (const auto& a : corpus) {
        EXPECT_EQ(a.intensities[0], 0.0);
        for (const auto& b : corpus) {
            if (a.subject_id == b.subject_id) EXPECT_EQ(a.frames[0], b.frames[0]);
        }
    }
}

TEST(GenerateCorpus, ShapeAndDeterminism) {
    const auto c = tiny();
    const auto a = generate_corpus(c);
    ASSERT_EQ(a.size(), c.num_subjects * c.num_classes);
    for (const auto& s : a) EXPECT_EQ(s.length(), c.frames_per_sequence);
    const auto b = generate_corpus(c);
    for (std::size_t s = 0; s < a.size(); ++s) EXPECT_EQ(a[s].frames, b[s].frames);
    auto other = c;
    other.seed = 2;
    EXPECT_NE(generate_corpus(other)[0].frames, a[0].frames);
}

TEST(GenerateCorpus, RejectsShortSequences) {
    EXPECT_THROW(generate_corpus(tiny(9)), Error);
}

TEST(GenerateCorpus, NearestPrototypeSeparability) {
    SynthConfig c;
    c.noise_sigma = 0.0;
    c.subject_offset_sigma = 0.0;
    const auto corpus = generate_corpus(c);
    std::mt19937_64 rng(c.seed);
    const auto protos = class_prototypes(c.num_classes, c.input_dim, rng);
    std::size_t correct_peak = 0, correct_first = 0;
    for (const auto& seq : corpus) {
        auto nearest = [&](const Tensor& x) {
            std::size_t best = 0;
            double best_d = 1e300;
            for (std::size_t k = 0; k < protos.size(); ++k) {
                double d = 0;
                for (std::size_t i = 0; i < x.size(); ++i) d += (x[i] - protos[k][i]) * (x[i] - protos[k][i]);
                if (d < best_d) best_d = d, best = k;
            }
            return best;
        };
        correct_peak += nearest(seq.frames.back()) == seq.class_label;
        correct_first += nearest(seq.frames.front()) == seq.class_label;
    }
    EXPECT_EQ(correct_peak, corpus.size());
    // All classes are equidistant from the origin, so frame 0 carries no class signal.
    EXPECT_EQ(correct_first, corpus.size() / c.num_classes);
}

TEST(MakePairs, Counts) {
    const auto corpus = generate_corpus(tiny(10));
    EXPECT_EQ(make_pairs(corpus, FramePolicy::all_nonpeak).rows.size(), 9 * corpus.size());
    const auto from7 = make_pairs(corpus, FramePolicy::from_frame_7);
    EXPECT_EQ(from7.rows.size(), 3 * corpus.size());
    EXPECT_EQ(from7.skipped_sequences, 0u);
    for (const auto& r : from7.rows) {
        EXPECT_GE(r.nonpeak_frame, 6u);
        EXPECT_LE(r.nonpeak_frame, 8u);
        EXPECT_EQ(r.peak_frame, 9u);
    }
}

TEST(MakePairs, PairsShareSubjectAndClass) {
    const auto corpus = generate_corpus(tiny());
    const auto pairs = make_pairs(corpus, FramePolicy::all_nonpeak);
    const auto batch = assemble_batch(corpus, pairs.rows);
    EXPECT_EQ(batch.size(), pairs.rows.size());
    for (std::size_t i = 0; i < batch.size(); ++i) EXPECT_EQ(batch.y_nonpeak[i], batch.y_peak[i]);
}

TEST(MakePairs, ShortSequenceSkipped) {
    auto corpus = generate_corpus(tiny());
    corpus[0].frames.resize(6);
    corpus[0].intensities.resize(6);
    const auto pairs = make_pairs(corpus, FramePolicy::from_frame_7);
    EXPECT_EQ(pairs.skipped_sequences, 1u);
    EXPECT_EQ(pairs.rows.size(), 5 * (corpus.size() - 1));
}

TEST(MakePairs, EmptyCorpus) {
    EXPECT_THROW(make_pairs({}, FramePolicy::all_nonpeak), Error);
}

TEST(EvalSets, CountsForTwelveFrames) {
    const auto corpus = generate_corpus(tiny());
    const auto sets = make_eval_sets(corpus);
    EXPECT_EQ(sets.weak.size(), 3 * corpus.size());
    EXPECT_EQ(sets.peak.size(), corpus.size());
    EXPECT_EQ(sets.combined.size(), 6 * corpus.size());
    std::set<FrameRef> weak(sets.weak.begin(), sets.weak.end());
    for (const auto& f : sets.peak) EXPECT_FALSE(weak.contains(f));
    std::set<FrameRef> expected = weak;
    for (std::size_t s = 0; s < corpus.size(); ++s) {
        for (std::size_t t = 9; t < 12; ++t) expected.insert({s, t});
    }
    EXPECT_EQ(std::set<FrameRef>(sets.combined.begin(), sets.combined.end()), expected);
}

TEST(KFold, OneSubjectPerFold) {
    std::vector<int> ids(10);
    std::iota(ids.begin(), ids.end(), 0);
    const auto split = kfold_split(ids, 10, 4);
    for (auto s : split.fold_sizes()) EXPECT_EQ(s, 1u);
}

TEST(KFold, PigeonholeSizes) {
    std::vector<int> ids(23);
    std::iota(ids.begin(), ids.end(), 100);
    const auto split = kfold_split(ids, 10, 4);
    for (auto s : split.fold_sizes()) {
        EXPECT_GE(s, 2u);
        EXPECT_LE(s, 3u);
    }
}

TEST(KFold, DeterministicAndDisjoint) {
    std::vector<int> ids(24);
    std::iota(ids.begin(), ids.end(), 0);
    const auto a = kfold_split(ids, 10, 9);
    EXPECT_EQ(a.fold_of, kfold_split(ids, 10, 9).fold_of);
    for (std::size_t f = 0; f < 10; ++f) {
        const auto test = a.test_subjects(f);
        const auto train = a.train_subjects(f);
        for (int s : test) EXPECT_FALSE(train.contains(s));
        EXPECT_EQ(test.size() + train.size(), 24u);
    }
}

TEST(KFold, Errors) {
    std::vector<int> ids{1, 2, 3};
    EXPECT_THROW(kfold_split(ids, 1, 0), Error);
    EXPECT_THROW(kfold_split(ids, 4, 0), Error);
    std::vector<int> dup{1, 1, 2, 2};
    EXPECT_THROW(kfold_split(dup, 3, 0), Error);
}

TEST(AutoSelectPeak, IntensityOracleAndAdversary) {
    const auto corpus = generate_corpus(tiny());
    auto oracle = [&](const Tensor& f) { return intensity_scores(f, corpus, 1.0); };
    auto adversary = [&](const Tensor& f) { return intensity_scores(f, corpus, -1.0); };
    for (std::size_t p : auto_select_peak(oracle, corpus)) EXPECT_EQ(p, 11u);
    for (std::size_t p : auto_select_peak(adversary, corpus)) EXPECT_EQ(p, 0u);
}

TEST(AutoSelectPeak, UniformScoresPickLastFrame) {
    const auto corpus = generate_corpus(tiny());
    auto uniform = [](const Tensor& f) {
        Tensor out(Shape{f.rows(), 4});
        out.fill(0.25);
        return out;
    };
    for (std::size_t p : auto_select_peak(uniform, corpus, PeakScore::max_class)) EXPECT_EQ(p, 11u);
}

TEST(CorpusIo, RoundTripIsExact) {
    const auto corpus = generate_corpus(tiny());
    std::stringstream ss;
    write_corpus(ss, corpus);
    const auto back = read_corpus(ss);
    ASSERT_EQ(back.size(), corpus.size());
    for (std::size_t s = 0; s < corpus.size(); ++s) {
        EXPECT_EQ(back[s].subject_id, corpus[s].subject_id);
        EXPECT_EQ(back[s].class_label, corpus[s].class_label);
        EXPECT_EQ(back[s].intensities, corpus[s].intensities);
        EXPECT_EQ(back[s].frames, corpus[s].frames);
    }
}

TEST(CorpusIo, MalformedInput) {
    std::stringstream bad("0,0,0,0.5,abc\n");
    EXPECT_THROW(read_corpus(bad), Error);
    std::stringstream gap("0,0,0,0,1\n0,0,2,0,1\n");
    EXPECT_THROW(read_corpus(gap), Error);
}
