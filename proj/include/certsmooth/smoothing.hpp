#pragma once

// The smoothed classifier g: split the aligned file into chunks, score each
// chunk with the base model, majority-vote with ties broken toward malicious.
// Also hosts the two randomized-smoothing empirical baselines (byte ablation
// and byte deletion) that vote over N noisy copies of the whole input.

#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "certsmooth/bytes.hpp"
#include "certsmooth/chunking.hpp"
#include "certsmooth/classifier.hpp"
#include "certsmooth/errors.hpp"
#include "certsmooth/pe.hpp"

namespace certsmooth {

enum class Label : int { Benign = 0, Malicious = 1 };

inline const char* to_string(Label l) { return l == Label::Malicious ? "malicious" : "benign"; }

struct ChunkVote {
    std::size_t index;
    Label label;
    double score;
};

struct ChunkTally {
    std::size_t total = 0; // N
    std::size_t n_benign = 0;
    std::size_t n_malicious = 0;
    std::vector<ChunkVote> per_chunk;
    std::size_t z = 0;
    bool preprocessed = false;  // votes came from an alignment-preprocessed input
    std::size_t source_len = 0; // byte length of the voted-on input
};

struct SmoothedPrediction {
    Label label = Label::Benign;
    ChunkTally tally;
    double prob_malicious = 0.0;
};

// Majority with the deterministic tie rule: ties go to the larger-indexed
// class, i.e. malicious.
inline Label majority_label(const ChunkTally& t) {
    return t.n_malicious >= t.n_benign ? Label::Malicious : Label::Benign;
}

inline ChunkTally tally_from_scores(const std::vector<double>& scores, std::size_t z,
                                    bool preprocessed, std::size_t source_len) {
    ChunkTally t;
    t.z = z;
    t.preprocessed = preprocessed;
    t.source_len = source_len;
    t.total = scores.size();
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const Label l = scores[i] >= 0.5 ? Label::Malicious : Label::Benign;
        (l == Label::Malicious ? t.n_malicious : t.n_benign)++;
        t.per_chunk.push_back({i, l, scores[i]});
    }
    return t;
}

// Test/analysis helper: a tally with the given hard labels and degenerate
// scores on either side of the decision threshold.
inline ChunkTally tally_from_labels(const std::vector<Label>& labels, std::size_t z,
                                    bool preprocessed = true) {
    std::vector<double> scores;
    scores.reserve(labels.size());
    for (Label l : labels) scores.push_back(l == Label::Malicious ? 1.0 : 0.0);
    return tally_from_scores(scores, z, preprocessed, labels.size() * z);
}

inline SmoothedPrediction prediction_from_tally(ChunkTally t) {
    SmoothedPrediction p;
    p.label = majority_label(t);
    p.prob_malicious =
        t.total == 0 ? 0.0 : static_cast<double>(t.n_malicious) / static_cast<double>(t.total);
    p.tally = std::move(t);
    return p;
}

// --- chunk-based smoothing ---------------------------------------------------

// Alignment-preprocessed byte stream an input is voted on.
inline Bytes smoothing_input(const Bytes& file, std::size_t z) {
    return pe::serialize(preprocess(pe::parse(file), z));
}

inline SmoothedPrediction predict_smoothed(const TrainedModel& model, const Bytes& file,
                                           std::size_t z) {
    if (model.scheme != InputScheme::Chunk)
        throw Error(ErrorKind::Config, "smoothed prediction requires a chunk-scheme model");
    if (model.z != z)
        throw Error(ErrorKind::MismatchedZ, "model was trained with z=" + std::to_string(model.z) +
                                                ", asked to predict with z=" + std::to_string(z));
    const Bytes aligned = smoothing_input(file, z);
    const auto views = split(aligned, ChunkSpec{z, 0});
    std::vector<double> scores;
    scores.reserve(views.size());
    for (const auto& v : views) scores.push_back(score_chunk(model, v.payload));
    return prediction_from_tally(tally_from_scores(scores, z, true, aligned.size()));
}

inline std::vector<ChunkVote> chunk_score_map(const TrainedModel& model, const Bytes& file,
                                              std::size_t z) {
    return predict_smoothed(model, file, z).tally.per_chunk;
}

// --- randomized-smoothing baselines -------------------------------------------

enum class NoiseKind : std::uint8_t { ByteAblate = 0, ByteDelete = 1 };

struct RandomizedScheme {
    NoiseKind kind = NoiseKind::ByteAblate;
    double p = 0.20;       // per-byte noise probability
    std::size_t votes = 20;
    std::uint64_t seed = 0;

    static RandomizedScheme ablate(std::uint64_t seed) { return {NoiseKind::ByteAblate, 0.20, 20, seed}; }
    static RandomizedScheme deletion(std::uint64_t seed) { return {NoiseKind::ByteDelete, 0.03, 20, seed}; }

    void validate() const {
        if (!(p >= 0.0 && p < 1.0) || votes == 0)
            throw Error(ErrorKind::Config, "randomized scheme requires 0 <= p < 1 and votes >= 1");
    }
};

// One noisy copy: ablation swaps bytes for the PAD token, deletion drops them.
inline Tokens noisy_copy(const Bytes& file, NoiseKind kind, double p, std::mt19937_64& rng) {
    Tokens out;
    out.reserve(file.size());
    // Threshold compare on raw 64-bit draws keeps this a single draw per byte.
    const std::uint64_t threshold =
        p >= 1.0 ? ~std::uint64_t(0)
                 : static_cast<std::uint64_t>(p * 18446744073709551616.0 /* 2^64 */);
    for (std::uint8_t b : file) {
        const bool hit = rng() < threshold;
        if (kind == NoiseKind::ByteAblate) {
            out.push_back(hit ? kPadToken : Token(b));
        } else if (!hit) {
            out.push_back(Token(b));
        }
    }
    if (out.empty()) out.push_back(0); // degenerate: everything deleted
    return out;
}

inline SmoothedPrediction predict_randomized(const TrainedModel& model_ns, const Bytes& file,
                                             const RandomizedScheme& scheme) {
    scheme.validate();
    std::mt19937_64 rng(scheme.seed);
    std::vector<double> scores;
    scores.reserve(scheme.votes);
    for (std::size_t v = 0; v < scheme.votes; ++v) {
        const Tokens noisy = noisy_copy(file, scheme.kind, scheme.p, rng);
        scores.push_back(score_prefix(model_ns, noisy));
    }
    return prediction_from_tally(tally_from_scores(scores, 0, false, file.size()));
}

// --- score map emission --------------------------------------------------------

inline std::string score_map_csv(const std::vector<ChunkVote>& votes, std::size_t z) {
    std::string out = "chunk_index,offset,score,label\n";
    char buf[96];
    for (const auto& v : votes) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%s\n", v.index, v.index * z, v.score,
                      to_string(v.label));
        out += buf;
    }
    return out;
}

// Static heatmap: one cell per chunk, score-mapped from green (benign) to red
// (malicious), wrapped into rows of 32 cells.
inline std::string score_map_svg(const std::vector<ChunkVote>& votes, std::size_t cell = 12,
                                 std::size_t per_row = 32) {
    const std::size_t n = votes.size();
    const std::size_t rows = n == 0 ? 1 : (n + per_row - 1) / per_row;
    const std::size_t width = per_row * cell;
    const std::size_t height = rows * cell;
    std::string svg;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%zu\" height=\"%zu\" "
                  "viewBox=\"0 0 %zu %zu\">\n",
                  width, height, width, height);
    svg += buf;
    for (const auto& v : votes) {
        const std::size_t x = (v.index % per_row) * cell;
        const std::size_t y = (v.index / per_row) * cell;
        const int r = static_cast<int>(255.0 * v.score + 0.5);
        const int g = static_cast<int>(255.0 * (1.0 - v.score) + 0.5);
        std::snprintf(buf, sizeof buf,
                      "<rect class=\"chunk\" x=\"%zu\" y=\"%zu\" width=\"%zu\" height=\"%zu\" "
                      "fill=\"rgb(%d,%d,64)\"><title>chunk %zu score %.4f</title></rect>\n",
                      x, y, cell, cell, r, g, v.index, v.score);
        svg += buf;
    }
    svg += "</svg>\n";
    return svg;
}

} // namespace certsmooth
