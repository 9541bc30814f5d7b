#pragma once

// Base classifiers scored on single chunks, trained on randomly-ablated
// windows. Two desk-scale models share one flat-parameter interface so the
// training loop, serialization and the finite-difference tests are generic:
//
//   HistogramLogistic  257-bin normalized token histogram -> affine -> sigmoid
//   TinyConv           embed(dim 8) -> conv(k=16, s=8, 8 filters) -> max pool
//                      -> affine -> sigmoid
//
// Bin / embedding index 256 is the PAD token used by the randomized-ablation
// baseline; it never occurs in plain file bytes.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "certsmooth/bytes.hpp"
#include "certsmooth/chunking.hpp"
#include "certsmooth/detail/crc32.hpp"
#include "certsmooth/errors.hpp"
#include "certsmooth/pe.hpp"

namespace certsmooth {

enum class ClassifierKind : std::uint8_t { HistogramLogistic = 0, TinyConv = 1 };

// Chunk: consumes at most z bytes (the smoothing scheme's base model).
// Prefix: consumes a fixed window of prefix_chunks*z leading bytes (the
// undefended whole-file stand-in, "NS").
enum class InputScheme : std::uint8_t { Chunk = 0, Prefix = 1 };

constexpr std::uint16_t kModelFormatVersion = 1;
constexpr std::size_t kNsPrefixChunks = 64;

namespace conv {
constexpr std::size_t kEmbedDim = 8;
constexpr std::size_t kKernel = 16;
constexpr std::size_t kStride = 8;
constexpr std::size_t kFilters = 8;
} // namespace conv

struct TrainConfig {
    std::size_t max_epochs = 5;
    double learning_rate = 0.5;
    std::size_t batch_size = 1;
    std::uint64_t seed = 1;
    std::size_t z = 512;

    void validate() const {
        if (max_epochs == 0 || batch_size == 0 || z == 0 || learning_rate <= 0.0)
            throw Error(ErrorKind::Config, "all training parameters must be positive");
    }
};

inline std::size_t model_param_count(ClassifierKind kind) {
    switch (kind) {
        case ClassifierKind::HistogramLogistic:
            return kAlphabetSize + 1;
        case ClassifierKind::TinyConv:
            return kAlphabetSize * conv::kEmbedDim +
                   conv::kFilters * conv::kKernel * conv::kEmbedDim + conv::kFilters +
                   conv::kFilters + 1;
    }
    throw Error(ErrorKind::Config, "unknown classifier kind");
}

struct TrainedModel {
    ClassifierKind kind = ClassifierKind::HistogramLogistic;
    InputScheme scheme = InputScheme::Chunk;
    std::uint32_t z = 512;
    std::uint32_t prefix_chunks = kNsPrefixChunks;
    TrainConfig training_config;
    std::vector<double> weights;
    std::uint16_t format_version = kModelFormatVersion;

    std::size_t max_input() const {
        return scheme == InputScheme::Chunk ? z : std::size_t(prefix_chunks) * z;
    }
};

// --- numerics ------------------------------------------------------------

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Binary cross-entropy in logit form; finite for every finite logit.
inline double bce_from_logit(double logit, double y) {
    return std::max(logit, 0.0) - logit * y + std::log1p(std::exp(-std::fabs(logit)));
}

namespace detail {

inline double hist_logit(const std::vector<double>& w, const Token* t, std::size_t n) {
    double counts[kAlphabetSize] = {0};
    for (std::size_t i = 0; i < n; ++i) counts[t[i]] += 1.0;
    const double inv = 1.0 / static_cast<double>(n);
    double logit = w[kAlphabetSize];
    for (std::size_t b = 0; b < kAlphabetSize; ++b) logit += w[b] * counts[b] * inv;
    return logit;
}

inline double hist_loss_grad(const std::vector<double>& w, const Token* t, std::size_t n,
                             double y, std::vector<double>& grad) {
    double counts[kAlphabetSize] = {0};
    for (std::size_t i = 0; i < n; ++i) counts[t[i]] += 1.0;
    const double inv = 1.0 / static_cast<double>(n);
    double logit = w[kAlphabetSize];
    for (std::size_t b = 0; b < kAlphabetSize; ++b) logit += w[b] * counts[b] * inv;
    const double dlogit = sigmoid(logit) - y;
    for (std::size_t b = 0; b < kAlphabetSize; ++b)
        if (counts[b] != 0.0) grad[b] += dlogit * counts[b] * inv;
    grad[kAlphabetSize] += dlogit;
    return bce_from_logit(logit, y);
}

struct ConvLayout {
    static constexpr std::size_t embed = 0;
    static constexpr std::size_t kernels = kAlphabetSize * conv::kEmbedDim;
    static constexpr std::size_t conv_bias =
        kernels + conv::kFilters * conv::kKernel * conv::kEmbedDim;
    static constexpr std::size_t out_w = conv_bias + conv::kFilters;
    static constexpr std::size_t out_b = out_w + conv::kFilters;
};

// Runs the TinyConv forward pass; records the arg-max window per filter so
// the backward pass can route the pooled gradient.
inline double conv_forward(const std::vector<double>& w, const Token* t, std::size_t n,
                           double pooled[conv::kFilters], std::size_t argmax[conv::kFilters]) {
    using namespace conv;
    Tokens padded;
    if (n < kKernel) {
        padded.assign(t, t + n);
        padded.resize(kKernel, kPadToken);
        t = padded.data();
        n = kKernel;
    }
    const std::size_t n_windows = (n - kKernel) / kStride + 1;
    for (std::size_t f = 0; f < kFilters; ++f) {
        pooled[f] = -1e300;
        argmax[f] = 0;
    }
    for (std::size_t j = 0; j < n_windows; ++j) {
        const Token* win = t + j * kStride;
        for (std::size_t f = 0; f < kFilters; ++f) {
            double a = w[ConvLayout::conv_bias + f];
            const double* wf = &w[ConvLayout::kernels + f * kKernel * kEmbedDim];
            for (std::size_t k = 0; k < kKernel; ++k) {
                const double* e = &w[ConvLayout::embed + std::size_t(win[k]) * kEmbedDim];
                const double* wk = wf + k * kEmbedDim;
                for (std::size_t d = 0; d < kEmbedDim; ++d) a += wk[d] * e[d];
            }
            if (a > pooled[f]) {
                pooled[f] = a;
                argmax[f] = j;
            }
        }
    }
    double logit = w[ConvLayout::out_b];
    for (std::size_t f = 0; f < kFilters; ++f) logit += w[ConvLayout::out_w + f] * pooled[f];
    return logit;
}

inline double conv_loss_grad(const std::vector<double>& w, const Token* t, std::size_t n,
                             double y, std::vector<double>& grad) {
    using namespace conv;
    Tokens padded;
    if (n < kKernel) {
        padded.assign(t, t + n);
        padded.resize(kKernel, kPadToken);
        t = padded.data();
        n = kKernel;
    }
    double pooled[kFilters];
    std::size_t argmax[kFilters];
    const double logit = conv_forward(w, t, n, pooled, argmax);
    const double dlogit = sigmoid(logit) - y;

    grad[ConvLayout::out_b] += dlogit;
    for (std::size_t f = 0; f < kFilters; ++f) {
        grad[ConvLayout::out_w + f] += dlogit * pooled[f];
        const double da = dlogit * w[ConvLayout::out_w + f];
        grad[ConvLayout::conv_bias + f] += da;
        const Token* win = t + argmax[f] * kStride;
        const double* wf = &w[ConvLayout::kernels + f * kKernel * kEmbedDim];
        double* gf = &grad[ConvLayout::kernels + f * kKernel * kEmbedDim];
        for (std::size_t k = 0; k < kKernel; ++k) {
            const std::size_t tok = win[k];
            const double* e = &w[ConvLayout::embed + tok * kEmbedDim];
            double* ge = &grad[ConvLayout::embed + tok * kEmbedDim];
            const double* wk = wf + k * kEmbedDim;
            double* gk = gf + k * kEmbedDim;
            for (std::size_t d = 0; d < kEmbedDim; ++d) {
                gk[d] += da * e[d];
                ge[d] += da * wk[d];
            }
        }
    }
    return bce_from_logit(logit, y);
}

} // namespace detail

inline double model_logit(ClassifierKind kind, const std::vector<double>& w, const Token* t,
                          std::size_t n) {
    if (n == 0) throw Error(ErrorKind::EmptyInput, "cannot score empty input");
    if (kind == ClassifierKind::HistogramLogistic) return detail::hist_logit(w, t, n);
    double pooled[conv::kFilters];
    std::size_t argmax[conv::kFilters];
    return detail::conv_forward(w, t, n, pooled, argmax);
}

// Loss for one example, gradient accumulated into `grad`.
inline double model_loss_grad(ClassifierKind kind, const std::vector<double>& w, const Token* t,
                              std::size_t n, double y, std::vector<double>& grad) {
    if (n == 0) throw Error(ErrorKind::EmptyInput, "cannot score empty input");
    if (kind == ClassifierKind::HistogramLogistic) return detail::hist_loss_grad(w, t, n, y, grad);
    return detail::conv_loss_grad(w, t, n, y, grad);
}

inline void model_init(ClassifierKind kind, std::vector<double>& w, std::mt19937_64& rng) {
    w.assign(model_param_count(kind), 0.0);
    if (kind == ClassifierKind::TinyConv) {
        std::uniform_real_distribution<double> dist(-0.1, 0.1);
        for (auto& x : w) x = dist(rng);
    }
}

// --- scoring -------------------------------------------------------------

// P(malicious) for a single chunk. The chunk must fit the model's window.
inline double score_chunk(const TrainedModel& m, const Token* t, std::size_t n) {
    if (n > m.max_input())
        throw Error(ErrorKind::ModelChunkMismatch,
                    "chunk of " + std::to_string(n) + " bytes exceeds model window of " +
                        std::to_string(m.max_input()));
    return sigmoid(model_logit(m.kind, m.weights, t, n));
}

inline double score_chunk(const TrainedModel& m, const Bytes& chunk) {
    Tokens t = to_tokens(chunk);
    return score_chunk(m, t.data(), t.size());
}

inline double score_chunk(const TrainedModel& m, const Tokens& chunk) {
    return score_chunk(m, chunk.data(), chunk.size());
}

// Whole-input score for a Prefix-scheme model: the first prefix_chunks*z
// tokens. Shorter inputs are fed as-is; both models handle variable length.
inline double score_prefix(const TrainedModel& m, const Tokens& file) {
    const std::size_t n = std::min(file.size(), m.max_input());
    if (n == 0) {
        const Token zero = 0;
        return sigmoid(model_logit(m.kind, m.weights, &zero, 1));
    }
    return sigmoid(model_logit(m.kind, m.weights, file.data(), n));
}

inline double score_prefix(const TrainedModel& m, const Bytes& file) {
    return score_prefix(m, to_tokens(file));
}

// --- training --------------------------------------------------------------

struct TrainExample {
    const Bytes* bytes;
    int label; // 1 = malicious
};

struct TrainStats {
    std::vector<double> epoch_mean_loss;
    std::size_t skipped_samples = 0;
};

// Ablated-window training: per epoch, per file, preprocess to the chunk
// alignment, draw one random window of z bytes, take one gradient step.
// Prefix models instead always train on the fixed leading window.
inline TrainedModel train(const std::vector<TrainExample>& dataset, const TrainConfig& cfg,
                          ClassifierKind kind, InputScheme scheme = InputScheme::Chunk,
                          TrainStats* stats = nullptr) {
    cfg.validate();
    bool has_benign = false, has_malicious = false;
    for (const auto& ex : dataset) (ex.label ? has_malicious : has_benign) = true;
    if (!has_benign || !has_malicious)
        throw Error(ErrorKind::Config, "training dataset must contain both classes");

    TrainedModel m;
    m.kind = kind;
    m.scheme = scheme;
    m.z = static_cast<std::uint32_t>(cfg.z);
    m.prefix_chunks = kNsPrefixChunks;
    m.training_config = cfg;

    std::mt19937_64 rng(cfg.seed);
    model_init(kind, m.weights, rng);

    // Alignment preprocessing is deterministic, so do it once per file.
    std::size_t skipped = 0;
    std::vector<Tokens> inputs(dataset.size());
    std::vector<double> labels(dataset.size());
    std::vector<bool> usable(dataset.size(), false);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        labels[i] = dataset[i].label ? 1.0 : 0.0;
        if (scheme == InputScheme::Prefix) {
            inputs[i] = to_tokens(*dataset[i].bytes);
            usable[i] = !inputs[i].empty();
            if (!usable[i]) ++skipped;
            continue;
        }
        try {
            pe::PeImage img = pe::parse(*dataset[i].bytes);
            inputs[i] = to_tokens(pe::serialize(preprocess(img, cfg.z)));
            usable[i] = true;
        } catch (const Error&) {
            ++skipped;
        }
    }

    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        if (usable[i]) order.push_back(i);
    if (order.empty()) throw Error(ErrorKind::CorruptSample, "no usable training samples");

    const std::size_t window = scheme == InputScheme::Prefix ? kNsPrefixChunks * cfg.z : cfg.z;
    std::vector<double> grad(m.weights.size(), 0.0);
    Tokens win;
    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        std::size_t in_batch = 0;
        auto apply = [&](std::size_t count) {
            if (count == 0) return;
            const double scale = cfg.learning_rate / static_cast<double>(count);
            for (std::size_t k = 0; k < m.weights.size(); ++k) {
                m.weights[k] -= scale * grad[k];
                grad[k] = 0.0;
            }
        };
        for (std::size_t idx : order) {
            const Tokens& full = inputs[idx];
            if (scheme == InputScheme::Prefix) {
                win.assign(full.begin(), full.begin() + std::min(full.size(), window));
            } else {
                if (full.size() <= window) {
                    win = full;
                } else {
                    std::uniform_int_distribution<std::size_t> dist(0, full.size() - window);
                    const std::size_t start = dist(rng);
                    win.assign(full.begin() + start, full.begin() + start + window);
                }
            }
            const double loss =
                model_loss_grad(kind, m.weights, win.data(), win.size(), labels[idx], grad);
            if (!std::isfinite(loss))
                throw Error(ErrorKind::DivergedLoss, "non-finite loss at epoch " +
                                                         std::to_string(epoch + 1));
            epoch_loss += loss;
            if (++in_batch == cfg.batch_size) {
                apply(in_batch);
                in_batch = 0;
            }
        }
        apply(in_batch);
        if (stats) stats->epoch_mean_loss.push_back(epoch_loss / double(order.size()));
    }
    for (double v : m.weights)
        if (!std::isfinite(v)) throw Error(ErrorKind::DivergedLoss, "non-finite model weights");
    if (stats) stats->skipped_samples = skipped;
    return m;
}

// --- serialization -----------------------------------------------------------
//
// Layout: "CSMD" | u16 version | u32 z | u8 kind | u8 scheme | u32 prefix_chunks
//         | u32 max_epochs | f64 lr | u32 batch | u64 seed | u64 n | f64*n
//         | u32 crc32 of everything before

inline Bytes save(const TrainedModel& m) {
    Bytes out;
    out.push_back('C'); out.push_back('S'); out.push_back('M'); out.push_back('D');
    append_u16(out, m.format_version);
    append_u32(out, m.z);
    out.push_back(static_cast<std::uint8_t>(m.kind));
    out.push_back(static_cast<std::uint8_t>(m.scheme));
    append_u32(out, m.prefix_chunks);
    append_u32(out, static_cast<std::uint32_t>(m.training_config.max_epochs));
    append_u64(out, std::bit_cast<std::uint64_t>(m.training_config.learning_rate));
    append_u32(out, static_cast<std::uint32_t>(m.training_config.batch_size));
    append_u64(out, m.training_config.seed);
    append_u64(out, m.weights.size());
    for (double v : m.weights) append_u64(out, std::bit_cast<std::uint64_t>(v));
    append_u32(out, detail::crc32(out));
    return out;
}

inline TrainedModel load(const Bytes& data) {
    constexpr std::size_t header = 4 + 2 + 4 + 1 + 1 + 4 + 4 + 8 + 4 + 8 + 8;
    if (data.size() < 4 || data[0] != 'C' || data[1] != 'S' || data[2] != 'M' || data[3] != 'D')
        throw Error(ErrorKind::VersionMismatch, "not a CSMD model file");
    if (data.size() < header + 4) throw Error(ErrorKind::ChecksumFail, "model file truncated");
    const std::uint16_t version = read_u16(data, 4);
    if (version != kModelFormatVersion)
        throw Error(ErrorKind::VersionMismatch,
                    "unsupported model format version " + std::to_string(version));
    const std::uint32_t stored_crc = read_u32(data, data.size() - 4);
    if (detail::crc32(data.data(), data.size() - 4) != stored_crc)
        throw Error(ErrorKind::ChecksumFail, "model checksum mismatch");

    TrainedModel m;
    m.format_version = version;
    m.z = read_u32(data, 6);
    m.kind = static_cast<ClassifierKind>(data[10]);
    m.scheme = static_cast<InputScheme>(data[11]);
    m.prefix_chunks = read_u32(data, 12);
    m.training_config.max_epochs = read_u32(data, 16);
    m.training_config.learning_rate = std::bit_cast<double>(read_u64(data, 20));
    m.training_config.batch_size = read_u32(data, 28);
    m.training_config.seed = read_u64(data, 32);
    m.training_config.z = m.z;
    const std::uint64_t n = read_u64(data, 40);
    if (n != model_param_count(m.kind) || data.size() != header + n * 8 + 4)
        throw Error(ErrorKind::ChecksumFail, "model payload size mismatch");
    m.weights.resize(n);
    for (std::uint64_t i = 0; i < n; ++i)
        m.weights[i] = std::bit_cast<double>(read_u64(data, header + i * 8));
    return m;
}

} // namespace certsmooth
