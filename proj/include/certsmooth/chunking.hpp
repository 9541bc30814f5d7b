#pragma once

// Chunk machinery for the smoothing scheme: alignment preprocessing, the
// deterministic inference-time split, and the random training-time ablation.

#include <cstdint>
#include <random>

#include "certsmooth/bytes.hpp"
#include "certsmooth/errors.hpp"
#include "certsmooth/pe.hpp"

namespace certsmooth {

struct ChunkSpec {
    std::size_t z = 512;
    std::uint8_t pad_byte = 0;
};

struct ChunkView {
    std::size_t index;      // b
    Bytes payload;          // length z, last view zero-padded
    std::size_t source_begin; // b*z in the preprocessed file
    std::size_t source_end;   // (b+1)*z
};

// Pads the header block, each inter-extent gap and each section's raw data
// with zeros so every part length is a multiple of z, which puts every part
// boundary (and hence every section start) on a chunk boundary. Purely
// raw-layout: payload bytes are never moved relative to each other, only
// zeros are inserted at part boundaries. Idempotent for a fixed z. The
// overlay is left unpadded.
inline pe::PeImage preprocess(const pe::PeImage& img, std::size_t z) {
    if (z == 0) throw Error(ErrorKind::Config, "chunk size must be positive");
    pe::PeImage out = img;
    out = pe::pad_headers(out, round_up(out.size_of_headers(), z) - out.size_of_headers());
    for (std::size_t i = 0; i < out.sections.size(); ++i) {
        if (!out.sections[i].has_raw_data()) continue;
        const std::size_t gap = out.section_gaps[i].size();
        out = pe::extend_gap(out, i, round_up(gap, z) - gap);
        const std::size_t raw = out.sections[i].size_of_raw_data;
        out = pe::pad_section_raw(out, i, round_up(raw, z) - raw);
    }
    return out;
}

// Consecutive non-overlapping chunks of size z starting at byte zero; the
// final partial chunk is filled with pad_byte.
inline std::vector<ChunkView> split(const Bytes& bytes, const ChunkSpec& spec) {
    if (bytes.empty()) throw Error(ErrorKind::EmptyInput, "cannot split empty input");
    if (spec.z == 0) throw Error(ErrorKind::Config, "chunk size must be positive");
    const std::size_t n = ceil_div(bytes.size(), spec.z);
    std::vector<ChunkView> views;
    views.reserve(n);
    for (std::size_t b = 0; b < n; ++b) {
        ChunkView v;
        v.index = b;
        v.source_begin = b * spec.z;
        v.source_end = (b + 1) * spec.z;
        const std::size_t end = std::min(v.source_end, bytes.size());
        v.payload.assign(bytes.begin() + v.source_begin, bytes.begin() + end);
        v.payload.resize(spec.z, spec.pad_byte);
        views.push_back(std::move(v));
    }
    return views;
}

// Training-time ablation: one contiguous window of length min(z, L) whose
// start is uniform over [0, max(L-z, 0)]. Window starts are not aligned to z;
// alignment is an inference-time concept only.
inline Bytes ablate_train(const Bytes& bytes, std::size_t z, std::mt19937_64& rng) {
    if (bytes.empty()) throw Error(ErrorKind::EmptyInput, "cannot ablate empty input");
    if (z == 0) throw Error(ErrorKind::Config, "chunk size must be positive");
    if (bytes.size() <= z) return bytes;
    std::uniform_int_distribution<std::size_t> dist(0, bytes.size() - z);
    const std::size_t start = dist(rng);
    return Bytes(bytes.begin() + start, bytes.begin() + start + z);
}

inline Bytes ablate_train(const Bytes& bytes, std::size_t z, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return ablate_train(bytes, z, rng);
}

} // namespace certsmooth
