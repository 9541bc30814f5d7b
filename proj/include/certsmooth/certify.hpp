#pragma once

// Deterministic robustness certificates for the chunk-smoothed classifier.
//
// A patch of p bytes intersects at most ceil(p/z)+1 chunks, so a vote margin
// of 2*delta (votes can both leave the winner and join the runner-up) rules
// out any patch placement. An alignment-preserving insertion only adds
// adversarial chunks without relabeling original ones, so a margin of delta
// suffices. The adversary oracle below brute-forces both placement models and
// is the independent check that those margins are neither unsound nor slack.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "certsmooth/bytes.hpp"
#include "certsmooth/errors.hpp"
#include "certsmooth/smoothing.hpp"

namespace certsmooth {

enum class AttackKind : std::uint8_t { Patch = 0, Insertion = 1 };

inline const char* to_string(AttackKind k) { return k == AttackKind::Patch ? "patch" : "insertion"; }

struct Certificate {
    AttackKind kind = AttackKind::Patch;
    std::size_t z = 0;
    std::vector<std::size_t> payload_sizes;
    std::size_t delta = 0;
    std::size_t margin_required = 0;
    std::size_t margin_actual = 0;
    bool certified = false;
    std::size_t max_certified_p = 0; // largest single payload the tally certifies against
};

// delta = sum_i (ceil(p_i / z) + 1)
inline std::size_t delta(const std::vector<std::size_t>& payload_sizes, std::size_t z) {
    if (z == 0) throw Error(ErrorKind::Config, "chunk size must be positive");
    std::size_t d = 0;
    for (std::size_t p : payload_sizes) {
        if (p == 0) throw Error(ErrorKind::ZeroPayload, "payload sizes must be >= 1 byte");
        d += ceil_div(p, z) + 1;
    }
    return d;
}

// Chunks an aligned payload occupies, and the worst case over straddled
// placements. The worst case never exceeds ceil(p/z)+1.
inline std::size_t chunks_spanned_aligned(std::size_t p, std::size_t z) { return ceil_div(p, z); }
inline std::size_t chunks_spanned_worst(std::size_t p, std::size_t z) {
    return ceil_div(p + z - 1, z);
}

namespace detail {

struct MarginCheck {
    std::size_t margin_required;
    std::size_t margin_actual;
    bool certified;
};

// n_{c'} >= n_{c''} + 1_{c'<c''} + {2*delta | delta}. For the binary task the
// indicator is 0 when the majority is malicious and 1 when it is benign.
inline MarginCheck margin_check(const ChunkTally& tally, AttackKind kind, std::size_t d) {
    const Label top = majority_label(tally);
    const std::size_t n_top = top == Label::Malicious ? tally.n_malicious : tally.n_benign;
    const std::size_t n_second = top == Label::Malicious ? tally.n_benign : tally.n_malicious;
    const std::size_t indicator = top == Label::Benign ? 1 : 0;
    const std::size_t mult = kind == AttackKind::Patch ? 2 : 1;
    MarginCheck c;
    c.margin_required = indicator + mult * d;
    c.margin_actual = n_top - n_second;
    c.certified = c.margin_actual >= c.margin_required;
    return c;
}

} // namespace detail

inline void check_tally_compatible(const ChunkTally& tally, AttackKind kind, std::size_t z) {
    if (tally.z != z)
        throw Error(ErrorKind::MismatchedZ, "tally was computed with z=" + std::to_string(tally.z) +
                                                ", certificate requested for z=" + std::to_string(z));
    if (kind == AttackKind::Insertion && !tally.preprocessed)
        throw Error(ErrorKind::UnalignedTally,
                    "insertion certificates require a tally from a preprocessed input");
}

inline Certificate certify(const ChunkTally& tally, AttackKind kind,
                           const std::vector<std::size_t>& payload_sizes, std::size_t z) {
    check_tally_compatible(tally, kind, z);
    Certificate cert;
    cert.kind = kind;
    cert.z = z;
    cert.payload_sizes = payload_sizes;
    cert.delta = delta(payload_sizes, z);
    const auto chk = detail::margin_check(tally, kind, cert.delta);
    cert.margin_required = chk.margin_required;
    cert.margin_actual = chk.margin_actual;
    cert.certified = chk.certified;

    // Largest certifiable single payload, by binary search on the monotone
    // margin predicate; re-checked through the same delta + margin path.
    auto holds = [&](std::size_t p) {
        return detail::margin_check(tally, kind, delta({p}, z)).certified;
    };
    if (holds(1)) {
        // delta((N+2)*z) exceeds any achievable margin, so hi never certifies.
        std::size_t lo = 1, hi = (tally.total + 2) * z;
        while (hi - lo > 1) {
            const std::size_t mid = lo + (hi - lo) / 2;
            (holds(mid) ? lo : hi) = mid;
        }
        cert.max_certified_p = lo;
    }
    return cert;
}

// Mixed-payload certificate for attacks that both patch existing bytes and
// insert new ones (padding+slack). Patch payloads can swing the margin by
// 2*delta_i each, insertions by delta_i each, and the swings add, so the
// required margin is the sum of both terms.
inline Certificate certify_mixed(const ChunkTally& tally,
                                 const std::vector<std::size_t>& patch_sizes,
                                 const std::vector<std::size_t>& insertion_sizes, std::size_t z) {
    check_tally_compatible(tally, insertion_sizes.empty() ? AttackKind::Patch : AttackKind::Insertion,
                           z);
    const std::size_t d_patch = delta(patch_sizes, z);
    const std::size_t d_insert = delta(insertion_sizes, z);
    const Label top = majority_label(tally);
    const std::size_t n_top = top == Label::Malicious ? tally.n_malicious : tally.n_benign;
    const std::size_t n_second = top == Label::Malicious ? tally.n_benign : tally.n_malicious;

    Certificate cert;
    cert.kind = patch_sizes.empty() ? AttackKind::Insertion : AttackKind::Patch;
    cert.z = z;
    cert.payload_sizes = patch_sizes;
    cert.payload_sizes.insert(cert.payload_sizes.end(), insertion_sizes.begin(),
                              insertion_sizes.end());
    cert.delta = d_patch + d_insert;
    cert.margin_required = (top == Label::Benign ? 1 : 0) + 2 * d_patch + d_insert;
    cert.margin_actual = n_top - n_second;
    cert.certified = cert.margin_actual >= cert.margin_required;
    return cert;
}

// --- brute-force adversary oracle ---------------------------------------------
//
// Independent validation of the certificates. Enumerates every admissible
// placement of the payloads, lets the adversary relabel every intersected or
// inserted chunk, and reports the worst resulting smoothed label.

namespace detail {

// All distinct chunk ranges [a, b] a patch of p bytes can intersect when
// placed at any byte offset inside an N-chunk file.
inline std::vector<std::pair<std::size_t, std::size_t>> patch_ranges(std::size_t p, std::size_t z,
                                                                     std::size_t n_chunks) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    const std::size_t file_len = n_chunks * z;
    const std::size_t k_max = p >= file_len ? 0 : file_len - p;
    for (std::size_t a = 0; a < n_chunks; ++a) {
        const std::size_t k_lo = a * z;
        if (k_lo > k_max) break;
        const std::size_t k_hi = std::min(a * z + z - 1, k_max);
        const std::size_t b_lo = std::min((k_lo + p - 1) / z, n_chunks - 1);
        const std::size_t b_hi = std::min((k_hi + p - 1) / z, n_chunks - 1);
        for (std::size_t b = b_lo; b <= b_hi; ++b) out.emplace_back(a, b);
    }
    return out;
}

inline Label evaluate_flip(std::size_t n_benign, std::size_t n_malicious) {
    return n_malicious >= n_benign ? Label::Malicious : Label::Benign;
}

} // namespace detail

inline Label adversary_oracle(const ChunkTally& tally, AttackKind kind,
                              const std::vector<std::size_t>& payload_sizes, std::size_t z) {
    if (tally.total > 20)
        throw Error(ErrorKind::TooLarge,
                    "oracle enumeration is guarded to tallies of at most 20 chunks");
    if (z == 0) throw Error(ErrorKind::Config, "chunk size must be positive");
    if (kind == AttackKind::Insertion && !tally.preprocessed)
        throw Error(ErrorKind::UnalignedTally,
                    "insertion oracle requires a tally from a preprocessed input");
    for (std::size_t p : payload_sizes)
        if (p == 0) throw Error(ErrorKind::ZeroPayload, "payload sizes must be >= 1 byte");

    const Label original = majority_label(tally);
    const Label target = original == Label::Malicious ? Label::Benign : Label::Malicious;
    const std::size_t n = tally.total;
    if (n == 0 || payload_sizes.empty()) return original;

    if (kind == AttackKind::Insertion) {
        // Alignment-preserving insertion: each payload lands in a hole of
        // whole chunks; every chunk overlapping payload bytes is adversarial,
        // original chunks keep their votes. The payload may straddle inside
        // its hole, spanning up to ceil(p/z)+1 chunk slots.
        std::size_t inserted = 0;
        for (std::size_t p : payload_sizes) inserted += chunks_spanned_worst(p, z);
        std::size_t n_b = tally.n_benign, n_m = tally.n_malicious;
        (target == Label::Malicious ? n_m : n_b) += inserted;
        return detail::evaluate_flip(n_b, n_m) == target ? target : original;
    }

    // Patch: enumerate, per payload, every distinct chunk range a placement
    // can intersect; combine payload choices and relabel the union.
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> choices;
    for (std::size_t p : payload_sizes) choices.push_back(detail::patch_ranges(p, z, n));

    std::uint32_t target_mask = 0; // chunks currently voting for the original class
    for (const auto& v : tally.per_chunk)
        if (v.label == original) target_mask |= (std::uint32_t(1) << v.index);

    std::set<std::uint32_t> seen;
    std::vector<std::uint32_t> frontier{0};
    for (const auto& ranges : choices) {
        std::set<std::uint32_t> next;
        for (std::uint32_t acc : frontier) {
            for (const auto& [a, b] : ranges) {
                std::uint32_t mask = acc;
                for (std::size_t i = a; i <= b; ++i) mask |= (std::uint32_t(1) << i);
                next.insert(mask);
            }
        }
        frontier.assign(next.begin(), next.end());
    }

    for (std::uint32_t mask : frontier) {
        // Relabel every affected chunk to the target class.
        const std::size_t stolen =
            static_cast<std::size_t>(std::popcount(mask & target_mask));
        std::size_t n_b = tally.n_benign, n_m = tally.n_malicious;
        if (target == Label::Malicious) {
            n_m += stolen;
            n_b -= stolen;
        } else {
            n_b += stolen;
            n_m -= stolen;
        }
        if (detail::evaluate_flip(n_b, n_m) == target) return target;
    }
    return original;
}

// --- dataset sweeps -------------------------------------------------------------

struct EvalCase {
    ChunkTally tally;
    bool correct; // smoothed prediction matched the ground-truth label
};

inline EvalCase make_eval_case(const TrainedModel& model, const Bytes& file, Label truth,
                               std::size_t z) {
    auto pred = predict_smoothed(model, file, z);
    return EvalCase{std::move(pred.tally), pred.label == truth};
}

// Fraction of inputs that are both correctly classified and certified against
// any attack of the given kind whose payload is p_fraction of the input (as
// the smoothing scheme sees it, i.e. after alignment preprocessing).
inline double certified_accuracy(const std::vector<EvalCase>& cases, AttackKind kind,
                                 double p_fraction, std::size_t z) {
    if (p_fraction <= 0.0) throw Error(ErrorKind::Config, "p_fraction must be positive");
    if (cases.empty()) return 0.0;
    std::size_t ok = 0;
    for (const auto& c : cases) {
        const auto p = static_cast<std::size_t>(
            std::ceil(p_fraction * static_cast<double>(c.tally.source_len)));
        const auto cert = certify(c.tally, kind, {std::max<std::size_t>(p, 1)}, z);
        if (c.correct && cert.certified) ++ok;
    }
    return static_cast<double>(ok) / static_cast<double>(cases.size());
}

struct SweepRow {
    double p_fraction;
    AttackKind kind;
    double certified_accuracy;
    std::size_t n_files;
};

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = "p_fraction,kind,certified_accuracy,n_files\n";
    char buf[96];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.6g,%s,%.6f,%zu\n", r.p_fraction, to_string(r.kind),
                      r.certified_accuracy, r.n_files);
        out += buf;
    }
    return out;
}

} // namespace certsmooth
