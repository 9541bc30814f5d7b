#pragma once

// Functionality-preserving PE manipulations. Each attack transforms an image
// and reports the byte regions an optimizer may write into; the structural
// fields themselves are never writable, so any fill keeps the file valid.
// The black-box optimizer is a small elitist GA whose fitness is the target
// detector's soft label P(malicious).

#include <cstdint>
#include <functional>
#include <future>
#include <random>
#include <string>
#include <vector>

#include "certsmooth/bytes.hpp"
#include "certsmooth/errors.hpp"
#include "certsmooth/pe.hpp"

namespace certsmooth {

enum class AttackStrategy : std::uint8_t {
    PaddingSlack = 0,
    Shift = 1,
    SectionInject = 2,
    CodeCaves = 3,
    Combined = 4,
};

inline const char* to_string(AttackStrategy s) {
    switch (s) {
        case AttackStrategy::PaddingSlack: return "padding_slack";
        case AttackStrategy::Shift: return "shift";
        case AttackStrategy::SectionInject: return "section_inject";
        case AttackStrategy::CodeCaves: return "code_caves";
        case AttackStrategy::Combined: return "combined";
    }
    return "unknown";
}

struct ByteRegion {
    std::size_t offset; // in the transformed, serialized file
    std::size_t length;
};

struct AttackPlan {
    AttackStrategy kind = AttackStrategy::PaddingSlack;
    pe::PeImage transformed;
    std::vector<ByteRegion> writable_regions; // disjoint, ascending
    std::vector<ByteRegion> inserted_spans;   // new bytes, ascending, in transformed coords
    std::vector<ByteRegion> mutated_regions;  // structural header fields the attack rewrote
    std::string provenance;
    std::vector<std::string> steps; // structural transforms applied

    std::size_t writable_bytes() const {
        std::size_t n = 0;
        for (const auto& r : writable_regions) n += r.length;
        return n;
    }
};

// Maps an offset of the pre-attack file to its position in the transformed
// file, walking the inserted spans in ascending order.
inline std::size_t map_original_offset(const AttackPlan& plan, std::size_t offset) {
    std::size_t pos = offset;
    for (const auto& s : plan.inserted_spans)
        if (pos >= s.offset) pos += s.length;
    return pos;
}

namespace detail {

// Shifts recorded offsets for an insertion of `length` bytes at `at`
// (coordinates of the file as it was before this insertion).
inline void note_insertion(AttackPlan& plan, std::size_t at, std::size_t length,
                           bool writable) {
    if (length == 0) return;
    for (auto& r : plan.writable_regions)
        if (r.offset >= at) r.offset += length;
    for (auto& s : plan.inserted_spans)
        if (s.offset >= at) s.offset += length;
    plan.inserted_spans.push_back({at, length});
    std::sort(plan.inserted_spans.begin(), plan.inserted_spans.end(),
              [](const ByteRegion& a, const ByteRegion& b) { return a.offset < b.offset; });
    if (writable) plan.writable_regions.push_back({at, length});
}

inline void sort_regions(AttackPlan& plan) {
    std::sort(plan.writable_regions.begin(), plan.writable_regions.end(),
              [](const ByteRegion& a, const ByteRegion& b) { return a.offset < b.offset; });
}

// Byte ranges of the header block whose structural fields changed between the
// original and the transformed image (section table pointers, image sizes).
// Header offsets are stable across the transform, so these are valid in both
// coordinate systems.
inline std::vector<ByteRegion> header_mutations(const pe::PeImage& before,
                                                const pe::PeImage& after) {
    const Bytes a = pe::patched_headers(before);
    const Bytes b = pe::patched_headers(after);
    const std::size_t n = std::min(a.size(), b.size());
    std::vector<ByteRegion> out;
    std::size_t i = 0;
    while (i < n) {
        if (a[i] == b[i]) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < n && a[j] != b[j]) ++j;
        out.push_back({i, j - i});
        i = j;
    }
    return out;
}

inline Bytes pool_fill(const Bytes& pool, std::size_t n, std::mt19937_64& rng) {
    Bytes out;
    out.reserve(n);
    if (pool.empty()) {
        out.assign(n, 0);
        return out;
    }
    // Contiguous slices of legitimate content, not a per-byte resample.
    const std::size_t slice = std::min<std::size_t>(std::max<std::size_t>(pool.size() / 4, 64),
                                                    std::max<std::size_t>(n, 1));
    while (out.size() < n) {
        const std::size_t take = std::min(slice, n - out.size());
        std::uniform_int_distribution<std::size_t> dist(
            0, pool.size() > take ? pool.size() - take : 0);
        const std::size_t start = dist(rng);
        const std::size_t avail = std::min(take, pool.size() - start);
        out.insert(out.end(), pool.begin() + start, pool.begin() + start + avail);
    }
    out.resize(n);
    return out;
}

} // namespace detail

// --- attacks -------------------------------------------------------------------

// Padding + slack space: appends `pad_bytes` to the overlay and exposes every
// slack region; everything that already carried meaning stays untouched.
inline AttackPlan padding_slack(const pe::PeImage& img, std::size_t pad_bytes) {
    AttackPlan plan;
    plan.kind = AttackStrategy::PaddingSlack;
    plan.provenance = "padding_slack(pad_bytes=" + std::to_string(pad_bytes) + ")";
    const std::size_t old_end = img.serialized_size();
    plan.transformed = pad_bytes == 0 ? img : pe::append_overlay(img, Bytes(pad_bytes, 0));
    if (pad_bytes > 0) plan.steps.push_back("append_overlay(" + std::to_string(pad_bytes) + ")");
    for (const auto& s : pe::slack_regions(img))
        if (s.length > 0) plan.writable_regions.push_back({s.file_offset, s.length});
    if (pad_bytes > 0) detail::note_insertion(plan, old_end, pad_bytes, true);
    plan.mutated_regions = detail::header_mutations(img, plan.transformed);
    detail::sort_regions(plan);
    return plan;
}

// Shift: a writable gap of `amount` bytes between the headers and the first
// section; every raw pointer moves up by `amount`.
inline AttackPlan shift_sections(const pe::PeImage& img, std::size_t amount) {
    const std::size_t align = std::max<std::uint32_t>(img.file_alignment, 1);
    if (amount % align != 0)
        throw Error(ErrorKind::AlignmentError,
                    "shift amount " + std::to_string(amount) + " is not a multiple of file_alignment " +
                        std::to_string(align));
    AttackPlan plan;
    plan.kind = AttackStrategy::Shift;
    plan.provenance = "shift(amount=" + std::to_string(amount) + ")";
    plan.transformed = img;
    if (amount == 0) return plan;

    std::size_t first = img.sections.size();
    for (std::size_t i = 0; i < img.sections.size(); ++i)
        if (img.sections[i].has_raw_data()) { first = i; break; }
    if (first == img.sections.size())
        throw Error(ErrorKind::Config, "image has no section raw data to shift");

    const std::size_t at = img.size_of_headers() + img.section_gaps[first].size();
    plan.transformed = pe::extend_gap(img, first, amount);
    plan.steps.push_back("shift(" + std::to_string(amount) + ")");
    detail::note_insertion(plan, at, amount, true);
    plan.mutated_regions = detail::header_mutations(img, plan.transformed);
    return plan;
}

// GAMMA-style benign-section injection: `count` new sections whose payloads
// are slices of the benign pool. Total injected raw bytes are capped at twice
// the original file size; per-section size defaults to cap/count.
inline AttackPlan inject_sections(const pe::PeImage& img, std::size_t count,
                                  std::size_t per_section_size, const Bytes& pool,
                                  std::uint64_t seed) {
    AttackPlan plan;
    plan.kind = AttackStrategy::SectionInject;
    plan.transformed = img;
    plan.provenance = "inject_sections(count=" + std::to_string(count) +
                      ", per_section_size=" + std::to_string(per_section_size) + ")";
    if (count == 0) return plan;

    const std::size_t align = std::max<std::uint32_t>(img.file_alignment, 1);
    const std::size_t cap = 2 * img.original_len;
    std::size_t per = per_section_size == 0 ? cap / count : per_section_size;
    per = std::min(per, cap / count);
    per = std::max(per / align * align, align); // keep raw extents aligned
    if (per * count > cap) per = std::max((cap / count) / align * align, align);

    std::mt19937_64 rng(seed);
    pe::PeImage cur = img;
    const std::size_t growth = pe::ensure_table_room(cur, count);
    if (growth > 0) {
        detail::note_insertion(plan, img.size_of_headers(), growth, false);
        plan.provenance += " grew headers by " + std::to_string(growth);
    }
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t raw_end = cur.raw_extent_end();
        const std::size_t ptr = round_up(raw_end, align);
        const Bytes payload = detail::pool_fill(pool, per, rng);
        cur = pe::add_section(cur, ".inj" + std::to_string(i), payload,
                              static_cast<std::uint32_t>(per), 0x40000040u);
        // The alignment pad (if any) plus the payload are new bytes.
        detail::note_insertion(plan, raw_end, (ptr - raw_end) + per, false);
        plan.writable_regions.push_back({ptr, per});
    }
    plan.steps.push_back("inject_sections(" + std::to_string(count) + ")");
    plan.transformed = std::move(cur);
    plan.mutated_regions = detail::header_mutations(img, plan.transformed);
    detail::sort_regions(plan);
    return plan;
}

// Code-cave extension: every section's raw extent grows by `per_gap` zero
// bytes past its meaningful content, shifting later extents down.
inline AttackPlan extend_code_caves(const pe::PeImage& img, std::size_t per_gap) {
    const std::size_t align = std::max<std::uint32_t>(img.file_alignment, 1);
    if (per_gap % align != 0)
        throw Error(ErrorKind::AlignmentError,
                    "cave size " + std::to_string(per_gap) + " is not a multiple of file_alignment " +
                        std::to_string(align));
    AttackPlan plan;
    plan.kind = AttackStrategy::CodeCaves;
    plan.provenance = "code_caves(per_gap=" + std::to_string(per_gap) + ")";
    plan.transformed = img;
    if (per_gap == 0) return plan;

    pe::PeImage cur = img;
    for (std::size_t i = 0; i < img.sections.size(); ++i) {
        if (!img.sections[i].has_raw_data()) continue;
        const std::size_t at = cur.sections[i].raw_end(); // current coords
        cur = pe::pad_section_raw(cur, i, per_gap);
        detail::note_insertion(plan, at, per_gap, true);
    }
    plan.steps.push_back("extend_code_caves(" + std::to_string(per_gap) + ")");
    plan.transformed = std::move(cur);
    plan.mutated_regions = detail::header_mutations(img, plan.transformed);
    detail::sort_regions(plan);
    return plan;
}

struct CombinedParams {
    std::size_t shift_amount = 4096;
    std::size_t cave_per_gap = 512;
    std::size_t inject_count = 5;
    std::size_t inject_per_section = 0; // 0 = cap/count
    std::size_t append_bytes = 10000;
    std::uint64_t seed = 0;
};

// The five-step composite attack; the fifth step is the optimizer itself.
inline AttackPlan combined(const pe::PeImage& img, const Bytes& pool,
                           const CombinedParams& params = {}) {
    AttackPlan plan;
    plan.kind = AttackStrategy::Combined;
    plan.provenance = "combined(shift=" + std::to_string(params.shift_amount) +
                      ", caves=" + std::to_string(params.cave_per_gap) +
                      ", sections=" + std::to_string(params.inject_count) +
                      ", append=" + std::to_string(params.append_bytes) + ")";

    // Each sub-plan's offsets live in its own output coordinates. Absorbing
    // the steps in order, spans ascending, keeps the accumulated plan's
    // offsets consistent: note_insertion shifts everything recorded so far.
    auto absorb = [&plan](const AttackPlan& step) {
        for (const auto& s : step.inserted_spans)
            detail::note_insertion(plan, s.offset, s.length, false);
        for (const auto& r : step.writable_regions) plan.writable_regions.push_back(r);
    };

    AttackPlan s1 = shift_sections(img, params.shift_amount);
    AttackPlan s2 = extend_code_caves(s1.transformed, params.cave_per_gap);
    AttackPlan s3 =
        inject_sections(s2.transformed, params.inject_count, params.inject_per_section, pool,
                        params.seed);
    // Step 4 is a plain overlay append; slack stays out of the writable set.
    const std::size_t old_end = s3.transformed.serialized_size();
    plan.transformed = params.append_bytes == 0
                           ? s3.transformed
                           : pe::append_overlay(s3.transformed, Bytes(params.append_bytes, 0));

    absorb(s1);
    absorb(s2);
    absorb(s3);
    if (params.append_bytes > 0) detail::note_insertion(plan, old_end, params.append_bytes, true);

    plan.steps = {"shift(" + std::to_string(params.shift_amount) + ")",
                  "extend_code_caves(" + std::to_string(params.cave_per_gap) + ")",
                  "inject_sections(" + std::to_string(params.inject_count) + ")",
                  "append_overlay(" + std::to_string(params.append_bytes) + ")"};
    plan.mutated_regions = detail::header_mutations(img, plan.transformed);
    detail::sort_regions(plan);
    return plan;
}

// --- GA optimizer ---------------------------------------------------------------

struct GaConfig {
    std::size_t population = 10;
    std::size_t max_steps = 50;
    double individual_mutation_prob = 0.30;
    double byte_mutation_prob = 0.30;
    std::uint64_t seed = 0;
    std::size_t eval_threads = 1;

    void validate() const {
        if (population < 2) throw Error(ErrorKind::Config, "GA population must be >= 2");
        if (individual_mutation_prob < 0.0 || individual_mutation_prob > 1.0 ||
            byte_mutation_prob < 0.0 || byte_mutation_prob > 1.0)
            throw Error(ErrorKind::Config, "GA mutation probabilities must lie in [0, 1]");
    }
};

struct GaResult {
    Bytes best_fill;
    double best_score = 1.0;
    std::vector<double> history; // best-so-far per executed step
    Bytes best_file;
};

// File bytes with a candidate fill written into the plan's writable regions.
inline Bytes apply_fill(const Bytes& base_file, const std::vector<ByteRegion>& regions,
                        const Bytes& fill) {
    Bytes out = base_file;
    std::size_t cursor = 0;
    for (const auto& r : regions) {
        std::copy(fill.begin() + cursor, fill.begin() + cursor + r.length, out.begin() + r.offset);
        cursor += r.length;
    }
    return out;
}

inline Bytes extract_fill(const Bytes& file, const std::vector<ByteRegion>& regions) {
    Bytes out;
    for (const auto& r : regions)
        out.insert(out.end(), file.begin() + r.offset, file.begin() + r.offset + r.length);
    return out;
}

using TargetScorer = std::function<double(const Bytes&)>;

// Minimizes the target's soft label over fills of the plan's writable bytes.
// Elitism of one plus tournament selection (size 2), uniform crossover, and
// the configured two-level mutation. Stops early once the target is evaded.
inline GaResult ga_optimize(const AttackPlan& plan, const TargetScorer& target,
                            const GaConfig& config, const Bytes* init_pool = nullptr) {
    config.validate();
    const std::size_t genome = plan.writable_bytes();
    if (genome == 0) throw Error(ErrorKind::EmptyWritable, "attack plan exposes no writable bytes");

    const Bytes base_file = pe::serialize(plan.transformed);
    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> byte_dist(0, 255);

    std::vector<Bytes> population;
    population.reserve(config.population);
    population.push_back(extract_fill(base_file, plan.writable_regions));
    for (std::size_t i = 1; i < config.population; ++i) {
        if (init_pool != nullptr && !init_pool->empty()) {
            population.push_back(detail::pool_fill(*init_pool, genome, rng));
        } else {
            Bytes ind(genome);
            for (auto& b : ind) b = static_cast<std::uint8_t>(byte_dist(rng));
            population.push_back(std::move(ind));
        }
    }

    std::vector<double> fitness(config.population);
    auto evaluate = [&](const std::vector<Bytes>& pop) {
        if (config.eval_threads > 1) {
            std::vector<std::future<double>> futs;
            futs.reserve(pop.size());
            for (const auto& ind : pop)
                futs.push_back(std::async(std::launch::async, [&, indp = &ind] {
                    return target(apply_fill(base_file, plan.writable_regions, *indp));
                }));
            for (std::size_t i = 0; i < pop.size(); ++i) fitness[i] = futs[i].get();
        } else {
            for (std::size_t i = 0; i < pop.size(); ++i)
                fitness[i] = target(apply_fill(base_file, plan.writable_regions, pop[i]));
        }
    };

    GaResult result;
    evaluate(population);
    std::size_t best = static_cast<std::size_t>(
        std::min_element(fitness.begin(), fitness.end()) - fitness.begin());
    result.best_fill = population[best];
    result.best_score = fitness[best];

    auto tournament = [&]() -> const Bytes& {
        std::uniform_int_distribution<std::size_t> pick(0, config.population - 1);
        const std::size_t a = pick(rng), b = pick(rng);
        return fitness[a] <= fitness[b] ? population[a] : population[b];
    };

    for (std::size_t step = 0; step < config.max_steps; ++step) {
        if (result.best_score < 0.5) break; // already evades the hard label
        std::vector<Bytes> next;
        next.reserve(config.population);
        next.push_back(result.best_fill); // elite
        while (next.size() < config.population) {
            const Bytes& pa = tournament();
            const Bytes& pb = tournament();
            Bytes child(genome);
            for (std::size_t k = 0; k < genome; ++k) child[k] = (rng() & 1) ? pa[k] : pb[k];
            if (unit(rng) < config.individual_mutation_prob) {
                for (std::size_t k = 0; k < genome; ++k)
                    if (unit(rng) < config.byte_mutation_prob)
                        child[k] = static_cast<std::uint8_t>(byte_dist(rng));
            }
            next.push_back(std::move(child));
        }
        population = std::move(next);
        evaluate(population);
        best = static_cast<std::size_t>(
            std::min_element(fitness.begin(), fitness.end()) - fitness.begin());
        if (fitness[best] < result.best_score) {
            result.best_score = fitness[best];
            result.best_fill = population[best];
        }
        result.history.push_back(result.best_score);
    }
    result.best_file = apply_fill(base_file, plan.writable_regions, result.best_fill);
    return result;
}

} // namespace certsmooth
