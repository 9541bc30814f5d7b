#pragma once

// Corpus handling: JSONL manifest ingestion with hash/size validation,
// timestamp-ordered splits, and a synthetic PE corpus generator. The
// generator plants class-specific byte mixtures plus a fixed 64-byte motif
// per class so the desk-scale classifiers have something learnable, and it
// records the exact layout (sections, slack, motif offsets) as ground truth.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "certsmooth/bytes.hpp"
#include "certsmooth/detail/sha256.hpp"
#include "certsmooth/errors.hpp"
#include "certsmooth/pe.hpp"
#include "certsmooth/smoothing.hpp"

namespace certsmooth {

struct ManifestEntry {
    std::string path; // relative to the dataset root
    std::string sha256;
    Label label = Label::Benign;
    std::string family;
    std::int64_t timestamp = 0;
    std::size_t size_bytes = 0;
};

struct Dataset {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;

    Bytes load(std::size_t i) const { return read_file(root / entries[i].path); }
};

constexpr std::size_t kDefaultSizeCap = 1 << 20; // 1 MiB

// --- manifest io ---------------------------------------------------------------

inline nlohmann::ordered_json to_json(const ManifestEntry& e) {
    nlohmann::ordered_json j;
    j["path"] = e.path;
    j["sha256"] = e.sha256;
    j["label"] = to_string(e.label);
    if (!e.family.empty()) j["family"] = e.family;
    j["timestamp"] = e.timestamp;
    j["size_bytes"] = e.size_bytes;
    return j;
}

inline ManifestEntry manifest_entry_from_json(const nlohmann::json& j) {
    ManifestEntry e;
    e.path = j.at("path").get<std::string>();
    e.sha256 = j.at("sha256").get<std::string>();
    const std::string label = j.at("label").get<std::string>();
    if (label == "malicious") {
        e.label = Label::Malicious;
    } else if (label == "benign") {
        e.label = Label::Benign;
    } else {
        throw Error(ErrorKind::Config, "manifest label must be benign or malicious, got " + label);
    }
    e.family = j.value("family", std::string{});
    e.timestamp = j.at("timestamp").get<std::int64_t>();
    e.size_bytes = j.at("size_bytes").get<std::size_t>();
    return e;
}

inline void write_manifest(const std::filesystem::path& path,
                           const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot create " + path.string());
    for (const auto& e : entries) out << to_json(e).dump() << '\n';
}

// Validates every entry: the file must exist, hash to the recorded sha256 and
// respect the size cap.
inline Dataset ingest(const std::filesystem::path& dir, const std::filesystem::path& manifest,
                      std::size_t size_cap = kDefaultSizeCap) {
    std::ifstream in(manifest);
    if (!in) throw Error(ErrorKind::Io, "cannot open manifest " + manifest.string());
    Dataset ds;
    ds.root = dir;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw Error(ErrorKind::Config,
                        "manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        ManifestEntry e = manifest_entry_from_json(j);
        const Bytes content = read_file(dir / e.path);
        if (content.size() > size_cap)
            throw Error(ErrorKind::OversizeFile,
                        e.path + " is " + std::to_string(content.size()) +
                            " bytes, cap is " + std::to_string(size_cap));
        if (detail::sha256_hex(content) != e.sha256)
            throw Error(ErrorKind::HashMismatch, "content hash mismatch for " + e.path);
        if (e.size_bytes != content.size())
            throw Error(ErrorKind::HashMismatch,
                        "recorded size mismatch for " + e.path);
        ds.entries.push_back(std::move(e));
    }
    return ds;
}

// Oldest files train, newest test; equal timestamps fall back to sha256 order.
struct SplitResult {
    Dataset train, val, test;
};

inline SplitResult split_by_time(const Dataset& ds, double train_frac, double val_frac) {
    if (train_frac < 0 || val_frac < 0 || train_frac + val_frac >= 1.0)
        throw Error(ErrorKind::Config, "split fractions must be non-negative and sum below 1");
    std::vector<ManifestEntry> sorted = ds.entries;
    std::sort(sorted.begin(), sorted.end(), [](const ManifestEntry& a, const ManifestEntry& b) {
        if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
        return a.sha256 < b.sha256;
    });
    const std::size_t n = sorted.size();
    const auto n_train = static_cast<std::size_t>(train_frac * static_cast<double>(n) + 1e-9);
    const auto n_val = static_cast<std::size_t>(val_frac * static_cast<double>(n) + 1e-9);
    SplitResult r;
    r.train.root = r.val.root = r.test.root = ds.root;
    r.train.entries.assign(sorted.begin(), sorted.begin() + n_train);
    r.val.entries.assign(sorted.begin() + n_train, sorted.begin() + n_train + n_val);
    r.test.entries.assign(sorted.begin() + n_train + n_val, sorted.end());
    return r;
}

// --- synthetic PE builder --------------------------------------------------------

struct PeSectionSpec {
    std::string name;
    Bytes raw;                  // already sized; placed at the next aligned offset
    std::uint32_t virtual_size; // < raw.size() plants slack
    std::uint32_t characteristics = 0x60000020;
};

struct PeBuildSpec {
    bool pe32plus = false;
    std::uint32_t file_alignment = 512;
    std::uint32_t section_alignment = 4096;
    std::uint32_t timestamp = 0;
    std::vector<PeSectionSpec> sections;
    Bytes overlay;
    std::uint32_t entry_offset = 16; // entry point RVA = first section VA + this
};

// Emits a structurally valid PE32/PE32+ image from scratch.
inline Bytes build_pe(const PeBuildSpec& spec) {
    const std::size_t e_lfanew = 0x80;
    const std::size_t opt_size = spec.pe32plus ? 240 : 224;
    const std::size_t table = e_lfanew + 4 + pe::kCoffSize + opt_size;
    const std::size_t table_end = table + spec.sections.size() * pe::kSectionHeaderSize;
    const std::size_t falign = spec.file_alignment;
    const std::size_t salign = spec.section_alignment;
    const std::size_t size_of_headers = round_up(table_end, falign);

    Bytes out(size_of_headers, 0);
    out[0] = 'M';
    out[1] = 'Z';
    write_u32(out, pe::kLfanewOffset, static_cast<std::uint32_t>(e_lfanew));
    static const char stub[] = "This program region holds a synthetic DOS stub.";
    for (std::size_t i = 0; i + 1 < sizeof stub && 0x40 + i < e_lfanew; ++i)
        out[0x40 + i] = static_cast<std::uint8_t>(stub[i]);

    out[e_lfanew] = 'P';
    out[e_lfanew + 1] = 'E';
    const std::size_t coff = e_lfanew + 4;
    write_u16(out, coff + 0, spec.pe32plus ? 0x8664 : 0x014C); // machine
    write_u16(out, coff + 2, static_cast<std::uint16_t>(spec.sections.size()));
    write_u32(out, coff + 4, spec.timestamp);
    write_u16(out, coff + 16, static_cast<std::uint16_t>(opt_size));
    write_u16(out, coff + 18, spec.pe32plus ? 0x0022 : 0x0102); // EXE characteristics

    const std::size_t opt = coff + pe::kCoffSize;
    write_u16(out, opt, spec.pe32plus ? pe::kMagicPe32Plus : pe::kMagicPe32);
    out[opt + 2] = 14; // linker versions, cosmetic
    out[opt + 3] = 0;
    if (spec.pe32plus) {
        write_u32(out, opt + 24, 0x00000000); // image base 0x1'0000'0000
        write_u32(out, opt + 28, 0x00000001);
    } else {
        write_u32(out, opt + 28, 0x00400000); // image base
    }
    write_u32(out, opt + 32, static_cast<std::uint32_t>(salign));
    write_u32(out, opt + 36, static_cast<std::uint32_t>(falign));
    write_u16(out, opt + 40, 6); // OS versions
    write_u16(out, opt + 48, 6);
    write_u16(out, opt + 68, 3); // subsystem: console
    if (spec.pe32plus) {
        write_u32(out, opt + 108, 16); // NumberOfRvaAndSizes
    } else {
        write_u32(out, opt + 92, 16);
    }

    // Section layout: raw data packed at file_alignment, VAs at section_alignment.
    std::size_t raw_cursor = size_of_headers;
    std::uint64_t va_cursor = round_up(size_of_headers, salign);
    std::uint32_t entry = 0;
    for (std::size_t i = 0; i < spec.sections.size(); ++i) {
        const auto& s = spec.sections[i];
        const std::size_t e = table + i * pe::kSectionHeaderSize;
        for (std::size_t k = 0; k < 8 && k < s.name.size(); ++k)
            out[e + k] = static_cast<std::uint8_t>(s.name[k]);
        write_u32(out, e + 8, s.virtual_size);
        write_u32(out, e + 12, static_cast<std::uint32_t>(va_cursor));
        write_u32(out, e + 16, static_cast<std::uint32_t>(s.raw.size()));
        write_u32(out, e + 20, static_cast<std::uint32_t>(raw_cursor));
        write_u32(out, e + 36, s.characteristics);
        if (i == 0) entry = static_cast<std::uint32_t>(va_cursor + spec.entry_offset);
        raw_cursor += s.raw.size();
        va_cursor += round_up(std::max<std::uint32_t>(s.virtual_size, 1), salign);
    }
    write_u32(out, opt + 16, entry);
    write_u32(out, opt + 56, static_cast<std::uint32_t>(va_cursor));          // size_of_image
    write_u32(out, opt + 60, static_cast<std::uint32_t>(size_of_headers));    // size_of_headers

    for (const auto& s : spec.sections) out.insert(out.end(), s.raw.begin(), s.raw.end());
    out.insert(out.end(), spec.overlay.begin(), spec.overlay.end());
    return out;
}

// --- synthetic corpus -------------------------------------------------------------

struct MotifSpec {
    Bytes pattern;
    std::size_t min_plants = 1;
    std::size_t max_plants = 4;
};

inline Bytes default_benign_motif() {
    Bytes m(64);
    for (std::size_t i = 0; i < m.size(); ++i)
        m[i] = static_cast<std::uint8_t>(0x41 + (i * 7) % 26); // uppercase ASCII run
    return m;
}

inline Bytes default_malicious_motif() {
    Bytes m(64);
    for (std::size_t i = 0; i < m.size(); ++i)
        m[i] = static_cast<std::uint8_t>(0xD0 + (i * 11) % 47); // high-byte run
    return m;
}

struct CorpusSpec {
    std::size_t n_benign = 50;
    std::size_t n_malicious = 50;
    std::size_t min_size = 4096;
    std::size_t max_size = 65536;
    MotifSpec benign_motif{default_benign_motif(), 1, 4};
    MotifSpec malicious_motif{default_malicious_motif(), 1, 4};
    std::size_t slack_max = 256;  // per-section planted slack
    std::size_t overlay_max = 0;
    std::uint32_t file_alignment = 512;
    std::uint64_t seed = 1;
};

struct SectionTruth {
    std::string name;
    std::size_t pointer_to_raw_data;
    std::size_t size_of_raw_data;
    std::size_t virtual_size;
    std::size_t slack_offset; // 0 when no slack
    std::size_t slack_len;
};

struct FileTruth {
    std::string path;
    Label label = Label::Benign;
    bool pe32plus = false;
    std::size_t header_size = 0;
    std::size_t file_len = 0;
    std::size_t overlay_len = 0;
    std::vector<SectionTruth> sections;
    std::vector<std::size_t> motif_offsets; // file offsets of the class motif
};

struct GeneratedCorpus {
    std::vector<ManifestEntry> manifest;
    std::vector<FileTruth> truth;
    double separability = 0.0; // closed-form likelihood-ratio accuracy
};

namespace detail {

// Class-conditional byte mixtures. Probabilities are exact so the generator
// can run a closed-form likelihood-ratio separability check on its output.
inline std::uint8_t sample_profile_byte(Label label, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> pct(0, 99);
    std::uniform_int_distribution<int> any(0, 255);
    const int roll = pct(rng);
    if (label == Label::Benign) {
        if (roll < 45) return 0x00;
        if (roll < 75) return static_cast<std::uint8_t>(0x20 + any(rng) % 95);
        if (roll < 90) return static_cast<std::uint8_t>(0x01 + any(rng) % 31);
        return static_cast<std::uint8_t>(any(rng));
    }
    if (roll < 15) return 0x00;
    if (roll < 50) return static_cast<std::uint8_t>(0x80 + any(rng) % 64);
    if (roll < 80) return static_cast<std::uint8_t>(0xC0 + any(rng) % 64);
    return static_cast<std::uint8_t>(any(rng));
}

inline double profile_probability(Label label, std::uint8_t v) {
    const double uni = 1.0 / 256.0;
    if (label == Label::Benign) {
        double p = 0.10 * uni;
        if (v == 0x00) p += 0.45;
        if (v >= 0x20 && v <= 0x7E) p += 0.30 / 95.0;
        if (v >= 0x01 && v <= 0x1F) p += 0.15 / 31.0;
        return p;
    }
    double p = 0.20 * uni;
    if (v == 0x00) p += 0.15;
    if (v >= 0x80 && v <= 0xBF) p += 0.35 / 64.0;
    if (v >= 0xC0 && v <= 0xFF) p += 0.30 / 64.0;
    return p;
}

inline double log_likelihood_ratio(const Bytes& file) {
    std::size_t counts[256] = {0};
    for (std::uint8_t b : file) counts[b]++;
    double llr = 0.0;
    for (int v = 0; v < 256; ++v) {
        if (counts[v] == 0) continue;
        llr += static_cast<double>(counts[v]) *
               std::log(profile_probability(Label::Malicious, static_cast<std::uint8_t>(v)) /
                        profile_probability(Label::Benign, static_cast<std::uint8_t>(v)));
    }
    return llr;
}

} // namespace detail

// Generates the corpus into out_dir, writes manifest.jsonl and
// groundtruth.jsonl alongside, and returns both records.
inline GeneratedCorpus generate_corpus(const CorpusSpec& spec,
                                       const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    if (spec.min_size < 3072 || spec.max_size < spec.min_size)
        throw Error(ErrorKind::Config, "corpus size range must be sane and at least 3 KiB");
    if (spec.benign_motif.pattern == spec.malicious_motif.pattern)
        throw Error(ErrorKind::Config, "class motifs must be disjoint byte patterns");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create " + out_dir.string());

    GeneratedCorpus result;
    const std::size_t total = spec.n_benign + spec.n_malicious;
    static const char* kNames[4] = {".text", ".data", ".rdata", ".rsrc"};
    constexpr std::int64_t kBaseTimestamp = 1564617600; // 2019-08-01, corpus epoch

    std::size_t n_llr_correct = 0;
    for (std::size_t idx = 0; idx < total; ++idx) {
        // Interleave classes along the timeline so every time split has both.
        const Label label = (idx % 2 == 0 && idx / 2 < spec.n_benign) ||
                                    (idx % 2 == 1 && idx / 2 >= spec.n_malicious)
                                ? Label::Benign
                                : Label::Malicious;
        std::mt19937_64 rng(spec.seed * 0x9E3779B97F4A7C15ull + idx);

        std::uniform_int_distribution<std::size_t> size_dist(spec.min_size, spec.max_size);
        const std::size_t target = size_dist(rng);
        std::uniform_int_distribution<int> nsec_dist(2, 4);
        const int nsec = nsec_dist(rng);

        PeBuildSpec build;
        build.pe32plus = (rng() & 1) != 0;
        build.file_alignment = spec.file_alignment;
        build.timestamp = static_cast<std::uint32_t>(kBaseTimestamp + idx * 3600);

        const std::size_t budget = target > 1024 ? target - 512 : 512; // headers take one unit
        static const double kShare[4] = {0.40, 0.30, 0.20, 0.10};
        double share_total = 0.0;
        for (int s = 0; s < nsec; ++s) share_total += kShare[s];
        for (int s = 0; s < nsec; ++s) {
            const auto raw = std::max<std::size_t>(
                round_up(static_cast<std::size_t>(budget * kShare[s] / share_total),
                         spec.file_alignment),
                spec.file_alignment);
            PeSectionSpec sec;
            sec.name = kNames[s];
            sec.raw.resize(raw);
            for (auto& b : sec.raw) b = detail::sample_profile_byte(label, rng);
            std::uniform_int_distribution<std::size_t> slack_dist(0, spec.slack_max);
            const std::size_t slack = std::min(slack_dist(rng), raw > 64 ? raw - 64 : 0);
            sec.virtual_size = static_cast<std::uint32_t>(raw - slack);
            // Slack tail zeroed, like linker padding.
            std::fill(sec.raw.begin() + sec.virtual_size, sec.raw.end(), 0);
            sec.characteristics = s == 0 ? 0x60000020u : 0x40000040u;
            build.sections.push_back(std::move(sec));
        }
        if (spec.overlay_max > 0) {
            std::uniform_int_distribution<std::size_t> odist(0, spec.overlay_max);
            build.overlay.resize(odist(rng));
            for (auto& b : build.overlay) b = detail::sample_profile_byte(label, rng);
        }

        // Plant the class motif inside section content (never in slack), the
        // first instance early so prefix models see it.
        const MotifSpec& motif =
            label == Label::Malicious ? spec.malicious_motif : spec.benign_motif;
        std::uniform_int_distribution<std::size_t> plant_dist(motif.min_plants, motif.max_plants);
        const std::size_t plants = plant_dist(rng);
        std::vector<std::pair<std::size_t, std::size_t>> plant_at; // (section, offset)
        for (std::size_t p = 0; p < plants; ++p) {
            const std::size_t sidx = p == 0 ? 0 : rng() % build.sections.size();
            auto& sec = build.sections[sidx];
            if (sec.virtual_size <= motif.pattern.size()) continue;
            std::uniform_int_distribution<std::size_t> off_dist(
                0, sec.virtual_size - motif.pattern.size());
            const std::size_t off = p == 0 ? std::min<std::size_t>(64, off_dist.max())
                                           : off_dist(rng);
            bool overlaps = false;
            for (const auto& [s2, o2] : plant_at)
                if (s2 == sidx && off < o2 + motif.pattern.size() &&
                    o2 < off + motif.pattern.size())
                    overlaps = true;
            if (overlaps) continue;
            std::copy(motif.pattern.begin(), motif.pattern.end(), sec.raw.begin() + off);
            plant_at.emplace_back(sidx, off);
        }

        const Bytes file = build_pe(build);
        pe::PeImage img = pe::parse(file); // generator output must parse
        if (!pe::is_valid(img))
            throw Error(ErrorKind::Malformed,
                        "generator produced an invalid image:\n" + pe::render(validate_structure(img)));

        char namebuf[32];
        std::snprintf(namebuf, sizeof namebuf, "%c_%04zu.exe",
                      label == Label::Malicious ? 'm' : 'b', idx);
        const std::string fname = namebuf;
        write_file(out_dir / fname, file);

        ManifestEntry e;
        e.path = fname;
        e.sha256 = detail::sha256_hex(file);
        e.label = label;
        e.family = label == Label::Malicious ? "synthetic." + std::to_string(idx % 5) : "";
        e.timestamp = kBaseTimestamp + static_cast<std::int64_t>(idx) * 3600;
        e.size_bytes = file.size();
        result.manifest.push_back(e);

        FileTruth t;
        t.path = fname;
        t.label = label;
        t.pe32plus = build.pe32plus;
        t.header_size = img.size_of_headers();
        t.file_len = file.size();
        t.overlay_len = img.overlay.size();
        for (std::size_t s = 0; s < img.sections.size(); ++s) {
            const auto& sec = img.sections[s];
            SectionTruth st;
            st.name = sec.name_str();
            st.pointer_to_raw_data = sec.pointer_to_raw_data;
            st.size_of_raw_data = sec.size_of_raw_data;
            st.virtual_size = sec.virtual_size;
            st.slack_len = sec.size_of_raw_data > sec.virtual_size
                               ? sec.size_of_raw_data - sec.virtual_size
                               : 0;
            st.slack_offset = st.slack_len > 0 ? sec.pointer_to_raw_data + sec.virtual_size : 0;
            t.sections.push_back(st);
        }
        for (const auto& [sidx, off] : plant_at)
            t.motif_offsets.push_back(img.sections[sidx].pointer_to_raw_data + off);
        result.truth.push_back(std::move(t));

        const bool llr_malicious = detail::log_likelihood_ratio(file) >= 0.0;
        if (llr_malicious == (label == Label::Malicious)) ++n_llr_correct;
    }

    result.separability = static_cast<double>(n_llr_correct) / static_cast<double>(total);
    write_manifest(out_dir / "manifest.jsonl", result.manifest);

    std::ofstream gt(out_dir / "groundtruth.jsonl", std::ios::trunc);
    for (const auto& t : result.truth) {
        nlohmann::ordered_json j;
        j["path"] = t.path;
        j["label"] = to_string(t.label);
        j["pe32plus"] = t.pe32plus;
        j["header_size"] = t.header_size;
        j["file_len"] = t.file_len;
        j["overlay_len"] = t.overlay_len;
        auto sections = nlohmann::ordered_json::array();
        for (const auto& s : t.sections) {
            nlohmann::ordered_json sj;
            sj["name"] = s.name;
            sj["pointer_to_raw_data"] = s.pointer_to_raw_data;
            sj["size_of_raw_data"] = s.size_of_raw_data;
            sj["virtual_size"] = s.virtual_size;
            sj["slack_offset"] = s.slack_offset;
            sj["slack_len"] = s.slack_len;
            sections.push_back(sj);
        }
        j["sections"] = sections;
        j["motif_offsets"] = t.motif_offsets;
        gt << j.dump() << '\n';
    }
    return result;
}

} // namespace certsmooth
