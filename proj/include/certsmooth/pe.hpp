#pragma once

// Parsing, validation and byte-exact rewriting of PE32/PE32+ images.
//
// The in-memory model keeps the raw header block verbatim and re-patches the
// structural fields (section table, entry point, image sizes) on serialize,
// so everything the parser does not interpret (DOS stub, rich header, data
// directories) round-trips untouched. Gap bytes between raw extents are kept
// per section for the same reason.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "certsmooth/bytes.hpp"
#include "certsmooth/errors.hpp"

namespace certsmooth::pe {

constexpr std::size_t kDosHeaderSize = 64;
constexpr std::size_t kLfanewOffset = 0x3C;
constexpr std::size_t kCoffSize = 20;
constexpr std::size_t kSectionHeaderSize = 40;
constexpr std::uint16_t kMagicPe32 = 0x10B;
constexpr std::uint16_t kMagicPe32Plus = 0x20B;

struct SectionEntry {
    std::array<std::uint8_t, 8> name{};
    std::uint32_t virtual_size = 0;
    std::uint32_t virtual_address = 0;
    std::uint32_t size_of_raw_data = 0;
    std::uint32_t pointer_to_raw_data = 0;
    std::uint32_t pointer_to_relocations = 0;
    std::uint32_t pointer_to_linenumbers = 0;
    std::uint16_t number_of_relocations = 0;
    std::uint16_t number_of_linenumbers = 0;
    std::uint32_t characteristics = 0;

    bool has_raw_data() const { return size_of_raw_data > 0; }
    std::size_t raw_end() const { return std::size_t(pointer_to_raw_data) + size_of_raw_data; }
    std::string name_str() const {
        std::string s;
        for (auto c : name) {
            if (c == 0) break;
            s.push_back(static_cast<char>(c));
        }
        return s;
    }
};

// Unused tail of a section's raw extent: [virtual_size, size_of_raw_data).
struct SlackRegion {
    std::size_t section_index;
    std::size_t file_offset;
    std::size_t length;
};

struct Violation {
    std::size_t offset;
    std::string message;
};

inline std::string render(const std::vector<Violation>& vs) {
    std::string out;
    for (const auto& v : vs) {
        out += std::to_string(v.offset);
        out += ": ";
        out += v.message;
        out += '\n';
    }
    return out;
}

class PeImage {
public:
    // Raw header block [0, size_of_headers). Owns the DOS header/stub, the
    // PE signature, COFF + optional headers and the section table.
    Bytes header_bytes;

    std::size_t e_lfanew = 0;
    std::uint16_t machine = 0;
    std::uint16_t coff_characteristics = 0;
    std::uint16_t size_of_optional_header = 0;
    std::uint16_t optional_magic = 0; // kMagicPe32 or kMagicPe32Plus
    std::uint32_t entry_point = 0;
    std::uint32_t section_alignment = 0;
    std::uint32_t file_alignment = 0;
    std::uint32_t size_of_image = 0;

    std::vector<SectionEntry> sections;
    std::vector<Bytes> section_data; // parallel to sections
    std::vector<Bytes> section_gaps; // bytes preceding each section's raw extent
    Bytes overlay;
    std::size_t original_len = 0;

    std::size_t size_of_headers() const { return header_bytes.size(); }
    bool is_pe32_plus() const { return optional_magic == kMagicPe32Plus; }

    std::size_t coff_offset() const { return e_lfanew + 4; }
    std::size_t optional_offset() const { return coff_offset() + kCoffSize; }
    std::size_t section_table_offset() const { return optional_offset() + size_of_optional_header; }
    std::size_t section_table_end() const {
        return section_table_offset() + sections.size() * kSectionHeaderSize;
    }

    // End of the last raw extent; start of the overlay.
    std::size_t raw_extent_end() const {
        std::size_t end = size_of_headers();
        for (const auto& s : sections)
            if (s.has_raw_data()) end = std::max(end, s.raw_end());
        return end;
    }

    std::size_t serialized_size() const {
        std::size_t n = size_of_headers();
        for (std::size_t i = 0; i < sections.size(); ++i)
            if (sections[i].has_raw_data()) n += section_gaps[i].size() + section_data[i].size();
        return n + overlay.size();
    }
};

// --- parse -------------------------------------------------------------------

inline PeImage parse(const Bytes& file) {
    if (file.size() < kDosHeaderSize)
        throw PeError(ErrorKind::Truncated, file.size(), "file smaller than DOS header");
    if (file[0] != 'M' || file[1] != 'Z')
        throw PeError(ErrorKind::NotPe, 0, "missing MZ signature");

    PeImage img;
    img.e_lfanew = read_u32(file, kLfanewOffset);
    if (img.e_lfanew < kDosHeaderSize || img.e_lfanew + 4 + kCoffSize > file.size())
        throw PeError(ErrorKind::Truncated, img.e_lfanew, "PE header unreachable");
    if (file[img.e_lfanew] != 'P' || file[img.e_lfanew + 1] != 'E' || file[img.e_lfanew + 2] != 0 ||
        file[img.e_lfanew + 3] != 0)
        throw PeError(ErrorKind::NotPe, img.e_lfanew, "missing PE signature");

    const std::size_t coff = img.coff_offset();
    img.machine = read_u16(file, coff);
    const std::uint16_t n_sections = read_u16(file, coff + 2);
    img.size_of_optional_header = read_u16(file, coff + 16);
    img.coff_characteristics = read_u16(file, coff + 18);
    if (img.size_of_optional_header == 0)
        throw PeError(ErrorKind::NotPe, coff + 16, "object file: no optional header");

    const std::size_t opt = img.optional_offset();
    if (opt + img.size_of_optional_header > file.size())
        throw PeError(ErrorKind::Truncated, opt, "optional header past end of file");
    if (img.size_of_optional_header < 64)
        throw PeError(ErrorKind::Malformed, coff + 16, "optional header too small");
    img.optional_magic = read_u16(file, opt);
    if (img.optional_magic != kMagicPe32 && img.optional_magic != kMagicPe32Plus)
        throw PeError(ErrorKind::Malformed, opt, "unknown optional header magic");
    img.entry_point = read_u32(file, opt + 16);
    img.section_alignment = read_u32(file, opt + 32);
    img.file_alignment = read_u32(file, opt + 36);
    img.size_of_image = read_u32(file, opt + 56);
    const std::uint32_t size_of_headers = read_u32(file, opt + 60);

    const std::size_t table = opt + img.size_of_optional_header;
    const std::size_t table_end = table + std::size_t(n_sections) * kSectionHeaderSize;
    if (table_end > file.size())
        throw PeError(ErrorKind::Truncated, table, "section table past end of file");
    if (size_of_headers < table_end)
        throw PeError(ErrorKind::Malformed, opt + 60, "size_of_headers below section table end");
    if (size_of_headers > file.size())
        throw PeError(ErrorKind::Truncated, opt + 60, "size_of_headers past end of file");

    img.header_bytes.assign(file.begin(), file.begin() + size_of_headers);

    std::size_t cursor = size_of_headers;
    for (std::size_t i = 0; i < n_sections; ++i) {
        const std::size_t e = table + i * kSectionHeaderSize;
        SectionEntry s;
        std::copy(file.begin() + e, file.begin() + e + 8, s.name.begin());
        s.virtual_size = read_u32(file, e + 8);
        s.virtual_address = read_u32(file, e + 12);
        s.size_of_raw_data = read_u32(file, e + 16);
        s.pointer_to_raw_data = read_u32(file, e + 20);
        s.pointer_to_relocations = read_u32(file, e + 24);
        s.pointer_to_linenumbers = read_u32(file, e + 28);
        s.number_of_relocations = read_u16(file, e + 32);
        s.number_of_linenumbers = read_u16(file, e + 34);
        s.characteristics = read_u32(file, e + 36);

        Bytes gap, data;
        if (s.has_raw_data()) {
            const std::size_t ptr = s.pointer_to_raw_data;
            if (ptr < cursor)
                throw PeError(ErrorKind::Malformed, e + 20,
                              "section raw extent overlaps previous extent or is out of order");
            if (ptr + s.size_of_raw_data > file.size())
                throw PeError(ErrorKind::Truncated, e + 20, "section raw extent past end of file");
            gap.assign(file.begin() + cursor, file.begin() + ptr);
            data.assign(file.begin() + ptr, file.begin() + ptr + s.size_of_raw_data);
            cursor = ptr + s.size_of_raw_data;
        }
        img.sections.push_back(s);
        img.section_gaps.push_back(std::move(gap));
        img.section_data.push_back(std::move(data));
    }
    img.overlay.assign(file.begin() + cursor, file.end());
    img.original_len = file.size();
    return img;
}

// --- serialize ---------------------------------------------------------------

// The header block with every structural field the model owns written back.
inline Bytes patched_headers(const PeImage& img) {
    if (img.section_table_end() > img.size_of_headers())
        throw PeError(ErrorKind::LayoutConflict, img.section_table_offset(),
                      "section table exceeds header block");

    Bytes out = img.header_bytes;
    const std::size_t coff = img.coff_offset();
    write_u16(out, coff + 2, static_cast<std::uint16_t>(img.sections.size()));
    const std::size_t opt = img.optional_offset();
    write_u32(out, opt + 16, img.entry_point);
    write_u32(out, opt + 32, img.section_alignment);
    write_u32(out, opt + 36, img.file_alignment);
    write_u32(out, opt + 56, img.size_of_image);
    write_u32(out, opt + 60, static_cast<std::uint32_t>(img.size_of_headers()));

    const std::size_t table = img.section_table_offset();
    for (std::size_t i = 0; i < img.sections.size(); ++i) {
        const auto& s = img.sections[i];
        const std::size_t e = table + i * kSectionHeaderSize;
        std::copy(s.name.begin(), s.name.end(), out.begin() + e);
        write_u32(out, e + 8, s.virtual_size);
        write_u32(out, e + 12, s.virtual_address);
        write_u32(out, e + 16, s.size_of_raw_data);
        write_u32(out, e + 20, s.pointer_to_raw_data);
        write_u32(out, e + 24, s.pointer_to_relocations);
        write_u32(out, e + 28, s.pointer_to_linenumbers);
        write_u16(out, e + 32, s.number_of_relocations);
        write_u16(out, e + 34, s.number_of_linenumbers);
        write_u32(out, e + 36, s.characteristics);
    }
    return out;
}

inline Bytes serialize(const PeImage& img) {
    Bytes out = patched_headers(img);
    std::size_t cursor = img.size_of_headers();
    for (std::size_t i = 0; i < img.sections.size(); ++i) {
        const auto& s = img.sections[i];
        if (!s.has_raw_data()) continue;
        if (s.pointer_to_raw_data < cursor)
            throw PeError(ErrorKind::LayoutConflict, s.pointer_to_raw_data,
                          "section raw extent overlaps previous extent");
        if (img.section_gaps[i].size() != s.pointer_to_raw_data - cursor)
            throw PeError(ErrorKind::LayoutConflict, cursor,
                          "gap bytes do not match pointer_to_raw_data");
        if (img.section_data[i].size() != s.size_of_raw_data)
            throw PeError(ErrorKind::LayoutConflict, s.pointer_to_raw_data,
                          "section payload does not match size_of_raw_data");
        out.insert(out.end(), img.section_gaps[i].begin(), img.section_gaps[i].end());
        out.insert(out.end(), img.section_data[i].begin(), img.section_data[i].end());
        cursor = s.raw_end();
    }
    out.insert(out.end(), img.overlay.begin(), img.overlay.end());
    return out;
}

// --- queries -----------------------------------------------------------------

inline std::vector<SlackRegion> slack_regions(const PeImage& img) {
    std::vector<SlackRegion> out;
    for (std::size_t i = 0; i < img.sections.size(); ++i) {
        const auto& s = img.sections[i];
        if (!s.has_raw_data()) continue;
        if (s.size_of_raw_data > s.virtual_size) {
            out.push_back({i, s.pointer_to_raw_data + s.virtual_size,
                           std::size_t(s.size_of_raw_data) - s.virtual_size});
        }
    }
    return out;
}

inline std::vector<Violation> validate_structure(const PeImage& img) {
    std::vector<Violation> out;
    const std::size_t opt = img.optional_offset();
    const std::size_t table = img.section_table_offset();

    if (img.file_alignment == 0)
        out.push_back({opt + 36, "file_alignment is zero"});
    if (img.section_table_end() > img.size_of_headers())
        out.push_back({table, "section table exceeds header block"});

    // Entry point must land inside some section's virtual range.
    if (img.entry_point != 0) {
        bool mapped = false;
        for (const auto& s : img.sections) {
            const std::uint64_t span = std::max(s.virtual_size, s.size_of_raw_data);
            if (s.virtual_address <= img.entry_point &&
                std::uint64_t(img.entry_point) < s.virtual_address + span) {
                mapped = true;
                break;
            }
        }
        if (!mapped) out.push_back({opt + 16, "entry point unmapped"});
    }

    std::size_t cursor = img.size_of_headers();
    std::uint32_t min_va = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < img.sections.size(); ++i) {
        const auto& s = img.sections[i];
        const std::size_t e = table + i * kSectionHeaderSize;
        if (s.virtual_address != 0) min_va = std::min(min_va, s.virtual_address);
        if (!s.has_raw_data()) continue;
        if (img.file_alignment != 0 && s.pointer_to_raw_data % img.file_alignment != 0)
            out.push_back({e + 20, "pointer_to_raw_data not aligned to file_alignment"});
        if (s.pointer_to_raw_data < cursor)
            out.push_back({e + 20, "section raw extent overlaps previous extent or is out of order"});
        else
            cursor = s.raw_end();
        const std::uint64_t vend = std::uint64_t(s.virtual_address) + std::max(s.virtual_size, 1u);
        if (vend > round_up(img.size_of_image, std::max<std::uint32_t>(img.section_alignment, 1)))
            out.push_back({e + 12, "section virtual range exceeds size_of_image"});
    }
    if (min_va != 0xFFFFFFFFu && img.size_of_headers() > min_va)
        out.push_back({opt + 60, "header block extends into first section's virtual range"});
    return out;
}

inline bool is_valid(const PeImage& img) { return validate_structure(img).empty(); }

// --- mutations (all return a new image) ---------------------------------------

inline PeImage append_overlay(const PeImage& img, const Bytes& extra) {
    PeImage out = img;
    out.overlay.insert(out.overlay.end(), extra.begin(), extra.end());
    return out;
}

// Appends zero bytes to the header block and shifts every raw pointer.
inline PeImage pad_headers(const PeImage& img, std::size_t n) {
    PeImage out = img;
    if (n == 0) return out;
    out.header_bytes.insert(out.header_bytes.end(), n, 0);
    for (auto& s : out.sections)
        if (s.has_raw_data()) s.pointer_to_raw_data += static_cast<std::uint32_t>(n);
    return out;
}

// Grows the gap that precedes section `index` with zero bytes.
inline PeImage extend_gap(const PeImage& img, std::size_t index, std::size_t n) {
    PeImage out = img;
    if (n == 0) return out;
    out.section_gaps[index].insert(out.section_gaps[index].end(), n, 0);
    for (std::size_t j = index; j < out.sections.size(); ++j)
        if (out.sections[j].has_raw_data())
            out.sections[j].pointer_to_raw_data += static_cast<std::uint32_t>(n);
    return out;
}

// Extends a section's raw extent with zero bytes (virtual_size untouched).
inline PeImage pad_section_raw(const PeImage& img, std::size_t index, std::size_t n) {
    PeImage out = img;
    if (n == 0) return out;
    out.section_data[index].insert(out.section_data[index].end(), n, 0);
    out.sections[index].size_of_raw_data += static_cast<std::uint32_t>(n);
    for (std::size_t j = index + 1; j < out.sections.size(); ++j)
        if (out.sections[j].has_raw_data())
            out.sections[j].pointer_to_raw_data += static_cast<std::uint32_t>(n);
    return out;
}

// Makes room in the header block for `extra_entries` more section headers.
// Returns the number of bytes the headers grew by (0 if the slack sufficed).
inline std::size_t ensure_table_room(PeImage& img, std::size_t extra_entries) {
    const std::size_t need = img.section_table_end() + extra_entries * kSectionHeaderSize;
    if (need <= img.size_of_headers()) return 0;
    const std::size_t align = std::max<std::size_t>(img.file_alignment, 1);
    const std::size_t growth = round_up(need - img.size_of_headers(), align);
    std::uint32_t min_va = 0xFFFFFFFFu;
    for (const auto& s : img.sections)
        if (s.virtual_address != 0) min_va = std::min(min_va, s.virtual_address);
    if (min_va != 0xFFFFFFFFu && img.size_of_headers() + growth > min_va)
        throw PeError(ErrorKind::NoHeaderRoom, img.section_table_end(),
                      "growing headers would reach the first section's virtual range");
    img = pad_headers(img, growth);
    return growth;
}

// Appends a section whose raw data starts at the current end of raw extents
// (rounded up to file_alignment; the pad lands in the new section's gap).
// The caller is responsible for header table room (see ensure_table_room).
inline PeImage add_section(const PeImage& img, const std::string& name, const Bytes& payload,
                           std::uint32_t virtual_size, std::uint32_t characteristics) {
    PeImage out = img;
    if (out.section_table_end() + kSectionHeaderSize > out.size_of_headers())
        throw PeError(ErrorKind::NoHeaderRoom, out.section_table_end(),
                      "no room in header block for another section header");

    SectionEntry s;
    for (std::size_t i = 0; i < 8 && i < name.size(); ++i)
        s.name[i] = static_cast<std::uint8_t>(name[i]);
    const std::size_t align = std::max<std::size_t>(out.file_alignment, 1);
    const std::size_t salign = std::max<std::size_t>(out.section_alignment, 1);
    const std::size_t raw_end = out.raw_extent_end();
    const std::size_t ptr = round_up(raw_end, align);

    std::uint64_t next_va = round_up(out.size_of_headers(), salign);
    for (const auto& sec : out.sections)
        next_va = std::max(next_va,
                           round_up(sec.virtual_address + std::max(sec.virtual_size, 1u), salign));

    s.virtual_size = virtual_size;
    s.virtual_address = static_cast<std::uint32_t>(next_va);
    s.size_of_raw_data = static_cast<std::uint32_t>(payload.size());
    s.pointer_to_raw_data = static_cast<std::uint32_t>(ptr);
    s.characteristics = characteristics;

    out.sections.push_back(s);
    out.section_gaps.emplace_back(ptr - raw_end, 0);
    out.section_data.push_back(payload);
    out.size_of_image = static_cast<std::uint32_t>(
        round_up(next_va + std::max<std::uint64_t>(virtual_size, payload.size()), salign));
    return out;
}

} // namespace certsmooth::pe
