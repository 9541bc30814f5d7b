#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace certsmooth {

// Error categories, used by the CLI to pick distinct exit codes.
enum class ErrorKind {
    Config,        // bad flags / inconsistent run configuration
    NotPe,         // missing or wrong MZ / PE signature
    Truncated,     // structure points past end of file
    Malformed,     // structurally inconsistent PE
    LayoutConflict,// section extents collide after an edit
    EmptyInput,
    Io,
    CorruptSample,
    DivergedLoss,
    ModelChunkMismatch,
    MismatchedZ,
    UnalignedTally,
    ZeroPayload,
    AlignmentError,
    NoHeaderRoom,
    EmptyWritable,
    TooLarge,
    HashMismatch,
    OversizeFile,
    VersionMismatch,
    ChecksumFail,
};

inline const char* to_string(ErrorKind k) {
    switch (k) {
        case ErrorKind::Config: return "Config";
        case ErrorKind::NotPe: return "NotPe";
        case ErrorKind::Truncated: return "Truncated";
        case ErrorKind::Malformed: return "Malformed";
        case ErrorKind::LayoutConflict: return "LayoutConflict";
        case ErrorKind::EmptyInput: return "EmptyInput";
        case ErrorKind::Io: return "Io";
        case ErrorKind::CorruptSample: return "CorruptSample";
        case ErrorKind::DivergedLoss: return "DivergedLoss";
        case ErrorKind::ModelChunkMismatch: return "ModelChunkMismatch";
        case ErrorKind::MismatchedZ: return "MismatchedZ";
        case ErrorKind::UnalignedTally: return "UnalignedTally";
        case ErrorKind::ZeroPayload: return "ZeroPayload";
        case ErrorKind::AlignmentError: return "AlignmentError";
        case ErrorKind::NoHeaderRoom: return "NoHeaderRoom";
        case ErrorKind::EmptyWritable: return "EmptyWritable";
        case ErrorKind::TooLarge: return "TooLarge";
        case ErrorKind::HashMismatch: return "HashMismatch";
        case ErrorKind::OversizeFile: return "OversizeFile";
        case ErrorKind::VersionMismatch: return "VersionMismatch";
        case ErrorKind::ChecksumFail: return "ChecksumFail";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string msg)
        : std::runtime_error(std::string(to_string(kind)) + ": " + msg), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

// PE structure errors carry the file offset of the offending field.
class PeError : public Error {
public:
    PeError(ErrorKind kind, std::size_t offset, std::string msg)
        : Error(kind, "offset " + std::to_string(offset) + ": " + msg), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

} // namespace certsmooth
