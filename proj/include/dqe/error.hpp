#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dqe {

enum class Errc {
    BadMagic,
    TruncatedFile,
    NonFiniteEntry,
    DuplicateId,
    ZeroRow,
    UnknownId,
    DimMismatch,
    TargetNotInSubset,
    ChecksumMismatch,
    BadFormat,
    Io,
    ZeroVector,
    NoCandidates,
    DegenerateProbability,
    ShapeMismatch,
    DimTooSmall,
    NoValidTarget,
    EmptyAfterExclusion,
    MissingSubset,
    EmptyRelevantSet,
    InvalidConfig,
    BadCheckpoint,
};

constexpr std::string_view to_string(Errc e) noexcept {
    switch (e) {
        case Errc::BadMagic: return "BadMagic";
        case Errc::TruncatedFile: return "TruncatedFile";
        case Errc::NonFiniteEntry: return "NonFiniteEntry";
        case Errc::DuplicateId: return "DuplicateId";
        case Errc::ZeroRow: return "ZeroRow";
        case Errc::UnknownId: return "UnknownId";
        case Errc::DimMismatch: return "DimMismatch";
        case Errc::TargetNotInSubset: return "TargetNotInSubset";
        case Errc::ChecksumMismatch: return "ChecksumMismatch";
        case Errc::BadFormat: return "BadFormat";
        case Errc::Io: return "Io";
        case Errc::ZeroVector: return "ZeroVector";
        case Errc::NoCandidates: return "NoCandidates";
        case Errc::DegenerateProbability: return "DegenerateProbability";
        case Errc::ShapeMismatch: return "ShapeMismatch";
        case Errc::DimTooSmall: return "DimTooSmall";
        case Errc::NoValidTarget: return "NoValidTarget";
        case Errc::EmptyAfterExclusion: return "EmptyAfterExclusion";
        case Errc::MissingSubset: return "MissingSubset";
        case Errc::EmptyRelevantSet: return "EmptyRelevantSet";
        case Errc::InvalidConfig: return "InvalidConfig";
        case Errc::BadCheckpoint: return "BadCheckpoint";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
/// `where` holds the offending offset, row, id or key when there is one.
class Error : public std::runtime_error {
public:
    Error(Errc code, std::string message, std::string where = {})
        : std::runtime_error(std::string(to_string(code)) + ": " + message +
                             (where.empty() ? std::string() : " [" + where + "]")),
          code_(code),
          where_(std::move(where)) {}

    Errc code() const noexcept { return code_; }
    const std::string& where() const noexcept { return where_; }

private:
    Errc code_;
    std::string where_;
};

}  // namespace dqe
