#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ulns {

enum class ErrorKind {
    InvalidInput,
    InvalidConfig,
    ShapeError,
    TrainingDiverged,
    DegenerateGeometry,
    MissingClass,
    NoConvergence,
    NotStationary,
    IoError,
    NoReports,
};

constexpr std::string_view error_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidInput: return "InvalidInput";
        case ErrorKind::InvalidConfig: return "InvalidConfig";
        case ErrorKind::ShapeError: return "ShapeError";
        case ErrorKind::TrainingDiverged: return "TrainingDiverged";
        case ErrorKind::DegenerateGeometry: return "DegenerateGeometry";
        case ErrorKind::MissingClass: return "MissingClass";
        case ErrorKind::NoConvergence: return "NoConvergence";
        case ErrorKind::NotStationary: return "NotStationary";
        case ErrorKind::IoError: return "IoError";
        case ErrorKind::NoReports: return "NoReports";
    }
    return "Unknown";
}

/// Every failure raised by the library. `kind()` is stable and is what the
/// CLI prints; `what()` carries the human-readable detail.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& detail)
        : std::runtime_error(std::string(error_name(kind)) + ": " + detail), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Carries the offending index for MissingClass(k) / DegenerateGeometry(k) /
/// TrainingDiverged(epoch).
class IndexedError : public Error {
public:
    IndexedError(ErrorKind kind, long index, const std::string& detail)
        : Error(kind, detail + " [index " + std::to_string(index) + "]"), index_(index) {}

    long index() const noexcept { return index_; }

private:
    long index_;
};

}  // namespace ulns
