#pragma once

#include <stdexcept>
#include <string>

namespace memsig {

// Error categories, mirrored by the C API status codes and the CLI's
// exit-code scheme (usage -> 2, data -> 3, numeric -> 4).
enum class ErrorCategory {
    usage,
    data,
    numeric,
    io,
    format,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCategory cat, std::string msg) : std::runtime_error(std::move(msg)), cat_(cat) {}
    ErrorCategory category() const { return cat_; }

private:
    ErrorCategory cat_;
};

struct ShapeError : Error {
    explicit ShapeError(std::string msg) : Error(ErrorCategory::usage, std::move(msg)) {}
};

struct UsageError : Error {
    explicit UsageError(std::string msg) : Error(ErrorCategory::usage, std::move(msg)) {}
};

struct EmptySegment : Error {
    explicit EmptySegment(std::string msg) : Error(ErrorCategory::data, std::move(msg)) {}
};

struct InsufficientData : Error {
    explicit InsufficientData(std::string msg) : Error(ErrorCategory::data, std::move(msg)) {}
};

struct EmptyData : Error {
    explicit EmptyData(std::string msg) : Error(ErrorCategory::data, std::move(msg)) {}
};

struct EmptyBatch : Error {
    explicit EmptyBatch(std::string msg) : Error(ErrorCategory::data, std::move(msg)) {}
};

struct EmptyDataset : Error {
    explicit EmptyDataset(std::string msg) : Error(ErrorCategory::data, std::move(msg)) {}
};

struct IncompleteProbe : Error {
    explicit IncompleteProbe(std::string msg) : Error(ErrorCategory::data, std::move(msg)) {}
};

struct IncompatibleSignatures : Error {
    explicit IncompatibleSignatures(std::string msg) : Error(ErrorCategory::data, std::move(msg)) {}
};

struct IncompatibleCheckpoint : Error {
    explicit IncompatibleCheckpoint(std::string msg) : Error(ErrorCategory::data, std::move(msg)) {}
};

struct NumericalError : Error {
    explicit NumericalError(std::string msg) : Error(ErrorCategory::numeric, std::move(msg)) {}
};

struct DivergedError : Error {
    explicit DivergedError(std::string msg) : Error(ErrorCategory::numeric, std::move(msg)) {}
};

struct CheckpointError : Error {
    explicit CheckpointError(std::string msg) : Error(ErrorCategory::format, std::move(msg)) {}
};

struct FileFormatError : Error {
    explicit FileFormatError(std::string msg) : Error(ErrorCategory::format, std::move(msg)) {}
};

struct IoError : Error {
    explicit IoError(std::string msg) : Error(ErrorCategory::io, std::move(msg)) {}
};

} // namespace memsig
