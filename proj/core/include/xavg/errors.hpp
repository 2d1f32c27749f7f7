#ifndef XAVG_ERRORS_HPP
#define XAVG_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace xavg {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Bad inputs: malformed files, violated invariants, incompatible schemas.
/// CLI maps these to exit code 1.
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error(what) {}
};

/// Filesystem failures. CLI maps these to exit code 2.
class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(what) {}
};

/// Checkpoint header that cannot be parsed or has invalid structure.
class MalformedHeaderError : public ValidationError {
public:
    explicit MalformedHeaderError(const std::string& what) : ValidationError(what) {}
};

/// Tensor byte ranges that overlap, leave gaps, or disagree with shapes.
class OffsetError : public ValidationError {
public:
    explicit OffsetError(const std::string& what) : ValidationError(what) {}
};

/// File shorter than its header or declared data region requires.
class TruncatedFileError : public ValidationError {
public:
    explicit TruncatedFileError(const std::string& what) : ValidationError(what) {}
};

/// Lookup of a tensor name that is not present in a checkpoint.
class UnknownTensorError : public ValidationError {
public:
    explicit UnknownTensorError(const std::string& what) : ValidationError(what) {}
};

/// Checkpoints whose (name, dtype, shape) tables disagree.
class IncompatibleError : public ValidationError {
public:
    enum class Kind { NameSet, Shape, Dtype };

    IncompatibleError(Kind kind, std::string tensor, const std::string& what)
        : ValidationError(what), kind_(kind), tensor_(std::move(tensor)) {}

    Kind kind() const { return kind_; }
    const std::string& tensor() const { return tensor_; }

private:
    Kind kind_;
    std::string tensor_;
};

}  // namespace xavg

#endif  // XAVG_ERRORS_HPP
