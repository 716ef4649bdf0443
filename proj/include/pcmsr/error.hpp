#pragma once

#include <stdexcept>
#include <string>

namespace pcmsr {

/// Base class of every error the library raises.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not compose.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A precondition on a value was violated (out of range, empty input, ...).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// No quantization scheme can satisfy the hardware constraints for the given weights.
class InfeasibleError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    using Error::Error;
};

/// Malformed, truncated or mismatched file contents. `path` names the offending field or byte offset.
class FormatError : public Error {
public:
    FormatError(const std::string& path, const std::string& what)
        : Error(path.empty() ? what : path + ": " + what), path_(path) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// Invalid experiment configuration (unknown key, bad value).
class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace pcmsr
