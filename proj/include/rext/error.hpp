#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rext {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed expression text; `offset()` is the byte position of the failure.
class SyntaxError : public Error {
public:
    SyntaxError(const std::string& what, std::size_t offset)
        : Error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Evaluation left the domain of an operation (log of non-positive, 1/0, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Invalid manifold / scenario description.
class SpecError : public Error {
public:
    using Error::Error;
};

/// A numerical guard tripped (SPD failure, q2 positivity guard, shooting blow-up).
class NumericGuard : public Error {
public:
    using Error::Error;
};

}  // namespace rext
