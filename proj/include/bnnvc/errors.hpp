#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bnnvc {

// Base of every error the library throws. kind() is a stable token used as
// the machine-parsable prefix of CLI error lines.
class Error : public std::runtime_error
{
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

struct ConfigError : Error
{
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

struct ShapeError : Error
{
    explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

struct NumericError : Error
{
    explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

struct RangeError : Error
{
    explicit RangeError(const std::string& what) : Error("range", what) {}
};

struct EmptyInputError : Error
{
    explicit EmptyInputError(const std::string& what) : Error("empty-input", what) {}
};

struct DegenerateDatasetError : Error
{
    explicit DegenerateDatasetError(const std::string& what) : Error("degenerate-dataset", what) {}
};

class FormatError : public Error
{
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error("format", what + " at byte " + std::to_string(offset)), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

struct IoError : Error
{
    explicit IoError(const std::string& what) : Error("io", what) {}
};

} // namespace bnnvc
