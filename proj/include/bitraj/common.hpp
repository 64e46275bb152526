#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bitraj {

// Error categories map 1:1 onto CLI exit codes (see tools/bitraj_cli.cpp):
// config -> 2, data_format -> 3, numeric -> 4.
enum class Errc { config, data_format, numeric, logic };

class Error : public std::runtime_error {
public:
    Error(Errc code, std::string msg) : std::runtime_error(std::move(msg)), code_(code) {}
    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

struct ConfigError : Error {
    explicit ConfigError(std::string msg) : Error(Errc::config, std::move(msg)) {}
};

struct NumericError : Error {
    explicit NumericError(std::string msg) : Error(Errc::numeric, std::move(msg)) {}
};

struct DataFormatError : Error {
    explicit DataFormatError(std::string msg) : Error(Errc::data_format, std::move(msg)) {}
};

// Container failures stay distinguishable so callers (and tests) can tell a
// corrupt file from a stale one.
struct BadMagicError : DataFormatError {
    explicit BadMagicError(std::string msg) : DataFormatError(std::move(msg)) {}
};
struct BadVersionError : DataFormatError {
    explicit BadVersionError(std::string msg) : DataFormatError(std::move(msg)) {}
};
struct TruncatedError : DataFormatError {
    explicit TruncatedError(std::string msg) : DataFormatError(std::move(msg)) {}
};
struct DigestMismatchError : DataFormatError {
    explicit DigestMismatchError(std::string msg) : DataFormatError(std::move(msg)) {}
};

} // namespace bitraj
