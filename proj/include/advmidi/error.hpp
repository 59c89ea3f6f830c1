#pragma once

#include <stdexcept>
#include <string>

namespace advmidi {

// Error categories surfaced by the CLI as distinct exit codes.
enum class ErrorKind { Config = 2, Format = 3, Mismatch = 4, Invalid = 5 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    const char* category() const noexcept {
        switch (kind_) {
            case ErrorKind::Config: return "config error";
            case ErrorKind::Format: return "format error";
            case ErrorKind::Mismatch: return "mismatch error";
            case ErrorKind::Invalid: return "invalid argument";
        }
        return "error";
    }

private:
    ErrorKind kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error(ErrorKind::Config, w) {}
};
// Malformed or truncated input files (MIDI, corpus, checkpoint, labels).
struct FormatError : Error {
    explicit FormatError(const std::string& w) : Error(ErrorKind::Format, w) {}
};
// Checkpoint / config / task disagreement.
struct MismatchError : Error {
    explicit MismatchError(const std::string& w) : Error(ErrorKind::Mismatch, w) {}
};
struct InvalidArgument : Error {
    explicit InvalidArgument(const std::string& w) : Error(ErrorKind::Invalid, w) {}
};

}  // namespace advmidi
