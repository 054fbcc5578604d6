#pragma once

#include <stdexcept>
#include <string>

namespace ubalance {

// Every failure raised by the library derives from Error. The CLI maps each
// category onto a distinct process exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& file, std::size_t line, const std::string& what)
        : Error(file + ":" + std::to_string(line) + ": " + what), file_(file), line_(line) {}

    const std::string& file() const noexcept { return file_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::string file_;
    std::size_t line_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

// Shape mismatches and other caller-side contract breaches.
class ContractViolation : public Error {
public:
    using Error::Error;
};

class UndefinedCorrelation : public Error {
public:
    using Error::Error;
};

inline void require(bool ok, const char* what) {
    if (!ok) throw ContractViolation(what);
}

}  // namespace ubalance
