#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace esceval {

// Values double as process exit codes for the CLI.
enum class ErrorKind : int {
    usage = 1,
    validation = 2,
    endpoint = 3,
    data = 4,
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, std::string module, const std::string &what)
        : std::runtime_error(what), kind_(kind), module_(std::move(module)) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string &module() const noexcept { return module_; }

  private:
    ErrorKind kind_;
    std::string module_;
};

class ValidationError : public Error {
  public:
    ValidationError(std::string module, const std::string &what, std::string field = {})
        : Error(ErrorKind::validation, std::move(module), what), field_(std::move(field)) {}

    // The offending field or node, when one can be named.
    const std::string &field() const noexcept { return field_; }

  private:
    std::string field_;
};

class DataError : public Error {
  public:
    DataError(std::string module, const std::string &what, std::size_t line = 0)
        : Error(ErrorKind::data, std::move(module), what), line_(line) {}

    // 1-based line number for file errors, 0 when not applicable.
    std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

class EndpointError : public Error {
  public:
    EndpointError(std::string module, const std::string &what)
        : Error(ErrorKind::endpoint, std::move(module), what) {}
};

} // namespace esceval
