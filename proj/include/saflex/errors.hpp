#pragma once

#include <stdexcept>
#include <string>

namespace saflex {

/// Operand shapes do not agree.
class ShapeError : public std::invalid_argument {
public:
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

/// Argument outside the mathematical domain of an operation (e.g. log of a
/// nonpositive probability, empty batch, invalid probability).
class DomainError : public std::domain_error {
public:
  explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

/// Training produced a non-finite value.
class NumericalError : public std::runtime_error {
public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed file, schema or payload.
class FormatError : public std::runtime_error {
public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

/// Bad configuration document or value.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace saflex
