#pragma once

#include <stdexcept>
#include <string>

namespace pgv {

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// The dose integral vanished or overflowed, so no emission density exists.
class DegenerateDoseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A detector receives no probability mass, so hits cannot be sampled or
/// conditioned on.
class ZeroMassError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value; `where` names the offending key path.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string where, const std::string& what)
      : std::runtime_error(where.empty() ? what : where + ": " + what),
        where_(std::move(where)) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

/// Every particle has zero importance weight.
class DegenerateWeightsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pgv
