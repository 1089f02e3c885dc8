#pragma once

#include <stdexcept>
#include <string>

namespace convlstm {

// Shape mismatches and invalid configuration values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Calling an operation outside its contract (empty sequence, bad overlap, ...).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Data that cannot satisfy an operation's domain (clip too short, empty tensors).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed or missing files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values surfacing during training or scoring.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace convlstm
