#pragma once

#include <stdexcept>
#include <string>

namespace unis {

/// Caller violated a precondition (bad dimensions, bad config, wrong state).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input data is malformed or non-finite.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A structural invariant check failed.
class AuditError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Leaf-path features were requested against a tree that changed shape.
class StaleSnapshotError : public UsageError {
 public:
  using UsageError::UsageError;
};

}  // namespace unis
