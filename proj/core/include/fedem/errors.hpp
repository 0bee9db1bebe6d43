#pragma once

#include <stdexcept>
#include <string>

namespace fedem {

/// Failure while evaluating a model (bad index, non-finite input, ...).
class ModelError : public std::runtime_error {
 public:
  explicit ModelError(const std::string& what) : std::runtime_error(what) {}
};

/// The m-step map hit a degenerate point (vanishing component weight,
/// covariance that cannot be repaired).
class DegenerateModelError : public ModelError {
 public:
  explicit DegenerateModelError(const std::string& what) : ModelError(what) {}
};

/// An algorithm state invariant was violated. Fatal: the run cannot continue.
class StateError : public std::runtime_error {
 public:
  explicit StateError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fedem
