#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace sflow {

template <typename Scalar> using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar> using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = Vec<double>;
using Matrix = Mat<double>;
using Index = Eigen::Index;

// Error hierarchy. Everything thrown by the library derives from Error so
// callers (the CLI in particular) can catch a single type.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
public:
  DimensionMismatch(const char *where, Index lhs, Index rhs)
      : Error(std::string(where) + ": dimension mismatch (" + std::to_string(lhs) +
              " vs " + std::to_string(rhs) + ")") {}
};

/// A point or argument outside the open simplex / chart domain.
class DomainError : public Error {
public:
  using Error::Error;
};

/// An iterate or flow state left the open simplex.
class BoundaryEscape : public Error {
public:
  using Error::Error;
};

class NonFinite : public Error {
public:
  using Error::Error;
};

class NotPositiveDefinite : public Error {
public:
  using Error::Error;
};

class NotSymmetric : public Error {
public:
  using Error::Error;
};

/// Discrete Lyapunov iteration matrix has spectral radius >= 1.
class NoStationarySolution : public Error {
public:
  using Error::Error;
};

class ZeroCount : public Error {
public:
  using Error::Error;
};

class InsufficientDecay : public Error {
public:
  using Error::Error;
};

class WitnessNotFound : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

inline void require_same_dim(const char *where, Index lhs, Index rhs) {
  if (lhs != rhs)
    throw DimensionMismatch(where, lhs, rhs);
}

} // namespace sflow
