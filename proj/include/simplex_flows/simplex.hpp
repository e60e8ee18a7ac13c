#pragma once

// Interior points of the n-simplex and the two dual charts:
//   eta   (mixture coordinates)      eta_i   = p_i,                 i = 1..n
//   theta (exponential coordinates)  theta_i = log(p_i / p_{n+1}),  i = 1..n
// with the conjugate potentials psi (log-partition) and phi (negative entropy).

#include "simplex_flows/types.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace sflow {

/// Smallest probability accepted by the SimplexPoint constructor.
inline constexpr double kMinProbability = 1e-300;
/// Largest accepted deviation of sum(p) from 1. Inputs are never renormalized.
inline constexpr double kSumTolerance = 1e-9;

template <typename Scalar = double> class SimplexPoint {
public:
  explicit SimplexPoint(Vec<Scalar> probs) : probs_(std::move(probs)) {
    using std::abs;
    if (probs_.size() < 2)
      throw DomainError("SimplexPoint: need at least 2 outcomes");
    Scalar sum(0);
    for (Index i = 0; i < probs_.size(); ++i) {
      const Scalar v = probs_[i];
      if (!(v >= Scalar(kMinProbability)) || !std::isfinite(static_cast<double>(v)))
        throw DomainError("SimplexPoint: entry " + std::to_string(i) + " = " +
                          std::to_string(static_cast<double>(v)) +
                          " is not strictly inside the simplex");
      sum += v;
    }
    if (abs(sum - Scalar(1)) > Scalar(kSumTolerance))
      throw DomainError("SimplexPoint: probabilities sum to " +
                        std::to_string(static_cast<double>(sum)));
  }

  /// Number of free coordinates n (the point has n+1 outcomes).
  Index dim() const { return probs_.size() - 1; }
  Index outcomes() const { return probs_.size(); }
  const Vec<Scalar> &probs() const { return probs_; }
  Scalar operator[](Index i) const { return probs_[i]; }
  Scalar min_prob() const { return probs_.minCoeff(); }

private:
  Vec<Scalar> probs_;
};

template <typename Scalar = double> class EtaCoord {
public:
  explicit EtaCoord(Vec<Scalar> eta) : eta_(std::move(eta)) {
    if (eta_.size() < 1)
      throw DomainError("EtaCoord: empty coordinate vector");
    for (Index i = 0; i < eta_.size(); ++i)
      if (!(eta_[i] > Scalar(0)) || !std::isfinite(static_cast<double>(eta_[i])))
        throw DomainError("EtaCoord: entry " + std::to_string(i) + " must be positive");
    if (!(last() > Scalar(0)))
      throw DomainError("EtaCoord: entries must sum to less than 1");
  }

  Index dim() const { return eta_.size(); }
  const Vec<Scalar> &values() const { return eta_; }
  Scalar operator[](Index i) const { return eta_[i]; }
  /// Implied probability of outcome n+1.
  Scalar last() const { return Scalar(1) - eta_.sum(); }

  static bool is_valid(const Vec<Scalar> &eta) {
    if (eta.size() < 1 || !eta.allFinite())
      return false;
    return (eta.array() > Scalar(0)).all() && Scalar(1) - eta.sum() > Scalar(0);
  }

private:
  Vec<Scalar> eta_;
};

template <typename Scalar = double> class ThetaCoord {
public:
  explicit ThetaCoord(Vec<Scalar> theta) : theta_(std::move(theta)) {
    if (theta_.size() < 1)
      throw DomainError("ThetaCoord: empty coordinate vector");
    if (!theta_.allFinite())
      throw NonFinite("ThetaCoord: entries must be finite");
  }

  Index dim() const { return theta_.size(); }
  const Vec<Scalar> &values() const { return theta_; }
  Scalar operator[](Index i) const { return theta_[i]; }

private:
  Vec<Scalar> theta_;
};

using SimplexPointd = SimplexPoint<double>;
using EtaCoordd = EtaCoord<double>;
using ThetaCoordd = ThetaCoord<double>;

namespace detail {

/// Softmax over (theta_1..theta_n, 0): returns all n+1 probabilities.
template <typename Scalar> Vec<Scalar> softmax_with_reference(const Vec<Scalar> &theta) {
  using std::exp;
  const Scalar shift = std::max(Scalar(0), theta.maxCoeff());
  Vec<Scalar> p(theta.size() + 1);
  p.head(theta.size()) = (theta.array() - shift).exp();
  p[theta.size()] = exp(-shift);
  p /= p.sum();
  return p;
}

} // namespace detail

template <typename Scalar> EtaCoord<Scalar> to_eta(const SimplexPoint<Scalar> &p) {
  return EtaCoord<Scalar>(p.probs().head(p.dim()));
}

template <typename Scalar> ThetaCoord<Scalar> to_theta(const SimplexPoint<Scalar> &p) {
  const Index n = p.dim();
  const Scalar ref = p.probs()[n];
  Vec<Scalar> theta(n);
  for (Index i = 0; i < n; ++i)
    theta[i] = std::log(p.probs()[i] / ref);
  return ThetaCoord<Scalar>(std::move(theta));
}

template <typename Scalar> SimplexPoint<Scalar> to_simplex(const EtaCoord<Scalar> &e) {
  Vec<Scalar> p(e.dim() + 1);
  p.head(e.dim()) = e.values();
  p[e.dim()] = e.last();
  return SimplexPoint<Scalar>(std::move(p));
}

template <typename Scalar> SimplexPoint<Scalar> to_simplex(const ThetaCoord<Scalar> &t) {
  return SimplexPoint<Scalar>(detail::softmax_with_reference(t.values()));
}

/// Mean parameters: eta = grad psi(theta).
template <typename Scalar> EtaCoord<Scalar> eta_from_theta(const ThetaCoord<Scalar> &t) {
  Vec<Scalar> p = detail::softmax_with_reference(t.values());
  return EtaCoord<Scalar>(p.head(t.dim()));
}

/// Natural parameters: theta = grad phi(eta).
template <typename Scalar> ThetaCoord<Scalar> theta_from_eta(const EtaCoord<Scalar> &e) {
  const Scalar ref = e.last();
  Vec<Scalar> theta(e.dim());
  for (Index i = 0; i < e.dim(); ++i)
    theta[i] = std::log(e[i] / ref);
  return ThetaCoord<Scalar>(std::move(theta));
}

/// Log-partition psi(theta) = log(1 + sum exp(theta_i)), shifted so that no
/// exponent is positive.
template <typename Scalar> Scalar psi(const ThetaCoord<Scalar> &t) {
  using std::exp;
  using std::log;
  const Scalar shift = std::max(Scalar(0), t.values().maxCoeff());
  const Scalar tail = (t.values().array() - shift).exp().sum();
  return shift + log(exp(-shift) + tail);
}

/// Negative Shannon entropy over all n+1 outcomes.
template <typename Scalar> Scalar phi(const EtaCoord<Scalar> &e) {
  using std::log;
  Scalar sum(0);
  for (Index i = 0; i < e.dim(); ++i)
    sum += e[i] * log(e[i]);
  const Scalar last = e.last();
  return sum + last * log(last);
}

} // namespace sflow
