#pragma once

#include "simplex_flows/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace sflow {

/// Time- or iteration-stamped states of a flow or descent run.
///
/// kl_values holds the KL divergence to the reference target (NaN where the
/// state is not a valid distribution, e.g. noisy linearized runs).
/// objective_values holds the quantity actually being minimized: identical to
/// kl_values for plain runs, the loss gap to the empirical target for
/// data-driven runs, and the quadratic model 0.5 e^T Q e for linearized runs.
struct Trajectory {
  std::vector<double> times;
  std::vector<Vector> states;
  std::vector<double> kl_values;
  std::vector<double> objective_values;

  std::size_t size() const { return times.size(); }

  void push(double t, Vector state, double kl, double objective) {
    times.push_back(t);
    states.push_back(std::move(state));
    kl_values.push_back(kl);
    objective_values.push_back(objective);
  }

  /// True if kl_values never increase by more than `slack` (relative to the
  /// previous value, with an absolute floor of `slack`).
  bool kl_nonincreasing(double slack = 1e-12) const {
    for (std::size_t i = 1; i < kl_values.size(); ++i) {
      const double prev = kl_values[i - 1];
      if (kl_values[i] > prev + slack * std::max(1.0, std::abs(prev)))
        return false;
    }
    return true;
  }
};

} // namespace sflow
