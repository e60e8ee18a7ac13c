#pragma once

// Sampled data, the empirical KL divergence, and full-batch / minibatch
// descent on it.

#include "simplex_flows/descent.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sflow {

/// Category counts of a sample; total is their sum.
class Dataset {
public:
  explicit Dataset(std::vector<long> counts);

  const std::vector<long> &counts() const { return counts_; }
  long total() const { return total_; }
  Index outcomes() const { return static_cast<Index>(counts_.size()); }

  std::string to_csv_row() const;
  static Dataset from_csv_row(const std::string &row);

private:
  std::vector<long> counts_;
  long total_ = 0;
};

/// Multinomial sample of n_samples i.i.d. draws from q.
Dataset sample_dataset(const SimplexPointd &q, long n_samples, std::uint64_t seed);

/// Relative frequencies; throws ZeroCount if any outcome is unobserved.
SimplexPointd empirical_target(const Dataset &data);

/// KL(q_hat || p).
double empirical_kl(const Dataset &data, const SimplexPointd &p);

/// -sum_i q_hat_i log p_i.
double empirical_cross_entropy(const Dataset &data, const SimplexPointd &p);

/// Learning rate base_rate * a / (k + a).
struct SgdSchedule {
  double base_rate = 1.0;
  double decay_a = 1e3;

  double rate(long k) const;
};

struct Batch {
  enum class Kind { full, minibatch };

  Kind kind = Kind::full;
  long size = 0;
  std::uint64_t seed = 0;

  static Batch full() { return {}; }
  static Batch minibatch(long size, std::uint64_t seed) { return {Kind::minibatch, size, seed}; }
};

struct EmpiricalSpec {
  Method method = Method::ngd;
  /// True distribution; the recorded KL is measured against it.
  SimplexPointd truth;
  SimplexPointd init;
  double learning_rate = 1.0;
  long max_iters = 100;
  /// Stop once KL(q_hat || x) drops to this value (0 runs all iterations).
  double tolerance = 0.0;
};

/// Full batch: descent on L_{q_hat}. Minibatch: each iteration draws `size`
/// samples uniformly (with replacement) from the dataset and steps along the
/// cross-entropy gradient of the minibatch frequencies, with the schedule's
/// decaying rate (constant rate when no schedule is given). objective_values
/// hold KL(q_hat || x) and kl_values hold KL(truth || x).
Trajectory run_empirical(const Dataset &data, const EmpiricalSpec &spec, const Batch &batch,
                         const std::optional<SgdSchedule> &schedule = std::nullopt);

/// Minibatch gradient of the cross-entropy at chart state x (eta for gd_eta,
/// theta for gd_theta; for ngd the natural gradient eta - q_k).
Vector minibatch_gradient(Method method, const Vector &state, const Vector &batch_freqs);

/// Max over trajectories of the first iteration whose objective is at most
/// tolerance; trajectories that never get there count as max_iters.
long convergence_time(const std::vector<Trajectory> &trajectories, double tolerance, long max_iters);

} // namespace sflow
