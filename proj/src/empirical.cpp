#include "simplex_flows/empirical.hpp"

#include "simplex_flows/geometry.hpp"
#include "simplex_flows/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace sflow {

Dataset::Dataset(std::vector<long> counts) : counts_(std::move(counts)) {
  if (counts_.size() < 2)
    throw DomainError("Dataset: need at least two outcomes");
  for (long c : counts_)
    if (c < 0)
      throw DomainError("Dataset: negative count");
  total_ = std::accumulate(counts_.begin(), counts_.end(), 0L);
  if (total_ <= 0)
    throw DomainError("Dataset: total must be positive");
}

std::string Dataset::to_csv_row() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < counts_.size(); ++i)
    out << (i ? "," : "") << counts_[i];
  return out.str();
}

Dataset Dataset::from_csv_row(const std::string &row) {
  std::vector<long> counts;
  std::istringstream in(row);
  std::string field;
  while (std::getline(in, field, ',')) {
    std::size_t used = 0;
    long value = 0;
    try {
      value = std::stol(field, &used);
    } catch (const std::exception &) {
      throw ConfigError("Dataset: malformed count '" + field + "'");
    }
    if (used != field.size())
      throw ConfigError("Dataset: malformed count '" + field + "'");
    counts.push_back(value);
  }
  return Dataset(std::move(counts));
}

namespace {

/// Draws an outcome index from cumulative weights (last entry = total).
template <typename T> Index draw(const std::vector<T> &cumulative, T u) {
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return std::min<Index>(static_cast<Index>(it - cumulative.begin()),
                         static_cast<Index>(cumulative.size()) - 1);
}

} // namespace

Dataset sample_dataset(const SimplexPointd &q, long n_samples, std::uint64_t seed) {
  if (n_samples < 1)
    throw DomainError("sample_dataset: n_samples must be positive");
  std::vector<double> cumulative(static_cast<std::size_t>(q.outcomes()));
  std::partial_sum(q.probs().data(), q.probs().data() + q.outcomes(), cumulative.begin());
  CounterRng rng(seed);
  std::vector<long> counts(cumulative.size(), 0);
  for (long j = 0; j < n_samples; ++j)
    ++counts[static_cast<std::size_t>(draw(cumulative, rng.uniform() * cumulative.back()))];
  return Dataset(std::move(counts));
}

SimplexPointd empirical_target(const Dataset &data) {
  Vector p(data.outcomes());
  for (Index i = 0; i < data.outcomes(); ++i) {
    const long c = data.counts()[static_cast<std::size_t>(i)];
    if (c == 0)
      throw ZeroCount("empirical_target: outcome " + std::to_string(i + 1) +
                      " has zero count; resample or increase N");
    p[i] = static_cast<double>(c) / static_cast<double>(data.total());
  }
  return SimplexPointd(p);
}

double empirical_kl(const Dataset &data, const SimplexPointd &p) {
  require_same_dim("empirical_kl", data.outcomes(), p.outcomes());
  return kl(empirical_target(data), p);
}

double empirical_cross_entropy(const Dataset &data, const SimplexPointd &p) {
  require_same_dim("empirical_cross_entropy", data.outcomes(), p.outcomes());
  double h = 0.0;
  for (Index i = 0; i < p.outcomes(); ++i) {
    const long c = data.counts()[static_cast<std::size_t>(i)];
    if (c > 0)
      h -= static_cast<double>(c) / static_cast<double>(data.total()) * std::log(p[i]);
  }
  return h;
}

double SgdSchedule::rate(long k) const {
  if (!(base_rate > 0.0) || !(decay_a > 0.0))
    throw DomainError("SgdSchedule: base_rate and decay_a must be positive");
  return base_rate * decay_a / (static_cast<double>(k) + decay_a);
}

Vector minibatch_gradient(Method method, const Vector &state, const Vector &batch_freqs) {
  const Index n = state.size();
  require_same_dim("minibatch_gradient", batch_freqs.size(), n + 1);
  switch (method) {
  case Method::gd_eta:
    return detail::cross_entropy_grad_eta<double>(state, batch_freqs);
  case Method::gd_theta:
    return eta_from_theta(ThetaCoordd(state)).values() - batch_freqs.head(n);
  case Method::ngd:
    return state - batch_freqs.head(n);
  }
  throw DomainError("minibatch_gradient: unknown method");
}

Trajectory run_empirical(const Dataset &data, const EmpiricalSpec &spec, const Batch &batch,
                         const std::optional<SgdSchedule> &schedule) {
  require_same_dim("run_empirical", data.outcomes(), spec.truth.outcomes());
  const SimplexPointd q_hat = empirical_target(data);

  if (batch.kind == Batch::Kind::full) {
    if (schedule)
      throw DomainError("run_empirical: a decay schedule requires minibatches");
    DescentSpec ds{spec.method, Variant::nonlinear, q_hat,       spec.init,
                   spec.learning_rate, NoiseModel::none(), spec.max_iters, spec.tolerance,
                   spec.truth};
    return Descent(std::move(ds)).run();
  }

  if (batch.size < 1)
    throw DomainError("run_empirical: minibatch size must be positive");
  if (!(spec.learning_rate > 0.0))
    throw DomainError("run_empirical: learning rate must be positive");

  // The evaluation side (state validity, objective, reference KL) reuses the
  // full-batch runner; only the update differs.
  const Descent eval(DescentSpec{spec.method, Variant::nonlinear, q_hat, spec.init,
                                 spec.learning_rate, NoiseModel::none(), spec.max_iters,
                                 spec.tolerance, spec.truth});
  std::vector<long> cumulative(data.counts().size());
  std::partial_sum(data.counts().begin(), data.counts().end(), cumulative.begin());
  CounterRng rng(batch.seed);

  Trajectory traj;
  Vector x = eval.initial_state();
  double obj = eval.objective(x);
  traj.push(0.0, x, eval.reference_kl(x), obj);
  Vector freqs(data.outcomes());
  for (long k = 0; k < spec.max_iters; ++k) {
    if (spec.tolerance > 0.0 && obj <= spec.tolerance)
      break;
    freqs.setZero();
    for (long j = 0; j < batch.size; ++j)
      freqs[draw(cumulative, static_cast<long>(rng.below(static_cast<std::uint64_t>(data.total()))))] +=
          1.0;
    freqs /= static_cast<double>(batch.size);
    const double rate = schedule ? SgdSchedule{spec.learning_rate, schedule->decay_a}.rate(k)
                                 : spec.learning_rate;
    x = x - rate * minibatch_gradient(spec.method, x, freqs);
    if (!x.allFinite())
      throw NonFinite("run_empirical: non-finite iterate at k = " + std::to_string(k));
    if (spec.method != Method::gd_theta && !EtaCoordd::is_valid(x))
      throw BoundaryEscape("run_empirical: " + to_string(spec.method) +
                           " iterate left the simplex at k = " + std::to_string(k));
    obj = eval.objective(x);
    traj.push(static_cast<double>(k + 1), x, eval.reference_kl(x), obj);
  }
  return traj;
}

long convergence_time(const std::vector<Trajectory> &trajectories, double tolerance, long max_iters) {
  long worst = 0;
  for (const Trajectory &traj : trajectories) {
    long first = max_iters;
    for (std::size_t i = 0; i < traj.size(); ++i) {
      if (traj.objective_values[i] <= tolerance) {
        first = std::min(max_iters, static_cast<long>(std::lround(traj.times[i])));
        break;
      }
    }
    worst = std::max(worst, first);
  }
  return worst;
}

} // namespace sflow
