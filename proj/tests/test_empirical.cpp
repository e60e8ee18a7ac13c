#include "oracles.hpp"

#include "simplex_flows/empirical.hpp"
#include "simplex_flows/geometry.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace sflow;

namespace {

SimplexPointd point(std::initializer_list<double> v) {
  Vector p(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v)
    p[i++] = x;
  return SimplexPointd(p);
}

const SimplexPointd kUniform = point({1.0 / 3, 1.0 / 3, 1.0 / 3});

} // namespace

TEST(Dataset, Validation) {
  EXPECT_THROW(Dataset({5}), DomainError);
  EXPECT_THROW(Dataset({1, -1, 3}), DomainError);
  EXPECT_THROW(Dataset({0, 0}), DomainError);
  const Dataset d({5, 3, 2});
  EXPECT_EQ(d.total(), 10);
  EXPECT_EQ(Dataset::from_csv_row(d.to_csv_row()).counts(), d.counts());
  EXPECT_THROW(Dataset::from_csv_row("1,x,2"), ConfigError);
}

TEST(SampleDataset, LargeSampleFrequencies) {
  const Dataset d = sample_dataset(kUniform, 1000000, 71);
  EXPECT_EQ(d.total(), 1000000);
  const SimplexPointd qhat = empirical_target(d);
  for (Index i = 0; i < 3; ++i)
    EXPECT_NEAR(qhat[i], 1.0 / 3, 0.005);
}

TEST(SampleDataset, Reproducible) {
  EXPECT_EQ(sample_dataset(kUniform, 1000, 5).counts(), sample_dataset(kUniform, 1000, 5).counts());
  EXPECT_NE(sample_dataset(kUniform, 1000, 5).counts(), sample_dataset(kUniform, 1000, 6).counts());
}

TEST(SampleDataset, SmallSampleOfSkewedTargetHitsZeroCount) {
  const SimplexPointd q = point({0.998, 0.001, 0.001});
  bool saw_zero = false;
  for (std::uint64_t seed = 0; seed < 20 && !saw_zero; ++seed) {
    const Dataset d = sample_dataset(q, 10, seed);
    if (std::count(d.counts().begin(), d.counts().end(), 0L) > 0) {
      saw_zero = true;
      EXPECT_THROW(empirical_target(d), ZeroCount);
    }
  }
  EXPECT_TRUE(saw_zero);
}

TEST(EmpiricalTarget, Division) {
  const SimplexPointd u = empirical_target(Dataset({1, 1, 1}));
  EXPECT_NEAR((u.probs() - kUniform.probs()).cwiseAbs().maxCoeff(), 0.0, 1e-16);
  const SimplexPointd p = empirical_target(Dataset({5, 3, 2}));
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.3);
  EXPECT_DOUBLE_EQ(p[2], 0.2);
  EXPECT_THROW(empirical_target(Dataset({0, 5, 5})), ZeroCount);
  EXPECT_THROW(empirical_kl(Dataset({0, 5, 5}), kUniform), ZeroCount);
}

TEST(EmpiricalKl, ZeroAtEmpiricalTargetAndEntropyOffset) {
  const Dataset d({7, 2, 11});
  const SimplexPointd qhat = empirical_target(d);
  EXPECT_EQ(empirical_kl(d, qhat), 0.0);
  double entropy = 0.0;
  for (Index i = 0; i < 3; ++i)
    entropy -= qhat[i] * std::log(qhat[i]);
  CounterRng rng(72);
  for (int i = 0; i < 20; ++i) {
    const SimplexPointd p = random_simplex_point(2, rng);
    EXPECT_NEAR(empirical_cross_entropy(d, p) - empirical_kl(d, p), entropy, 1e-12);
  }
}

TEST(EmpiricalKl, LargeSampleConsistency) {
  CounterRng rng(73);
  const SimplexPointd q = random_simplex_point(4, rng);
  const Dataset d = sample_dataset(q, 1000000, 74);
  for (int i = 0; i < 20; ++i) {
    const SimplexPointd p = random_simplex_point(4, rng);
    EXPECT_LT(std::abs(empirical_kl(d, p) - kl(q, p)), 5e-3);
  }
}

TEST(SgdSchedule, Decay) {
  const SgdSchedule s{0.6, 1000.0};
  EXPECT_DOUBLE_EQ(s.rate(0), 0.6);
  EXPECT_DOUBLE_EQ(s.rate(1000), 0.3);
}

TEST(MinibatchGradient, MatchesFullGradientAtFullFrequencies) {
  CounterRng rng(75);
  const SimplexPointd q = random_simplex_point(4, rng);
  const SimplexPointd p = random_simplex_point(4, rng);
  EXPECT_LT((minibatch_gradient(Method::gd_eta, to_eta(p).values(), q.probs()) - grad_Lq_eta(to_eta(p), to_eta(q))).norm(), 1e-12);
  EXPECT_LT((minibatch_gradient(Method::gd_theta, to_theta(p).values(), q.probs()) - grad_Lq_theta(to_theta(p), to_theta(q))).norm(), 1e-14);
  EXPECT_LT((minibatch_gradient(Method::ngd, to_eta(p).values(), q.probs()) - natural_grad_Lq(to_eta(p), to_eta(q))).norm(), 1e-15);
}

TEST(MinibatchGradient, ToleratesZeroCounts) {
  Vector freqs(4);
  freqs << 0.5, 0.0, 0.5, 0.0;
  Vector eta(3);
  eta << 0.2, 0.3, 0.1;
  for (Method m : {Method::gd_eta, Method::gd_theta, Method::ngd})
    EXPECT_TRUE(minibatch_gradient(m, eta, freqs).allFinite());
}

TEST(MinibatchGradient, Unbiased) {
  const Dataset d({300, 500, 200});
  const SimplexPointd qhat = empirical_target(d);
  const Vector eta = (Vector(2) << 0.25, 0.25).finished();
  std::vector<long> cumulative(d.counts().size());
  std::partial_sum(d.counts().begin(), d.counts().end(), cumulative.begin());
  CounterRng rng(76);
  const long batch = 32;
  const long draws = 10000;
  Vector mean = Vector::Zero(2);
  for (long r = 0; r < draws; ++r) {
    Vector freqs = Vector::Zero(3);
    for (long j = 0; j < batch; ++j) {
      const long u = static_cast<long>(rng.below(static_cast<std::uint64_t>(d.total())));
      const auto idx = std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin();
      freqs[idx] += 1.0 / batch;
    }
    mean += minibatch_gradient(Method::gd_eta, eta, freqs);
  }
  mean /= double(draws);
  const Vector full = grad_Lq_eta(EtaCoordd(eta), to_eta(qhat));
  EXPECT_LT((mean - full).norm() / full.norm(), 0.02);
}

TEST(RunEmpirical, StationaryAtEmpiricalTarget) {
  const Dataset d({30, 50, 20});
  const SimplexPointd qhat = empirical_target(d);
  for (Method m : {Method::gd_eta, Method::gd_theta, Method::ngd}) {
    const Trajectory t = run_empirical(d, EmpiricalSpec{m, kUniform, qhat, 0.01, 10, 0.0}, Batch::full());
    for (const Vector &s : t.states)
      EXPECT_LT((s - t.states.front()).cwiseAbs().maxCoeff(), 1e-15);
    for (double v : t.objective_values)
      EXPECT_LT(std::abs(v), 1e-15);
  }
}

TEST(RunEmpirical, RecordsKlAgainstTruth) {
  const Dataset d({30, 50, 20});
  const SimplexPointd qhat = empirical_target(d);
  const Trajectory t = run_empirical(d, EmpiricalSpec{Method::ngd, kUniform, kUniform, 1.0, 3, 0.0}, Batch::full());
  EXPECT_NEAR(t.kl_values.back(), kl(kUniform, qhat), 1e-12);
  EXPECT_NEAR(t.objective_values.front(), kl(qhat, kUniform), 1e-15);
}

TEST(RunEmpirical, MinibatchReproducibleAndConverging) {
  CounterRng rng(77);
  const SimplexPointd q = random_simplex_point(3, rng);
  const Dataset d = sample_dataset(q, 100000, 78);
  const EmpiricalSpec spec{Method::ngd, q, random_simplex_point(3, rng), 0.5, 200, 0.0};
  const SgdSchedule schedule{0.5, 20.0};
  const Trajectory a = run_empirical(d, spec, Batch::minibatch(256, 9), schedule);
  const Trajectory b = run_empirical(d, spec, Batch::minibatch(256, 9), schedule);
  EXPECT_EQ(a.objective_values, b.objective_values);
  EXPECT_LT(a.objective_values.back(), 1e-3);
  EXPECT_THROW(run_empirical(d, spec, Batch::full(), schedule), DomainError);
}

TEST(ConvergenceTime, SaturationAndFastRuns) {
  Trajectory fast;
  for (int k = 0; k < 5; ++k)
    fast.push(k, Vector::Zero(1), 0.0, k < 3 ? 1.0 : 1e-6);
  EXPECT_EQ(convergence_time({fast, fast}, 1e-4, 100), 3);
  Trajectory slow;
  for (int k = 0; k <= 100; ++k)
    slow.push(k, Vector::Zero(1), 0.0, 1.0);
  EXPECT_EQ(convergence_time({fast, slow}, 1e-4, 100), 100);
  EXPECT_EQ(convergence_time({Trajectory{}}, 1e-4, 100), 100);
}

TEST(ConvergenceTime, LinearizedNgdTakesOneStep) {
  const SimplexPointd q = point({0.2, 0.3, 0.5});
  CounterRng rng(79);
  std::vector<Trajectory> runs;
  for (int i = 0; i < 10; ++i)
    runs.push_back(Descent(DescentSpec{Method::ngd, Variant::linearized, q, random_simplex_point(2, rng), 1.0,
                                       NoiseModel::none(), 100, 0.0, std::nullopt})
                       .run());
  EXPECT_EQ(convergence_time(runs, 1e-12, 100), 1);
}
