#include "oracles.hpp"

#include "simplex_flows/descent.hpp"
#include "simplex_flows/geometry.hpp"
#include "simplex_flows/spectral.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace sflow;

namespace {

SimplexPointd point(std::initializer_list<double> v) {
  Vector p(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v)
    p[i++] = x;
  return SimplexPointd(p);
}

SymMatrixd six_three() {
  Matrix m(2, 2);
  m << 6, 3, 3, 6;
  return SymMatrixd(m);
}

DescentSpec plain(Method m, Variant v, const SimplexPointd &q, const SimplexPointd &p0, double lr,
                  long iters = 100) {
  return DescentSpec{m, v, q, p0, lr, NoiseModel::none(), iters, 0.0, std::nullopt};
}

const SimplexPointd kQ = point({0.2, 0.3, 0.5});
const SimplexPointd kFar = point({0.7, 0.2, 0.1});

} // namespace

TEST(MethodNames, RoundTripAndAliases) {
  for (Method m : {Method::gd_eta, Method::gd_theta, Method::ngd})
    EXPECT_EQ(method_from_string(to_string(m)), m);
  EXPECT_EQ(method_from_string("eta"), Method::gd_eta);
  EXPECT_EQ(method_from_string("theta"), Method::gd_theta);
  EXPECT_EQ(method_from_string("natural"), Method::ngd);
  EXPECT_THROW(method_from_string("adam"), ConfigError);
}

TEST(OptimalLr, KnownValues) {
  EXPECT_DOUBLE_EQ(optimal_lr(SymMatrixd::identity(3), LrRule::optimal), 1.0);
  EXPECT_NEAR(optimal_lr(six_three(), LrRule::optimal), 1.0 / 6, 1e-14);
  EXPECT_NEAR(optimal_lr(six_three(), LrRule::standard), 1.0 / 9, 1e-14);
}

TEST(LinearizedHessian, PerMethod) {
  EXPECT_LT((linearized_hessian(Method::gd_eta, kQ).matrix() - hess_phi(to_eta(kQ)).matrix()).norm(), 1e-14);
  EXPECT_LT((linearized_hessian(Method::gd_theta, kQ).matrix() - hess_psi(to_theta(kQ)).matrix()).norm(), 1e-14);
  EXPECT_EQ(linearized_hessian(Method::ngd, kQ).matrix(), Matrix::Identity(2, 2));
}

TEST(Descent, OptimumIsAFixedPoint) {
  for (Method m : {Method::gd_eta, Method::gd_theta, Method::ngd}) {
    for (Variant v : {Variant::nonlinear, Variant::linearized}) {
      Descent d(plain(m, v, kQ, kQ, 0.1));
      const Vector x = d.initial_state();
      EXPECT_LT((d.step(x, 0) - x).cwiseAbs().maxCoeff(), 1e-15) << to_string(m);
    }
  }
}

TEST(Descent, LinearizedNgdConvergesInOneStep) {
  CounterRng rng(61);
  for (int i = 0; i < 10; ++i) {
    Descent d(plain(Method::ngd, Variant::linearized, kQ, random_simplex_point(2, rng), 1.0));
    const Vector x1 = d.step(d.initial_state(), 0);
    EXPECT_LT((x1 - d.optimum()).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Descent, LinearizedGdEtaMatrixForm) {
  const double alpha = 0.05;
  Descent d(plain(Method::gd_eta, Variant::linearized, kQ, kFar, alpha));
  const Matrix h = hess_phi(to_eta(kQ)).matrix();
  const Vector eq = to_eta(kQ).values();
  Vector x = d.initial_state();
  for (long k = 0; k < 20; ++k) {
    const Vector ref = (Matrix::Identity(2, 2) - alpha * h) * x + alpha * h * eq;
    x = d.step(x, k);
    EXPECT_LT((x - ref).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Descent, NonlinearNgdAtUnitRateLandsOnOptimum) {
  // The natural gradient of L_q in eta is eta - eta_q, even far from q.
  ASSERT_GE(kl(kQ, kFar), 0.1);
  Descent d(plain(Method::ngd, Variant::nonlinear, kQ, kFar, 1.0));
  const Vector x1 = d.step(d.initial_state(), 0);
  EXPECT_LT((x1 - d.optimum()).cwiseAbs().maxCoeff(), 1e-15);
  Descent half(plain(Method::ngd, Variant::nonlinear, kQ, kFar, 0.5));
  const Vector h1 = half.step(half.initial_state(), 0);
  EXPECT_LT((h1 - 0.5 * (half.initial_state() + half.optimum())).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Descent, NonlinearEscapeIsReported) {
  Descent d(plain(Method::gd_eta, Variant::nonlinear, kQ, point({0.001, 0.001, 0.998}), 1.0));
  EXPECT_THROW(d.step(d.initial_state(), 0), BoundaryEscape);
}

TEST(Descent, RunStopsAtTolerance) {
  DescentSpec s = plain(Method::ngd, Variant::nonlinear, kQ, kFar, 1.0);
  s.tolerance = 1e-10;
  const Trajectory t = Descent(s).run();
  EXPECT_LE(t.objective_values.back(), 1e-10);
  EXPECT_LT(t.size(), 101u);
  EXPECT_TRUE(t.kl_nonincreasing());
}

TEST(Descent, NoiseRequiresLinearizedVariant) {
  DescentSpec s = plain(Method::ngd, Variant::nonlinear, kQ, kFar, 1.0);
  s.noise = NoiseModel::additive(3);
  EXPECT_THROW(Descent{s}, DomainError);
}

TEST(Descent, LinearizedContractionWithinClosedFormBound) {
  for (LrRule rule : {LrRule::standard, LrRule::optimal}) {
    for (Method m : {Method::gd_eta, Method::gd_theta}) {
      const SymMatrixd q = linearized_hessian(m, kQ);
      const double kappa = oracle::cond(q.matrix());
      const double alpha = optimal_lr(q, rule);
      const double bound = rule == LrRule::optimal ? std::pow(1 - 2 / (kappa + 1), 2) : std::pow(1 - 1 / kappa, 2);
      Descent d(plain(m, Variant::linearized, kQ, kFar, alpha, 200));
      Vector x = d.initial_state();
      double prev = d.objective(x);
      // States are absolute coordinates, so the error is only resolved down
      // to about 1e-16; stop before rounding dominates the ratio.
      for (long k = 0; k < 200 && prev > 1e-16; ++k) {
        x = d.step(x, k);
        const double cur = d.objective(x);
        EXPECT_LE(cur / prev, bound * (1 + 1e-6));
        prev = cur;
      }
    }
  }
}

TEST(MeasuredContraction, MatchesClosedForms) {
  CounterRng rng(62);
  for (int i = 0; i < 5; ++i) {
    const SymMatrixd q(oracle::random_spd(5, rng, 0.3, 6.0));
    const double kappa = oracle::cond(q.matrix());
    EXPECT_NEAR(measured_loss_contraction(q, optimal_lr(q, LrRule::standard), 5000, 1),
                std::pow(1 - 1 / kappa, 2), 1e-6);
    EXPECT_NEAR(measured_loss_contraction(q, optimal_lr(q, LrRule::optimal), 5000, 2),
                std::pow(1 - 2 / (kappa + 1), 2), 1e-6);
  }
}

TEST(DestabilizingDelta, IdentityHessian) {
  const SymMatrixd q = SymMatrixd::identity(3);
  const Matrix delta = destabilizing_delta(q);
  EXPECT_NEAR(Eigen::JacobiSVD<Matrix>(delta).singularValues()[0], 1.0, 1e-14);
  const Matrix m = Matrix::Identity(3, 3) - optimal_lr(q, LrRule::optimal) * (Matrix::Identity(3, 3) + delta) * q.matrix();
  EXPECT_NEAR(oracle::eigenvalues(0.5 * (m + m.transpose()))[0], -1.0, 1e-12);
}

TEST(DestabilizingDelta, KnownHessian) {
  const SymMatrixd q = six_three();
  const Matrix delta = destabilizing_delta(q);
  EXPECT_NEAR(Eigen::JacobiSVD<Matrix>(delta).singularValues()[0], 1.0 / 3, 1e-14);
  const Matrix m = Matrix::Identity(2, 2) - (1.0 / 6) * (Matrix::Identity(2, 2) + delta) * q.matrix();
  const Eigen::VectorXcd ev = m.eigenvalues();
  double closest = 1e9;
  for (Index i = 0; i < ev.size(); ++i)
    closest = std::min(closest, std::abs(ev[i] - std::complex<double>(-1.0, 0.0)));
  EXPECT_LT(closest, 1e-10);
}

TEST(DestabilizingDelta, SimulationDoesNotConverge) {
  for (Method m : {Method::gd_eta, Method::gd_theta}) {
    const SymMatrixd q = linearized_hessian(m, kQ);
    const Matrix delta = destabilizing_delta(q);
    DescentSpec s = plain(m, Variant::linearized, kQ, kFar, optimal_lr(q, LrRule::optimal), 1000);
    s.noise = NoiseModel::multiplicative(delta);
    Descent d(s);
    const auto ed = eigh(q);
    Vector e = ed.vectors.col(ed.values.size() - 1) * 0.01;
    const double e0 = e.norm();
    for (long k = 0; k < 1000; ++k) {
      e = d.step_error(e, k);
      ASSERT_GE(e.norm(), e0 / 2) << to_string(m) << " k = " << k;
    }
  }
}

TEST(MultiplicativeNoise, NgdAppliesToPreconditionedGradient) {
  Matrix delta(2, 2);
  delta << 0.3, -0.2, 0.1, 0.4;
  DescentSpec s = plain(Method::ngd, Variant::linearized, kQ, kFar, 0.7);
  s.noise = NoiseModel::multiplicative(delta);
  Descent d(s);
  Vector e(2);
  e << 0.1, -0.05;
  const Vector ref = (Matrix::Identity(2, 2) - 0.7 * (Matrix::Identity(2, 2) + delta)) * e;
  EXPECT_LT((d.step_error(e, 0) - ref).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(MultiplicativeNoise, NgdContractsUnderBoundedPerturbations) {
  CounterRng rng(63);
  std::vector<Matrix> deltas;
  for (int k = 0; k < 400; ++k) {
    Matrix g(2, 2);
    g << rng.normal(), rng.normal(), rng.normal(), rng.normal();
    deltas.push_back(g * (0.9 / Eigen::JacobiSVD<Matrix>(g).singularValues()[0]));
  }
  DescentSpec s = plain(Method::ngd, Variant::linearized, kQ, kFar, 1.0, 400);
  s.noise = NoiseModel::multiplicative([deltas](long k) { return deltas[static_cast<std::size_t>(k)]; });
  Descent d(s);
  Vector e = d.initial_state() - d.optimum();
  const double e0 = e.norm();
  for (long k = 0; k < 400; ++k) {
    e = d.step_error(e, k);
    ASSERT_LE(e.norm(), std::pow(0.9, double(k + 1)) * e0 * (1 + 1e-12));
  }
  EXPECT_LT(e.norm(), 1e-8);
}

TEST(AdditiveNoise, NgdCovarianceIsIdentity) {
  const SymMatrixd cov = steady_state_covariance(Method::ngd, kQ, 1.0, 1000, 100000, 64);
  EXPECT_LT((cov.matrix() - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 0.03);
}

TEST(AdditiveNoise, GdCovarianceMatchesLyapunov) {
  for (Method m : {Method::gd_eta, Method::gd_theta}) {
    const SymMatrixd q = linearized_hessian(m, kQ);
    const double alpha = optimal_lr(q, LrRule::optimal);
    const Matrix p = solve_lyapunov(q, alpha).matrix();
    const Matrix cov = steady_state_covariance(m, kQ, alpha, 1000, 100000, 65).matrix();
    for (Index i = 0; i < 2; ++i)
      for (Index j = 0; j < 2; ++j)
        EXPECT_LT(std::abs(cov(i, j) - p(i, j)) / std::sqrt(p(i, i) * p(j, j)), 0.05) << to_string(m);
    const double kappa = oracle::cond(q.matrix());
    EXPECT_NEAR(oracle::eigenvalues(p)[1], (kappa + 1) * (kappa + 1) / (4 * kappa), 1e-8);
  }
}

TEST(AdditiveNoise, ReproducibleForSeed) {
  const SymMatrixd a = steady_state_covariance(Method::gd_eta, kQ, 0.05, 10, 1000, 7);
  const SymMatrixd b = steady_state_covariance(Method::gd_eta, kQ, 0.05, 10, 1000, 7);
  EXPECT_EQ(a.matrix(), b.matrix());
}
