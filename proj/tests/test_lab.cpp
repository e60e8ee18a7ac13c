#include "oracles.hpp"

#include "simplex_flows/lab.hpp"

#include <gtest/gtest.h>
#include "json.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>

using namespace sflow;

namespace {

SimplexPointd point(std::initializer_list<double> v) {
  Vector p(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v)
    p[i++] = x;
  return SimplexPointd(p);
}

RunConfig config(std::initializer_list<std::pair<const char *, const char *>> kv) {
  RunConfig cfg;
  for (const auto &[k, v] : kv)
    cfg.set(k, v);
  return cfg;
}

const Assertion *find(const ExperimentResult &r, const std::string &name) {
  for (const Assertion &a : r.assertions)
    if (a.name == name)
      return &a;
  return nullptr;
}

} // namespace

TEST(FitRate, ExactExponential) {
  std::vector<double> t, v;
  for (int i = 0; i <= 200; ++i) {
    t.push_back(0.05 * i);
    v.push_back(3.0 * std::exp(-2.0 * t.back()));
  }
  const RateFit fit = fit_rate(t, v);
  EXPECT_NEAR(fit.slope, 2.0, 1e-6);
  EXPECT_GT(fit.r_squared, 1.0 - 1e-10);
  EXPECT_FALSE(fit.flagged);
}

TEST(FitRate, RejectsFlatAndShortInput) {
  EXPECT_THROW(fit_rate({0, 1, 2}, {1, 1, 1}), InsufficientDecay);
  EXPECT_THROW(fit_rate({0, 1, 2}, {1, 0.5, 0.25}), InsufficientDecay);
  EXPECT_THROW(fit_rate({0, 1}, {1}), DimensionMismatch);
}

TEST(FitRate, FlowStartedAtTargetIsExcluded) {
  const SimplexPointd q = point({0.2, 0.3, 0.5});
  const Trajectory t = integrate(FlowSpec{Loss::Lq, FlowChart::eta, q, q, std::nullopt}, 1.0, 0.01, 1);
  EXPECT_THROW(fit_rate(t), InsufficientDecay);
}

TEST(FitRate, NaturalFlowRateIsTwo) {
  CounterRng rng(81);
  for (Index n : {2, 10}) {
    const SimplexPointd q = random_simplex_point(n, rng);
    const SimplexPointd p = random_simplex_point(n, rng);
    IntegrateOptions opts;
    opts.stop_below = 1e-14;
    const Trajectory t = integrate(FlowSpec{Loss::Lq, FlowChart::natural_eta, q, p, std::nullopt}, 20.0, 1e-3, 50, opts);
    const RateFit fit = fit_rate(t);
    EXPECT_NEAR(fit.slope, 2.0, 0.1) << "n = " << n;
    EXPECT_GE(fit.r_squared, 0.99);
  }
}

TEST(RateBounds, DegenerateSublevelSetIsTheOptimum) {
  const SimplexPointd q = point({0.2, 0.3, 0.5});
  const RateBounds be = rate_bounds(BoundLoss::Lq_eta, q, q, 100, 1);
  const Vector ev = oracle::eigenvalues(hess_phi(to_eta(q)).matrix());
  EXPECT_NEAR(be.m_lo, ev[0], 1e-10);
  const RateBounds bt = rate_bounds(BoundLoss::Lq_theta, q, q, 100, 1);
  const Vector evt = oracle::eigenvalues(hess_psi(to_theta(q)).matrix());
  EXPECT_NEAR(bt.l_hi, evt[1], 1e-10);
}

TEST(RateBounds, RefinementIsStable) {
  for (Index n : {2, 10}) {
    CounterRng rng(82 + static_cast<std::uint64_t>(n));
    const SimplexPointd q = random_simplex_point(n, rng);
    const SimplexPointd p = random_simplex_point(n, rng);
    for (BoundLoss loss : {BoundLoss::Lq_eta, BoundLoss::Lq_theta}) {
      const RateBounds coarse = rate_bounds(loss, q, p, 2000, 3);
      const RateBounds fine = rate_bounds(loss, q, p, 8000, 3);
      if (loss == BoundLoss::Lq_eta)
        EXPECT_LT(std::abs(fine.m_lo - coarse.m_lo) / coarse.m_lo, 0.02) << "n = " << n;
      else
        EXPECT_LT(std::abs(fine.l_hi - coarse.l_hi) / coarse.l_hi, 0.02) << "n = " << n;
    }
  }
}

TEST(RateBounds, BracketOptimumHessian) {
  CounterRng rng(84);
  const SimplexPointd q = random_simplex_point(4, rng);
  const SimplexPointd p = random_simplex_point(4, rng);
  const RateBounds be = rate_bounds(BoundLoss::Lq_eta, q, p, 500, 1);
  EXPECT_LE(be.m_lo, oracle::eigenvalues(hess_phi(to_eta(q)).matrix())[0] * (1 + 1e-12));
  const RateBounds bt = rate_bounds(BoundLoss::Lq_theta, q, p, 500, 1);
  EXPECT_GE(bt.l_hi, oracle::eigenvalues(hess_psi(to_theta(q)).matrix())[3] * (1 - 1e-12));
}

TEST(Witness, FoundForReverseKlAndNotForForwardKl) {
  const SimplexPointd p = point({0.7, 0.2, 0.1});
  const Vector center = to_theta(p).values();
  const auto lstar = [&](const Vector &t) { return kl(to_simplex(ThetaCoordd(t)), p); };
  const Witness w = nonconvexity_witness(lstar, center, 3.0, 10000, 5);
  EXPECT_GT(w.fmid, std::max(w.fa, w.fb));
  EXPECT_NEAR(w.fmid, lstar(0.5 * (w.a + w.b)), 1e-15);
  EXPECT_GT((w.a - w.b).norm(), 0.0);
  EXPECT_LE(w.probes, 10000);
  const auto lq = [&](const Vector &t) { return kl(p, to_simplex(ThetaCoordd(t))); };
  EXPECT_THROW(nonconvexity_witness(lq, center, 3.0, 10000, 5), WitnessNotFound);
}

TEST(Output, NumberFormatting) {
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(1.0 / 3), "0.333333333");
  EXPECT_EQ(format_number(std::nan("")), "nan");
  EXPECT_EQ(format_number(-INFINITY), "-inf");
  EXPECT_EQ(format_number(12345678901.0), "1.23456789e+10");
}

TEST(Output, CsvAndJson) {
  ExperimentResult r;
  r.name = "demo";
  r.seed = 3;
  r.config = {{"n", "2"}};
  r.columns = {"a", "b"};
  r.rows = {{1.0, 0.5}, {2.0, std::nan("")}};
  r.summary = {{"best", 1.0 / 3}};
  r.assertions = {{"ok", true, "fine"}};
  EXPECT_EQ(to_csv(r), "a,b\n1,0.5\n2,nan\n");
  const auto j = nlohmann::json::parse(to_json(r));
  EXPECT_EQ(j["experiment"], "demo");
  EXPECT_EQ(j["seed"], 3);
  EXPECT_EQ(j["config"]["n"], "2");
  EXPECT_DOUBLE_EQ(j["summary"]["best"].get<double>(), 0.333333333);
  EXPECT_TRUE(j["assertions"][0]["passed"].get<bool>());
  EXPECT_TRUE(r.all_passed());
  EXPECT_DOUBLE_EQ(r.summary_value("best"), 1.0 / 3);
  EXPECT_THROW(r.summary_value("missing"), DomainError);

  const auto dir = std::filesystem::temp_directory_path() / "simplex_flows_output_test";
  std::filesystem::remove_all(dir);
  write_outputs(r, dir);
  std::ifstream csv(dir / "demo.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "a,b");
  EXPECT_TRUE(std::filesystem::exists(dir / "demo.json"));
  std::filesystem::remove_all(dir);
}

TEST(ParallelMap, IndexOrderAndErrors) {
  const std::vector<int> sq = parallel_map<int>(50, [](std::size_t i) { return int(i * i); });
  for (std::size_t i = 0; i < sq.size(); ++i)
    EXPECT_EQ(sq[i], int(i * i));
  EXPECT_THROW(parallel_map<int>(10,
                                 [](std::size_t i) -> int {
                                   if (i == 7)
                                     throw DomainError("boom");
                                   return 0;
                                 }),
               DomainError);
  EXPECT_TRUE(parallel_map<int>(0, [](std::size_t) { return 1; }).empty());
}

TEST(NearOptimumInit, WithinRequestedLevel) {
  CounterRng rng(85);
  const SimplexPointd q = random_simplex_point(5, rng);
  for (int i = 0; i < 20; ++i)
    EXPECT_LE(kl(q, near_optimum_init(q, 0.05, rng)), 0.05);
}

TEST(Experiments, SectionsBracketQuadratic) {
  for (const char *n : {"2", "10"}) {
    const ExperimentResult r = local_sections(config({{"n", n}}));
    EXPECT_TRUE(r.all_passed()) << "n = " << n;
  }
}

TEST(Experiments, SectionCurvatureMatchesHessian) {
  // Second difference of an eta-section at 0 against v^T H v.
  CounterRng rng(86);
  const SimplexPointd q = random_simplex_point(3, rng);
  const Vector eq = to_eta(q).values();
  const Matrix h = hess_Lq_eta(to_eta(q), to_eta(q)).matrix();
  for (int i = 0; i < 8; ++i) {
    Vector v = gaussian_noise(3, rng);
    v.normalize();
    const double s = 1e-4;
    const auto f = [&](double x) { return kl(q, to_simplex(EtaCoordd(eq + x * v))); };
    const double second = (f(s) - 2 * f(0) + f(-s)) / (s * s);
    EXPECT_NEAR(second / v.dot(h * v), 1.0, 1e-3);
  }
}

TEST(Experiments, AffineRatesSmall) {
  const ExperimentResult r = affine_rate_experiment(config({{"n", "2"}}));
  EXPECT_TRUE(r.all_passed());
}

TEST(Experiments, NonconvexityPasses) {
  const ExperimentResult r = nonconvexity_experiment(RunConfig{});
  ASSERT_NE(find(r, "Lstar_theta_witness_found"), nullptr);
  EXPECT_TRUE(r.all_passed());
}

TEST(Experiments, SweepSingleValueGrid) {
  const ExperimentResult r =
      lr_sweep(config({{"n", "2"}, {"inits", "5"}, {"grid", "1:1:1"}, {"samples", "2000"}}));
  EXPECT_EQ(r.rows.size(), 1u);
  EXPECT_LE(r.summary_value("best_time"), 3.0);
}

TEST(Experiments, SweepAutoResolution) {
  EXPECT_EQ(sweep_grid(config({{"method", "ngd"}})).count, 100);
  EXPECT_NEAR(sweep_grid(config({{"method", "gd_theta"}})).hi, 40.0, 0);
  EXPECT_NEAR(sweep_grid(config({{"grid", "0.2:0.4:3"}})).lo, 0.2, 0);
  EXPECT_DOUBLE_EQ(sweep_tolerance(RunConfig{}), 1e-4);
  EXPECT_DOUBLE_EQ(sweep_tolerance(config({{"mode", "sgd"}})), 1e-2);
  EXPECT_DOUBLE_EQ(sweep_tolerance(config({{"tol", "1e-3"}, {"mode", "sgd"}})), 1e-3);
}

TEST(Experiments, SmallSandwichIsDeterministic) {
  const RunConfig cfg = config({{"n", "2"}, {"inits", "4"}, {"bound_samples", "200"}});
  const ExperimentResult a = sandwich_experiment(cfg);
  const ExperimentResult b = sandwich_experiment(cfg);
  EXPECT_TRUE(a.all_passed());
  EXPECT_EQ(to_json(a), to_json(b));
  EXPECT_EQ(to_csv(a), to_csv(b));
}

TEST(Experiments, UnknownNameRejected) {
  EXPECT_THROW(run_experiment("nope", RunConfig{}), ConfigError);
}
