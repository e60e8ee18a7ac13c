#include "simplex_flows/lab.hpp"

#include "simplex_flows/empirical.hpp"
#include "simplex_flows/geometry.hpp"
#include "simplex_flows/rng.hpp"
#include "simplex_flows/spectral.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <thread>

namespace sflow {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Stream ids for CounterRng::derive, so each random quantity has its own
// reproducible substream.
constexpr std::uint64_t kTargetStream = 0;
constexpr std::uint64_t kDataStream = 1;
constexpr std::uint64_t kInitStream = 1000;
constexpr std::uint64_t kBoundStream = 1000000;
constexpr std::uint64_t kBatchStream = 2000000;

SimplexPointd point_from_list(const std::vector<double> &v, const char *key) {
  if (v.size() < 3)
    throw ConfigError(std::string(key) + ": need at least three probabilities");
  return SimplexPointd(Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())));
}

SimplexPointd random_target(Index n, std::uint64_t seed) {
  CounterRng rng = CounterRng(seed).derive(kTargetStream);
  return random_simplex_point(n, rng);
}

SimplexPointd random_init(Index n, std::uint64_t seed, std::size_t i) {
  CounterRng rng = CounterRng(seed).derive(kInitStream + i);
  return random_simplex_point(n, rng);
}

double min_eig(const SymMatrixd &m) { return eigh(m).values[0]; }
double max_eig(const SymMatrixd &m) {
  const auto ed = eigh(m);
  return ed.values[ed.values.size() - 1];
}

void echo(ExperimentResult &r, const RunConfig &cfg, std::initializer_list<const char *> keys) {
  for (const char *k : keys)
    r.config.emplace_back(k, cfg.get(k));
}

void check(ExperimentResult &r, std::string name, bool passed, std::string detail) {
  r.assertions.push_back({std::move(name), passed, std::move(detail)});
}

FitOptions fit_options(const RunConfig &cfg) {
  return {cfg.get_double("fit_fraction"), cfg.get_double("fit_floor"), cfg.get_double("min_r2")};
}

/// Integrates a flow with a sampling interval chosen so that roughly
/// `samples` points cover the expected decay to `stop_below` at `rate`.
Trajectory run_flow(const FlowSpec &spec, double dt, double t_cap, double stop_below, double rate,
                    long samples) {
  const double kl0 = flow_loss(spec.loss, spec.target, spec.init);
  const double decades = std::max(1.0, std::log(std::max(kl0, 1e-300) / stop_below));
  const double t_expected = decades / rate;
  const double t_end = std::min(t_cap, 3.0 * t_expected);
  const long every = std::max(1L, std::lround(t_expected / static_cast<double>(samples) / dt));
  IntegrateOptions opts;
  opts.stop_below = stop_below;
  return integrate(spec, t_end, dt, static_cast<int>(every), opts);
}

} // namespace

// ---------------------------------------------------------------------------
// Rate fitting

RateFit fit_rate(const std::vector<double> &times, const std::vector<double> &values,
                 const FitOptions &opts) {
  if (times.size() != values.size())
    throw DimensionMismatch("fit_rate", static_cast<Index>(times.size()),
                            static_cast<Index>(values.size()));
  if (values.empty() || !(values.front() > 0.0))
    throw InsufficientDecay("fit_rate: initial value is not positive");
  const double v0 = values.front();
  if (!std::any_of(values.begin(), values.end(), [&](double v) { return v < 0.9 * v0; }))
    throw InsufficientDecay("fit_rate: values never drop below 0.9x the initial value");

  std::vector<std::size_t> above;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (values[i] > opts.floor && std::isfinite(values[i]))
      above.push_back(i);
  const auto skip = static_cast<std::size_t>(std::floor((1.0 - opts.fraction) * static_cast<double>(above.size())));
  if (above.size() - skip < 10)
    throw InsufficientDecay("fit_rate: fewer than 10 samples above the floor in the fit window");

  double st = 0, sy = 0;
  const auto m = static_cast<double>(above.size() - skip);
  for (std::size_t j = skip; j < above.size(); ++j) {
    st += times[above[j]];
    sy += std::log(values[above[j]]);
  }
  const double tm = st / m, ym = sy / m;
  double stt = 0, sty = 0, syy = 0;
  for (std::size_t j = skip; j < above.size(); ++j) {
    const double dt = times[above[j]] - tm;
    const double dy = std::log(values[above[j]]) - ym;
    stt += dt * dt;
    sty += dt * dy;
    syy += dy * dy;
  }
  if (!(stt > 0.0))
    throw InsufficientDecay("fit_rate: degenerate time window");
  RateFit fit;
  const double b = sty / stt;
  fit.slope = -b;
  fit.intercept = ym - b * tm;
  fit.r_squared = syy > 0.0 ? std::clamp(sty * sty / (stt * syy), 0.0, 1.0) : 1.0;
  fit.t_lo = times[above[skip]];
  fit.t_hi = times[above.back()];
  fit.points = above.size() - skip;
  fit.flagged = fit.r_squared < opts.min_r2;
  return fit;
}

RateFit fit_rate(const Trajectory &traj, const FitOptions &opts) {
  return fit_rate(traj.times, traj.kl_values, opts);
}

// ---------------------------------------------------------------------------
// Rate bounds

RateBounds rate_bounds(BoundLoss loss, const SimplexPointd &q, const SimplexPointd &p0, long samples,
                       std::uint64_t seed, const std::vector<Vector> &extra_states) {
  require_same_dim("rate_bounds", q.dim(), p0.dim());
  if (samples < 1)
    throw DomainError("rate_bounds: samples must be positive");
  const Index n = q.dim();
  const double level = kl(q, p0);
  const EtaCoordd eq = to_eta(q);

  RateBounds out{std::numeric_limits<double>::infinity(), 0.0};
  auto visit = [&](const SimplexPointd &p) {
    if (kl(q, p) > level * (1.0 + 1e-12) + 1e-15)
      return;
    if (loss == BoundLoss::Lq_eta) {
      const auto ed = eigh(hess_Lq_eta(to_eta(p), eq));
      out.m_lo = std::min(out.m_lo, ed.values[0]);
      out.l_hi = std::max(out.l_hi, ed.values[n - 1]);
    } else {
      const auto ed = eigh(hess_psi(to_theta(p)));
      out.m_lo = std::min(out.m_lo, ed.values[0]);
      out.l_hi = std::max(out.l_hi, ed.values[n - 1]);
    }
  };
  auto visit_vector = [&](const Vector &probs) {
    if ((probs.array() > kMinProbability).all())
      visit(SimplexPointd(probs / probs.sum()));
  };

  visit(q);
  visit(p0);
  CounterRng rng = CounterRng(seed).derive(kBoundStream);
  if (n == 2) {
    // Barycentric grid with about `samples` interior points.
    const long g = std::max(3L, std::lround(std::sqrt(2.0 * static_cast<double>(samples))));
    for (long i = 1; i < g; ++i)
      for (long j = 1; i + j < g; ++j)
        visit_vector(Vector{{double(i) / double(g), double(j) / double(g), double(g - i - j) / double(g)}});
  } else {
    for (long s = 0; s < samples; ++s)
      visit(random_simplex_point(n, rng));
  }
  // Chords from the optimum toward random points and toward p0, straight in
  // the chart of the loss, where the sublevel set is convex.
  const long chords = std::max(1L, samples / 4);
  for (long s = 0; s < chords; ++s) {
    const SimplexPointd r = s % 4 == 0 ? p0 : random_simplex_point(n, rng);
    const double t = rng.uniform();
    if (loss == BoundLoss::Lq_eta) {
      visit_vector((1.0 - t) * q.probs() + t * r.probs());
    } else {
      const Vector th = (1.0 - t) * to_theta(q).values() + t * to_theta(r).values();
      visit(to_simplex(ThetaCoordd(th)));
    }
  }
  for (const Vector &x : extra_states) {
    try {
      visit(loss == BoundLoss::Lq_eta ? to_simplex(EtaCoordd(x)) : to_simplex(ThetaCoordd(x)));
    } catch (const Error &) {
    }
  }
  if (level <= 0.0)
    return out;

  // Rays from the optimum in the chart of the loss. L_q is convex in either
  // chart, so each ray leaves the sublevel set exactly once; (u, s) names the
  // point at fraction s of the way to that exit.
  const bool eta_chart = loss == BoundLoss::Lq_eta;
  const Vector origin = eta_chart ? eq.values() : to_theta(q).values();
  auto at = [&](const Vector &x) -> std::optional<SimplexPointd> {
    if (eta_chart) {
      if (!EtaCoordd::is_valid(x))
        return std::nullopt;
      return to_simplex(EtaCoordd(x));
    }
    if (!x.allFinite())
      return std::nullopt;
    return to_simplex(ThetaCoordd(x));
  };
  auto inside = [&](const Vector &x) {
    const auto p = at(x);
    return p && (p->probs().array() > kMinProbability).all() && kl(q, *p) <= level;
  };
  auto exit_distance = [&](const Vector &u) {
    double lo = 0.0, hi = 1e-3;
    while (inside(origin + hi * u) && hi < 1e6) {
      lo = hi;
      hi *= 2.0;
    }
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      (inside(origin + mid * u) ? lo : hi) = mid;
    }
    return lo;
  };
  // Objective to maximize: -lambda_min for the eta loss, lambda_max for theta.
  auto score = [&](const Vector &u, double s) {
    const auto p = at(origin + s * exit_distance(u) * u);
    if (!p || (p->probs().array() <= kMinProbability).any())
      return -std::numeric_limits<double>::infinity();
    visit(*p);
    const auto ed = eta_chart ? eigh(hess_Lq_eta(to_eta(*p), eq)) : eigh(hess_psi(to_theta(*p)));
    return eta_chart ? -ed.values[0] : ed.values[n - 1];
  };

  struct Candidate {
    Vector u;
    double s;
    double value;
  };
  std::vector<Candidate> pool;
  const long rays = std::max(8L, samples / 10);
  for (long r = 0; r < rays; ++r) {
    Vector u = gaussian_noise(n, rng);
    u.normalize();
    for (double s : {0.5, 1.0})
      pool.push_back({u, s, score(u, s)});
  }
  std::sort(pool.begin(), pool.end(), [](const Candidate &a, const Candidate &b) { return a.value > b.value; });
  pool.resize(std::min<std::size_t>(pool.size(), 4));

  // Pattern search from the best rays; it settles on a local extremum so the
  // bound no longer depends on how densely the set was sampled.
  for (Candidate c : pool) {
    double sigma = 0.3;
    for (int it = 0; it < 400 && sigma > 1e-4; ++it) {
      Vector u = c.u + sigma * gaussian_noise(n, rng);
      u.normalize();
      const double s = std::clamp(c.s + sigma * (rng.uniform() - 0.5), 0.0, 1.0);
      const double v = score(u, s);
      if (v > c.value) {
        c = {u, s, v};
        sigma *= 1.5;
      } else {
        sigma *= 0.93;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output

bool ExperimentResult::all_passed() const {
  return std::all_of(assertions.begin(), assertions.end(), [](const Assertion &a) { return a.passed; });
}

double ExperimentResult::summary_value(const std::string &key) const {
  for (const auto &[k, v] : summary)
    if (k == key)
      return v;
  throw DomainError("summary has no key '" + key + "'");
}

std::string format_number(double x) {
  if (std::isnan(x))
    return "nan";
  if (std::isinf(x))
    return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

std::string to_csv(const ExperimentResult &result) {
  std::ostringstream out;
  for (std::size_t i = 0; i < result.columns.size(); ++i)
    out << (i ? "," : "") << result.columns[i];
  out << '\n';
  for (const auto &row : result.rows) {
    for (std::size_t i = 0; i < row.size(); ++i)
      out << (i ? "," : "") << format_number(row[i]);
    out << '\n';
  }
  return out.str();
}

std::string to_json(const ExperimentResult &result) {
  using nlohmann::ordered_json;
  auto number = [](double x) -> ordered_json {
    if (!std::isfinite(x))
      return nullptr;
    return std::stod(format_number(x));
  };
  ordered_json j;
  j["experiment"] = result.name;
  j["seed"] = result.seed;
  ordered_json config = ordered_json::object();
  for (const auto &[k, v] : result.config)
    config[k] = v;
  j["config"] = config;
  ordered_json summary = ordered_json::object();
  for (const auto &[k, v] : result.summary)
    summary[k] = number(v);
  j["summary"] = summary;
  ordered_json assertions = ordered_json::array();
  for (const auto &a : result.assertions)
    assertions.push_back({{"name", a.name}, {"passed", a.passed}, {"detail", a.detail}});
  j["assertions"] = assertions;
  j["passed"] = result.all_passed();
  return j.dump(2) + "\n";
}

void write_outputs(const ExperimentResult &result, const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  auto write = [](const std::filesystem::path &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
      throw Error("cannot write '" + path.string() + "'");
    out << text;
  };
  write(dir / (result.name + ".csv"), to_csv(result));
  write(dir / (result.name + ".json"), to_json(result));
}

unsigned worker_count() {
  if (const char *env = std::getenv("SIMPLEX_FLOWS_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0)
      return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

SimplexPointd near_optimum_init(const SimplexPointd &q, double max_kl, CounterRng &rng) {
  const SimplexPointd r = random_simplex_point(q.dim(), rng);
  double s = 1.0;
  for (int i = 0; i < 200; ++i) {
    const SimplexPointd p(q.probs() + s * (r.probs() - q.probs()));
    if (kl(q, p) <= max_kl)
      return p;
    s *= 0.8;
  }
  throw DomainError("near_optimum_init: could not reach the requested KL");
}

// ---------------------------------------------------------------------------
// Sandwich

ExperimentResult sandwich_experiment(const RunConfig &cfg) {
  const Index n = cfg.get_long("n");
  const std::uint64_t seed = cfg.get_seed();
  const auto inits = static_cast<std::size_t>(cfg.get_long("inits"));
  const double dt = cfg.get_double("dt");
  const double dt_theta = cfg.get_double("dt_theta");
  const double t_cap = cfg.get_double("t_end");
  const double t_cap_theta = cfg.get_double("t_max_theta");
  const double stop = cfg.get_double("stop_below");
  const long samples = cfg.get_long("samples_per_fit");
  const long bound_samples = cfg.get_long("bound_samples");
  const FitOptions fo = fit_options(cfg);

  const SimplexPointd q = random_target(n, seed);
  const EtaCoordd eq = to_eta(q);
  const double rate_eta_opt = 2.0 * min_eig(hess_phi(eq));
  const double rate_theta_opt = 2.0 * min_eig(hess_psi(to_theta(q)));

  struct Row {
    bool excluded = false;
    RateFit eta, ng, theta;
    RateBounds b_eta, b_theta;
    double exact_err = 0.0;
    double kl0 = 0.0;
  };

  const std::function<Row(std::size_t)> work = [&](std::size_t i) {
    Row row;
    const SimplexPointd p0 = random_init(n, seed, i);
    row.kl0 = kl(q, p0);
    const Trajectory te = run_flow({Loss::Lq, FlowChart::eta, q, p0, std::nullopt}, dt, t_cap, stop,
                                   rate_eta_opt, samples);
    const Trajectory tn = run_flow({Loss::Lq, FlowChart::natural_eta, q, p0, std::nullopt}, dt, t_cap,
                                   stop, 2.0, samples);
    const Trajectory tt = run_flow({Loss::Lq, FlowChart::theta, q, p0, std::nullopt}, dt_theta,
                                   t_cap_theta, stop, rate_theta_opt, samples);
    try {
      row.eta = fit_rate(te, fo);
      row.ng = fit_rate(tn, fo);
      row.theta = fit_rate(tt, fo);
    } catch (const InsufficientDecay &) {
      row.excluded = true;
      return row;
    }
    for (std::size_t k = 0; k < tn.size(); ++k) {
      const EtaCoordd exact = natural_flow_exact(eq, to_eta(p0), tn.times[k]);
      row.exact_err = std::max(row.exact_err, (tn.states[k] - exact.values()).cwiseAbs().maxCoeff());
    }
    row.b_eta = rate_bounds(BoundLoss::Lq_eta, q, p0, bound_samples, seed + i, te.states);
    row.b_theta = rate_bounds(BoundLoss::Lq_theta, q, p0, bound_samples, seed + i, tt.states);
    return row;
  };
  const std::vector<Row> rows = parallel_map<Row>(inits, work);

  ExperimentResult r;
  r.name = "sandwich_n" + std::to_string(n);
  r.seed = seed;
  echo(r, cfg, {"n", "seed", "inits", "dt", "dt_theta", "t_end", "t_max_theta", "stop_below",
                "fit_fraction", "fit_floor", "min_r2", "ng_rate_tol", "bound_samples", "bound_slack",
                "exact_tol"});
  r.columns = {"init_id", "rate_eta", "rate_ng", "rate_theta", "r2_eta", "r2_ng", "r2_theta",
               "bound_eta_lo", "bound_theta_hi", "natural_exact_err", "kl0"};

  const double ng_tol = cfg.get_double("ng_rate_tol");
  const double slack = cfg.get_double("bound_slack");
  std::size_t used = 0, ordered = 0, good_r2 = 0, eta_bounded = 0, theta_bounded = 0;
  double max_exact = 0.0, min_ng = 1e300, max_ng = -1e300;
  double sum_eta = 0, sum_ng = 0, sum_theta = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Row &w = rows[i];
    if (w.excluded) {
      r.rows.push_back({double(i), kNaN, kNaN, kNaN, kNaN, kNaN, kNaN, kNaN, kNaN, kNaN, w.kl0});
      continue;
    }
    ++used;
    const double re = w.eta.slope, rn = w.ng.slope, rt = w.theta.slope;
    ordered += (rt < 2.0 && 2.0 < re && std::abs(rn - 2.0) <= ng_tol) ? 1 : 0;
    good_r2 += (!w.eta.flagged && !w.ng.flagged && !w.theta.flagged) ? 1 : 0;
    eta_bounded += re >= (1.0 - slack) * w.b_eta.rate_lo() ? 1 : 0;
    theta_bounded += rt <= (1.0 + slack) * w.b_theta.rate_hi() ? 1 : 0;
    max_exact = std::max(max_exact, w.exact_err);
    min_ng = std::min(min_ng, rn);
    max_ng = std::max(max_ng, rn);
    sum_eta += re;
    sum_ng += rn;
    sum_theta += rt;
    r.rows.push_back({double(i), re, rn, rt, w.eta.r_squared, w.ng.r_squared, w.theta.r_squared,
                      w.b_eta.rate_lo(), w.b_theta.rate_hi(), w.exact_err, w.kl0});
  }
  const double u = used ? double(used) : kNaN;
  r.summary = {{"inits", double(inits)},
               {"used", double(used)},
               {"ordered", double(ordered)},
               {"good_r2", double(good_r2)},
               {"eta_bounded", double(eta_bounded)},
               {"theta_bounded", double(theta_bounded)},
               {"mean_rate_eta", sum_eta / u},
               {"mean_rate_ng", sum_ng / u},
               {"mean_rate_theta", sum_theta / u},
               {"min_rate_ng", min_ng},
               {"max_rate_ng", max_ng},
               {"max_natural_exact_err", max_exact}};
  const std::string of = " of " + std::to_string(used);
  check(r, "used_all_inits", used == inits, std::to_string(used) + " of " + std::to_string(inits));
  check(r, "ordering", used > 0 && ordered == used, std::to_string(ordered) + of);
  check(r, "r_squared", used > 0 && good_r2 == used, std::to_string(good_r2) + of);
  check(r, "eta_rate_lower_bound", used > 0 && eta_bounded == used, std::to_string(eta_bounded) + of);
  check(r, "theta_rate_upper_bound", used > 0 && theta_bounded == used,
        std::to_string(theta_bounded) + of);
  check(r, "natural_exact", max_exact <= cfg.get_double("exact_tol"),
        "max abs error " + format_number(max_exact));
  return r;
}

// ---------------------------------------------------------------------------
// Affine charts

ExperimentResult affine_rate_experiment(const RunConfig &cfg) {
  const Index n = cfg.get_long("n");
  const std::uint64_t seed = cfg.get_seed();
  const std::vector<double> cs = cfg.get_list("c_values");
  const double dt = cfg.get_double("dt");
  const double t_cap = cfg.get_double("t_max_theta");
  const double stop = cfg.get_double("stop_below");
  const long samples = cfg.get_long("samples_per_fit");
  const double rel = cfg.get_double("affine_rel_tol");
  const FitOptions fo = fit_options(cfg);

  const SimplexPointd q = random_target(n, seed);
  CounterRng rng = CounterRng(seed).derive(kInitStream);
  const SimplexPointd p0 = near_optimum_init(q, cfg.get_double("near_kl"), rng);
  const ThetaCoordd tq = to_theta(q);
  const SymMatrixd h_phi = hess_phi(to_eta(q));
  const SymMatrixd h_psi = hess_psi(tq);

  struct Row {
    RateFit eta, theta;
    double hess_eta_err = 0.0, hess_theta_err = 0.0;
  };
  const std::function<Row(std::size_t)> work = [&](std::size_t i) {
    const double c = cs[i];
    if (!(c > 0.0))
      throw ConfigError("c_values: entries must be positive");
    const AffineChartd chart = make_identity_chart(tq, c);
    Row row;
    const Matrix id = Matrix::Identity(n, n);
    row.hess_eta_err = (chart.eta_hessian_bar(h_phi.matrix()) - c * id).cwiseAbs().maxCoeff();
    row.hess_theta_err = (chart.theta_hessian_bar(h_psi.matrix()) - id / c).cwiseAbs().maxCoeff();
    const Trajectory te = run_flow({Loss::Lq, FlowChart::affine_eta, q, p0, chart},
                                   std::min(dt, 0.1 / c), t_cap, stop, 2.0 * c, samples);
    const Trajectory tt = run_flow({Loss::Lq, FlowChart::affine_theta, q, p0, chart},
                                   std::min(dt, 0.1 * c), t_cap, stop, 2.0 / c, samples);
    row.eta = fit_rate(te, fo);
    row.theta = fit_rate(tt, fo);
    return row;
  };
  const std::vector<Row> rows = parallel_map<Row>(cs.size(), work);

  ExperimentResult r;
  r.name = "affine_n" + std::to_string(n);
  r.seed = seed;
  echo(r, cfg, {"n", "seed", "c_values", "dt", "near_kl", "stop_below", "fit_fraction", "fit_floor",
                "min_r2", "affine_rel_tol"});
  r.columns = {"c", "rate_eta_bar", "expected_eta_bar", "rate_theta_bar", "expected_theta_bar",
               "r2_eta_bar", "r2_theta_bar", "hess_eta_err", "hess_theta_err"};
  double worst_rel = 0.0, worst_hess = 0.0;
  bool r2_ok = true;
  for (std::size_t i = 0; i < cs.size(); ++i) {
    const double c = cs[i];
    const Row &w = rows[i];
    worst_rel = std::max({worst_rel, std::abs(w.eta.slope - 2.0 * c) / (2.0 * c),
                          std::abs(w.theta.slope - 2.0 / c) / (2.0 / c)});
    worst_hess = std::max({worst_hess, w.hess_eta_err, w.hess_theta_err});
    r2_ok = r2_ok && !w.eta.flagged && !w.theta.flagged;
    r.rows.push_back({c, w.eta.slope, 2.0 * c, w.theta.slope, 2.0 / c, w.eta.r_squared,
                      w.theta.r_squared, w.hess_eta_err, w.hess_theta_err});
  }
  r.summary = {{"kl0", kl(q, p0)}, {"worst_rel_rate_err", worst_rel}, {"worst_hessian_err", worst_hess}};
  check(r, "rates", worst_rel <= rel, "worst relative error " + format_number(worst_rel));
  check(r, "hessians", worst_hess <= 1e-10, "worst abs error " + format_number(worst_hess));
  check(r, "r_squared", r2_ok, r2_ok ? "all fits" : "some fits below min_r2");
  return r;
}

// ---------------------------------------------------------------------------
// Empirical

namespace {

struct EmpiricalSetup {
  SimplexPointd q;
  Dataset data;
};

EmpiricalSetup empirical_setup(Index n, std::uint64_t seed, long samples) {
  const SimplexPointd q = random_target(n, seed);
  CounterRng rng = CounterRng(seed).derive(kDataStream);
  // Resample until every outcome is observed.
  for (int attempt = 0; attempt < 100; ++attempt) {
    Dataset d = sample_dataset(q, samples, rng.next_u64());
    if (std::all_of(d.counts().begin(), d.counts().end(), [](long c) { return c > 0; }))
      return {q, std::move(d)};
  }
  throw ZeroCount("empirical setup: every dataset had an unobserved outcome; increase samples");
}

Trajectory try_run(const Dataset &data, const EmpiricalSpec &spec, const Batch &batch,
                   const std::optional<SgdSchedule> &schedule) {
  try {
    return run_empirical(data, spec, batch, schedule);
  } catch (const BoundaryEscape &) {
  } catch (const NonFinite &) {
  } catch (const DomainError &) {
  }
  return {};
}

} // namespace

GridSpec sweep_grid(const RunConfig &cfg) {
  if (cfg.get("grid") != "auto")
    return cfg.get_grid("grid");
  switch (method_from_string(cfg.get("method"))) {
  case Method::gd_eta:
    return {1e-4, 1e-2, 100};
  case Method::gd_theta:
    return {0.5, 40.0, 80};
  case Method::ngd:
    break;
  }
  return {0.1, 1.7, 100};
}

double sweep_tolerance(const RunConfig &cfg) {
  if (cfg.get("tol") != "auto")
    return cfg.get_double("tol");
  return cfg.get("mode") == "sgd" ? 1e-2 : 1e-4;
}

ExperimentResult lr_sweep(const RunConfig &cfg) {
  const Index n = cfg.get_long("n");
  const std::uint64_t seed = cfg.get_seed();
  const auto inits = static_cast<std::size_t>(cfg.get_long("inits"));
  const Method method = method_from_string(cfg.get("method"));
  const bool sgd = cfg.get("mode") == "sgd";
  const GridSpec grid_spec = sweep_grid(cfg);
  const std::vector<double> grid = grid_spec.values();
  const long max_iters = cfg.get_long("max_iters");
  const double tol = sweep_tolerance(cfg);
  const long minibatch = cfg.get_long("minibatch");
  const double decay_a = cfg.get_double("decay_a");

  const EmpiricalSetup setup = empirical_setup(n, seed, cfg.get_long("samples"));
  std::vector<SimplexPointd> p0s;
  for (std::size_t i = 0; i < inits; ++i)
    p0s.push_back(random_init(n, seed, i));

  const std::function<long(std::size_t)> work = [&](std::size_t g) {
    std::vector<Trajectory> trajs;
    for (std::size_t i = 0; i < inits; ++i) {
      const EmpiricalSpec spec{method, setup.q, p0s[i], grid[g], max_iters, tol};
      const Batch batch = sgd ? Batch::minibatch(minibatch, CounterRng(seed).derive(kBatchStream + i).next_u64())
                              : Batch::full();
      const std::optional<SgdSchedule> schedule =
          sgd ? std::optional<SgdSchedule>(SgdSchedule{grid[g], decay_a}) : std::nullopt;
      trajs.push_back(try_run(setup.data, spec, batch, schedule));
    }
    return convergence_time(trajs, tol, max_iters);
  };
  const std::vector<long> times = parallel_map<long>(grid.size(), work);

  ExperimentResult r;
  r.name = "sweep_" + to_string(method) + "_" + cfg.get("mode") + "_n" + std::to_string(n);
  r.seed = seed;
  echo(r, cfg, {"n", "seed", "inits", "method", "mode", "samples", "minibatch", "decay_a", "max_iters"});
  r.config.emplace_back("grid", format_number(grid_spec.lo) + ":" + format_number(grid_spec.hi) + ":" +
                                    std::to_string(grid_spec.count));
  r.config.emplace_back("tol", format_number(tol));
  r.columns = {"learning_rate", "convergence_time"};
  long best = max_iters + 1;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    r.rows.push_back({grid[g], double(times[g])});
    best = std::min(best, times[g]);
  }
  double lo = kNaN, hi = kNaN;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (times[g] == best) {
      lo = std::isnan(lo) ? grid[g] : lo;
      hi = grid[g];
    }
  }
  r.summary = {{"best_time", double(best)}, {"best_lr_lo", lo}, {"best_lr_hi", hi},
               {"kl_truth_to_empirical", kl(setup.q, empirical_target(setup.data))}};
  check(r, "converged", best < max_iters,
        "best time " + std::to_string(best) + " at lr in [" + format_number(lo) + ", " + format_number(hi) + "]");
  return r;
}

ExperimentResult empirical_sandwich(const RunConfig &cfg) {
  const Index n = cfg.get_long("n");
  const std::uint64_t seed = cfg.get_seed();
  const auto inits = static_cast<std::size_t>(cfg.get_long("inits"));
  const long max_iters = cfg.get_long("max_iters");
  const double base_lr = cfg.get_double("small_lr");
  const long from = cfg.get_long("sandwich_from");
  constexpr int kMaxHalvings = 40;

  const EmpiricalSetup setup = empirical_setup(n, seed, cfg.get_long("samples"));
  struct Row {
    double lr = 0;
    bool interior = false;
    long violations = 0;
    double kl_eta = 0, kl_ng = 0, kl_theta = 0;
  };
  // Near the boundary the eta gradient is of order q_i / p_i, so what counts
  // as a small rate depends on the init: the shared rate is halved until all
  // three methods stay inside the simplex.
  const std::function<Row(std::size_t)> work = [&](std::size_t i) {
    const SimplexPointd p0 = random_init(n, seed, i);
    Row row;
    row.lr = base_lr;
    for (int halvings = 0; halvings <= kMaxHalvings; ++halvings, row.lr /= 2.0) {
      auto run = [&](Method m) {
        return run_empirical(setup.data, EmpiricalSpec{m, setup.q, p0, row.lr, max_iters, 0.0}, Batch::full());
      };
      try {
        const Trajectory e = run(Method::gd_eta), g = run(Method::ngd), t = run(Method::gd_theta);
        row.interior = true;
        for (long k = from; k <= max_iters; ++k) {
          const auto K = static_cast<std::size_t>(k);
          if (!(e.kl_values[K] <= g.kl_values[K] && g.kl_values[K] <= t.kl_values[K]))
            ++row.violations;
        }
        row.kl_eta = e.kl_values.back();
        row.kl_ng = g.kl_values.back();
        row.kl_theta = t.kl_values.back();
        return row;
      } catch (const BoundaryEscape &) {
      } catch (const NonFinite &) {
      }
    }
    return row;
  };
  const std::vector<Row> rows = parallel_map<Row>(inits, work);

  ExperimentResult r;
  r.name = "empirical_sandwich_n" + std::to_string(n);
  r.seed = seed;
  echo(r, cfg, {"n", "seed", "inits", "samples", "small_lr", "max_iters", "sandwich_from"});
  r.columns = {"init_id", "learning_rate", "final_kl_eta", "final_kl_ng", "final_kl_theta", "violations"};
  long total = 0, interior = 0, reduced = 0;
  double min_lr = base_lr;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Row &w = rows[i];
    r.rows.push_back({double(i), w.interior ? w.lr : kNaN, w.kl_eta, w.kl_ng, w.kl_theta, double(w.violations)});
    total += w.violations;
    interior += w.interior ? 1 : 0;
    if (w.interior && w.lr < base_lr) {
      ++reduced;
      min_lr = std::min(min_lr, w.lr);
    }
  }
  r.summary = {{"violations", double(total)}, {"interior", double(interior)},
               {"reduced_rate_inits", double(reduced)}, {"min_learning_rate", min_lr}};
  check(r, "all_inits_interior", interior == static_cast<long>(rows.size()),
        std::to_string(interior) + " of " + std::to_string(rows.size()) + ", " + std::to_string(reduced) +
            " needed a rate below " + format_number(base_lr));
  check(r, "sandwich_ordering", total == 0,
        std::to_string(total) + " (init, k) pairs out of order for k >= " + std::to_string(from));
  return r;
}

// ---------------------------------------------------------------------------
// Robustness

namespace {

/// Random matrix scaled to spectral norm `norm`.
Matrix random_perturbation(Index n, double norm, CounterRng &rng) {
  Matrix d(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      d(i, j) = rng.normal();
  return d * (norm / spectral_norm(d));
}

} // namespace

ExperimentResult robustness_experiment(const RunConfig &cfg) {
  const std::uint64_t seed = cfg.get_seed();
  const SimplexPointd q = point_from_list(cfg.get_list("robust_q"), "robust_q");
  const Index n = q.dim();
  const std::string kind = cfg.get("kind");
  const bool mult = kind != "additive";
  const bool add = kind != "multiplicative";

  ExperimentResult r;
  r.name = "robustness_" + kind;
  r.seed = seed;
  echo(r, cfg, {"seed", "robust_q", "kind", "delta_norm", "robust_seeds", "robust_iters", "mc_steps",
                "burn_in", "cov_tol", "ngd_cov_tol"});
  r.columns = {"case", "method", "alpha", "kappa", "metric", "value", "reference"};

  if (mult) {
    // Natural gradient under random per-step perturbations of fixed norm.
    const double norm = cfg.get_double("delta_norm");
    const auto seeds = static_cast<std::size_t>(cfg.get_long("robust_seeds"));
    const long iters = cfg.get_long("robust_iters");
    const std::function<std::pair<double, bool>(std::size_t)> work = [&](std::size_t s) {
      CounterRng rng = CounterRng(seed).derive(10 + s);
      const SimplexPointd p0 = random_simplex_point(n, rng);
      CounterRng noise = rng.derive(1);
      std::vector<Matrix> deltas;
      for (long k = 0; k < iters; ++k)
        deltas.push_back(random_perturbation(n, norm, noise));
      DescentSpec spec{Method::ngd, Variant::linearized, q, p0, 1.0,
                       NoiseModel::multiplicative([deltas](long k) { return deltas[static_cast<std::size_t>(k)]; }),
                       iters, 0.0, std::nullopt};
      Descent d(spec);
      Vector e = d.initial_state() - d.optimum();
      const double e0 = e.norm();
      bool envelope = true;
      for (long k = 0; k < iters; ++k) {
        e = d.step_error(e, k);
        envelope = envelope && e.norm() <= std::pow(norm, double(k + 1)) * e0 * (1.0 + 1e-9) + 1e-300;
      }
      return std::make_pair(e.norm(), envelope);
    };
    const auto res = parallel_map<std::pair<double, bool>>(seeds, work);
    double worst = 0.0;
    bool envelope = true;
    for (std::size_t s = 0; s < res.size(); ++s) {
      worst = std::max(worst, res[s].first);
      envelope = envelope && res[s].second;
      r.rows.push_back({0, 2, 1.0, 1.0, double(s), res[s].first, 1e-8});
    }
    r.summary.emplace_back("ngd_worst_final_error", worst);
    check(r, "ngd_stable_under_perturbation", worst < 1e-8 && envelope,
          "worst final error " + format_number(worst) + (envelope ? ", envelope holds" : ", envelope violated"));

    // Gradient descent under the constructed perturbation.
    for (Method m : {Method::gd_eta, Method::gd_theta}) {
      const SymMatrixd qh = linearized_hessian(m, q);
      const double alpha = optimal_lr(qh, LrRule::optimal);
      const Matrix delta = destabilizing_delta(qh);
      const double kappa = cond(qh);
      const Matrix mm = Matrix::Identity(n, n) - alpha * (Matrix::Identity(n, n) + delta) * qh.matrix();
      const auto ed = eigh(SymMatrixd(0.5 * (mm + mm.transpose())));
      double dist = 1e300;
      Index arg = 0;
      for (Index i = 0; i < n; ++i)
        if (std::abs(ed.values[i] + 1.0) < dist) {
          dist = std::abs(ed.values[i] + 1.0);
          arg = i;
        }
      const double asym = (mm - mm.transpose()).cwiseAbs().maxCoeff();
      DescentSpec spec{m, Variant::linearized, q, q, alpha, NoiseModel::multiplicative(delta),
                       cfg.get_long("robust_iters"), 0.0, std::nullopt};
      Descent d(spec);
      Vector e = 0.1 * ed.vectors.col(arg);
      const double e0 = e.norm();
      double min_norm = e0;
      for (long k = 0; k < spec.max_iters; ++k) {
        e = d.step_error(e, k);
        min_norm = std::min(min_norm, e.norm());
      }
      const double code = m == Method::gd_eta ? 0 : 1;
      r.rows.push_back({1, code, alpha, kappa, 0, dist, 0});
      r.rows.push_back({1, code, alpha, kappa, 1, min_norm / e0, 0.5});
      r.rows.push_back({1, code, alpha, kappa, 2, spectral_norm(delta), 1.0 / kappa});
      const std::string tag = to_string(m);
      check(r, tag + "_eigenvalue_minus_one", dist < 1e-10 && asym < 1e-10,
            "|lambda + 1| = " + format_number(dist));
      check(r, tag + "_delta_norm", std::abs(spectral_norm(delta) - 1.0 / kappa) < 1e-10,
            "||Delta|| = " + format_number(spectral_norm(delta)) + ", 1/kappa = " + format_number(1.0 / kappa));
      check(r, tag + "_not_convergent", min_norm >= 0.5 * e0,
            "min ||e(k)|| / ||e(0)|| = " + format_number(min_norm / e0));
    }
  }

  if (add) {
    const long steps = cfg.get_long("mc_steps");
    const long burn = cfg.get_long("burn_in");
    const double tol = cfg.get_double("cov_tol");
    const std::vector<Method> methods{Method::gd_eta, Method::gd_theta, Method::ngd};
    struct Cov {
      SymMatrixd sigma;
      SymMatrixd p;
      double alpha, kappa;
    };
    const std::function<Cov(std::size_t)> work = [&](std::size_t i) {
      const Method m = methods[i];
      const SymMatrixd qh = linearized_hessian(m, q);
      const double alpha = m == Method::ngd ? 1.0 : optimal_lr(qh, LrRule::optimal);
      return Cov{steady_state_covariance(m, q, alpha, burn, steps, CounterRng(seed).derive(100 + i).next_u64()),
                 solve_lyapunov(qh, alpha), alpha, cond(qh)};
    };
    const auto res = parallel_map<Cov>(methods.size(), work);
    for (std::size_t i = 0; i < methods.size(); ++i) {
      const Method m = methods[i];
      const Cov &c = res[i];
      const std::string tag = to_string(m);
      const Matrix &P = c.p.matrix();
      const Matrix &S = c.sigma.matrix();
      const Matrix id = Matrix::Identity(n, n);
      const Matrix mm = id - c.alpha * linearized_hessian(m, q).matrix();
      const double residual = (mm * P * mm.transpose() + id - P).cwiseAbs().maxCoeff();
      double worst = 0.0;
      for (Index a = 0; a < n; ++a)
        for (Index b = 0; b < n; ++b)
          worst = std::max(worst, std::abs(S(a, b) - P(a, b)) / std::sqrt(P(a, a) * P(b, b)));
      const double lam_p = max_eig(c.p);
      const double lam_s = max_eig(c.sigma);
      const double formula = (c.kappa + 1) * (c.kappa + 1) / (4 * c.kappa);
      const double code = double(i);
      r.rows.push_back({2, code, c.alpha, c.kappa, 0, residual, 0});
      r.rows.push_back({2, code, c.alpha, c.kappa, 1, worst, 0});
      r.rows.push_back({2, code, c.alpha, c.kappa, 2, lam_s, lam_p});
      r.rows.push_back({2, code, c.alpha, c.kappa, 3, lam_p, formula});
      check(r, tag + "_lyapunov_residual", residual < 1e-10, format_number(residual));
      if (m == Method::ngd) {
        const double dev = (S - id).cwiseAbs().maxCoeff();
        check(r, "ngd_covariance_identity", dev <= cfg.get_double("ngd_cov_tol"),
              "max |Sigma - I| = " + format_number(dev));
      } else {
        check(r, tag + "_covariance_matches_lyapunov", worst <= tol,
              "max normalized entry error " + format_number(worst));
        check(r, tag + "_lambda_max_formula", std::abs(lam_p - formula) <= 1e-8 * formula,
              format_number(lam_p) + " vs " + format_number(formula));
        check(r, tag + "_lambda_max_monte_carlo", std::abs(lam_s - formula) <= tol * formula,
              format_number(lam_s) + " vs " + format_number(formula));
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Nonconvexity witness

Witness nonconvexity_witness(const std::function<double(const Vector &)> &f, const Vector &center,
                             double radius, long probes, std::uint64_t seed) {
  CounterRng rng(seed);
  const Index n = center.size();
  auto draw = [&] {
    Vector x(n);
    for (Index i = 0; i < n; ++i)
      x[i] = center[i] + radius * (2.0 * rng.uniform() - 1.0);
    return x;
  };
  for (long k = 1; k <= probes; ++k) {
    const Vector a = draw();
    const Vector b = draw();
    if ((a - b).norm() < 1e-9)
      continue;
    const double fa = f(a), fb = f(b);
    const double fm = f(0.5 * (a + b));
    const double level = std::max(fa, fb);
    if (fm > level + 1e-10 * (1.0 + std::abs(level)))
      return {a, b, fa, fb, fm, k};
  }
  throw WitnessNotFound("nonconvexity_witness: no midpoint violation in " + std::to_string(probes) +
                        " probes");
}

ExperimentResult nonconvexity_experiment(const RunConfig &cfg) {
  const std::uint64_t seed = cfg.get_seed();
  const SimplexPointd p = point_from_list(cfg.get_list("witness_p"), "witness_p");
  const long probes = cfg.get_long("probes");
  const double radius = cfg.get_double("probe_radius");
  const Vector center = to_theta(p).values();

  const auto lstar = [&](const Vector &th) { return kl(to_simplex(ThetaCoordd(th)), p); };
  const auto lq = [&](const Vector &th) { return kl(p, to_simplex(ThetaCoordd(th))); };

  ExperimentResult r;
  r.name = "nonconvexity";
  r.seed = seed;
  echo(r, cfg, {"seed", "witness_p", "probes", "probe_radius"});
  r.columns = {"loss", "found", "probes", "f_a", "f_b", "f_mid"};
  for (Index i = 0; i < p.dim(); ++i) {
    r.columns.push_back("theta_a_" + std::to_string(i + 1));
    r.columns.push_back("theta_b_" + std::to_string(i + 1));
  }
  auto record = [&](double code, const std::function<double(const Vector &)> &f, bool expect) {
    try {
      const Witness w = nonconvexity_witness(f, center, radius, probes, seed);
      std::vector<double> row{code, 1, double(w.probes), w.fa, w.fb, w.fmid};
      for (Index i = 0; i < p.dim(); ++i) {
        row.push_back(w.a[i]);
        row.push_back(w.b[i]);
      }
      r.rows.push_back(row);
      return expect;
    } catch (const WitnessNotFound &) {
      std::vector<double> row{code, 0, double(probes), kNaN, kNaN, kNaN};
      row.resize(r.columns.size(), kNaN);
      r.rows.push_back(row);
      return !expect;
    }
  };
  check(r, "Lstar_theta_witness_found", record(0, lstar, true), "search on KL(p_theta || p)");
  check(r, "Lq_theta_no_witness", record(1, lq, false), "search on KL(p || p_theta)");
  return r;
}

// ---------------------------------------------------------------------------
// Local sections

ExperimentResult local_sections(const RunConfig &cfg) {
  const Index n = cfg.get_long("n");
  const std::uint64_t seed = cfg.get_seed();
  const long dirs = cfg.get_long("directions");
  const double s_max = cfg.get_double("s_max");
  const long s_count = cfg.get_long("s_count");
  const double tol = cfg.get_double("section_tol");

  const SimplexPointd q = random_target(n, seed);
  const Vector eq = to_eta(q).values();
  const Vector tq = to_theta(q).values();
  CounterRng rng = CounterRng(seed).derive(kInitStream);

  ExperimentResult r;
  r.name = "sections_n" + std::to_string(n);
  r.seed = seed;
  echo(r, cfg, {"n", "seed", "directions", "s_max", "s_count", "section_tol"});
  r.columns = {"direction", "s", "eta_section", "theta_section", "reference"};
  long eta_bad = 0, theta_bad = 0, truncated = 0;
  for (long d = 0; d < dirs; ++d) {
    Vector v(n);
    if (n == 2) {
      const double a = 2.0 * std::numbers::pi * double(d) / double(dirs);
      v << std::cos(a), std::sin(a);
    } else {
      v = gaussian_noise(n, rng);
      v.normalize();
    }
    for (long j = 0; j < s_count; ++j) {
      const double s = s_count == 1 ? 0.0 : -s_max + 2.0 * s_max * double(j) / double(s_count - 1);
      const double ref = 0.5 * s * s;
      double fe = kNaN;
      const Vector e = eq + s * v;
      if (EtaCoordd::is_valid(e))
        fe = kl(q, to_simplex(EtaCoordd(e)));
      else
        ++truncated;
      const double ft = kl(q, to_simplex(ThetaCoordd(Vector(tq + s * v))));
      if (s != 0.0 && std::abs(s) <= 0.05) {
        if (!std::isnan(fe) && fe < ref * (1.0 - tol))
          ++eta_bad;
        if (ft > ref * (1.0 + tol))
          ++theta_bad;
      }
      r.rows.push_back({double(d), s, fe, ft, ref});
    }
  }
  r.summary = {{"truncated", double(truncated)}};
  check(r, "eta_sections_above_quadratic", eta_bad == 0, std::to_string(eta_bad) + " points below");
  check(r, "theta_sections_below_quadratic", theta_bad == 0, std::to_string(theta_bad) + " points above");
  return r;
}

ExperimentResult run_experiment(const std::string &name, const RunConfig &cfg) {
  if (name == "sandwich")
    return sandwich_experiment(cfg);
  if (name == "affine")
    return affine_rate_experiment(cfg);
  if (name == "sweep")
    return lr_sweep(cfg);
  if (name == "empirical")
    return empirical_sandwich(cfg);
  if (name == "robustness")
    return robustness_experiment(cfg);
  if (name == "nonconvexity")
    return nonconvexity_experiment(cfg);
  if (name == "sections")
    return local_sections(cfg);
  throw ConfigError("unknown experiment '" + name + "'");
}

} // namespace sflow
