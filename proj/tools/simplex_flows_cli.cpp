// simplex-flows: run experiments and one-shot utilities from the command line.
//
// Exit codes: 0 success, 1 assertion failure or runtime error, 2 usage error.

#include "simplex_flows/empirical.hpp"
#include "simplex_flows/geometry.hpp"
#include "simplex_flows/lab.hpp"
#include "simplex_flows/rng.hpp"
#include "simplex_flows/spectral.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace {

using namespace sflow;

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Vector parse_vector(const std::string &text) {
  std::vector<double> v;
  std::istringstream in(text);
  std::string field;
  while (std::getline(in, field, ',')) {
    std::size_t used = 0;
    double x = 0;
    try {
      x = std::stod(field, &used);
    } catch (const std::exception &) {
      throw UsageError("malformed number '" + field + "'");
    }
    if (used != field.size())
      throw UsageError("malformed number '" + field + "'");
    v.push_back(x);
  }
  if (v.empty())
    throw UsageError("empty vector");
  return Eigen::Map<Vector>(v.data(), static_cast<Index>(v.size()));
}

std::string join(const Vector &v) {
  std::string out;
  for (Index i = 0; i < v.size(); ++i)
    out += (i ? "," : "") + format_number(v[i]);
  return out;
}

/// Options shared by the experiment subcommands. Unset flags leave the
/// config value alone.
struct CommonFlags {
  std::optional<long> n, inits;
  std::optional<long> seed;
  std::optional<std::string> grid, mode, method, out, config;
  std::optional<double> tol;
  std::vector<std::string> sets;

  void attach(CLI::App *app) {
    app->add_option("--n", n, "dimension n (outcomes n+1)");
    app->add_option("--seed", seed, "random seed");
    app->add_option("--inits", inits, "number of random initializations");
    app->add_option("--grid", grid, "learning-rate grid lo:hi:count");
    app->add_option("--mode", mode, "full_batch or sgd");
    app->add_option("--method", method, "gd_eta, gd_theta or ngd");
    app->add_option("--tol", tol, "convergence tolerance on the loss gap");
    app->add_option("--out", out, "output directory");
    app->add_option("--config", config, "flat key = value config file");
    app->add_option("--set", sets, "override any config key: key=value (repeatable)");
  }

  RunConfig resolve() const {
    RunConfig cfg = config ? RunConfig::load(*config) : RunConfig();
    auto put = [&](const char *key, const auto &value) {
      if (value) {
        std::ostringstream s;
        s.precision(17);
        s << *value;
        cfg.set(key, s.str());
      }
    };
    for (const std::string &kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos)
        throw UsageError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    put("n", n);
    put("seed", seed);
    put("inits", inits);
    put("grid", grid);
    put("mode", mode);
    put("method", method);
    put("tol", tol);
    put("out", out);
    return cfg;
  }
};

int run_named(const std::string &name, const CommonFlags &flags) {
  const RunConfig cfg = flags.resolve();
  const ExperimentResult result = run_experiment(name, cfg);
  write_outputs(result, cfg.get("out"));
  std::cout << result.name << ": wrote " << cfg.get("out") << "/" << result.name << ".{csv,json}\n";
  for (const Assertion &a : result.assertions)
    std::cout << "  " << (a.passed ? "PASS " : "FAIL ") << a.name << "  (" << a.detail << ")\n";
  if (name == "sweep")
    std::cout << "  best time " << format_number(result.summary_value("best_time")) << " at lr in ["
              << format_number(result.summary_value("best_lr_lo")) << ", "
              << format_number(result.summary_value("best_lr_hi")) << "]\n";
  return result.all_passed() ? kOk : kFailed;
}

int cmd_convert(const std::optional<std::string> &p, const std::optional<std::string> &eta,
                const std::optional<std::string> &theta) {
  if (int(p.has_value()) + int(eta.has_value()) + int(theta.has_value()) != 1)
    throw UsageError("convert: give exactly one of --p, --eta, --theta");
  const SimplexPointd point = p ? SimplexPointd(parse_vector(*p))
                              : eta ? to_simplex(EtaCoordd(parse_vector(*eta)))
                                    : to_simplex(ThetaCoordd(parse_vector(*theta)));
  std::cout << "p = " << join(point.probs()) << "\n";
  std::cout << "eta = " << join(to_eta(point).values()) << "\n";
  std::cout << "theta = " << join(to_theta(point).values()) << "\n";
  return kOk;
}

int cmd_kl(const std::string &q, const std::string &p) {
  std::cout << format_number(kl(SimplexPointd(parse_vector(q)), SimplexPointd(parse_vector(p)))) << "\n";
  return kOk;
}

/// Reads "t,value" rows (an optional header line is skipped).
int cmd_fit_rate(const std::string &path, double min_r2) {
  std::ifstream in(path);
  if (!in)
    throw UsageError("fit-rate: cannot read '" + path + "'");
  std::vector<double> t, v;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty())
      continue;
    const auto comma = line.find(',');
    try {
      if (comma == std::string::npos)
        throw std::invalid_argument("no comma");
      const double a = std::stod(line.substr(0, comma));
      const double b = std::stod(line.substr(comma + 1));
      t.push_back(a);
      v.push_back(b);
    } catch (const std::exception &) {
      if (number == 1)
        continue;
      throw UsageError(path + ":" + std::to_string(number) + ": expected 't,value'");
    }
  }
  FitOptions fo;
  fo.min_r2 = min_r2;
  const RateFit fit = fit_rate(t, v, fo);
  std::cout << "slope = " << format_number(fit.slope) << "\n"
            << "intercept = " << format_number(fit.intercept) << "\n"
            << "r_squared = " << format_number(fit.r_squared) << "\n"
            << "window = " << format_number(fit.t_lo) << ":" << format_number(fit.t_hi) << "\n";
  return fit.flagged ? kFailed : kOk;
}

/// Fast property checks over random points.
int cmd_selftest(std::uint64_t seed) {
  CounterRng rng(seed);
  int failures = 0;
  auto report = [&](const std::string &name, bool ok, double value) {
    std::cout << (ok ? "PASS " : "FAIL ") << name << "  (" << format_number(value) << ")\n";
    failures += ok ? 0 : 1;
  };

  double conj = 0, inv = 0, trip = 0, breg = 0;
  for (Index n : {2, 10}) {
    for (int k = 0; k < 200; ++k) {
      const SimplexPointd p = random_simplex_point(n, rng);
      const SimplexPointd q = random_simplex_point(n, rng);
      const EtaCoordd e = to_eta(p);
      const ThetaCoordd t = theta_from_eta(e);
      conj = std::max(conj, std::abs(phi(e) + psi(t) - e.values().dot(t.values())));
      inv = std::max(inv, (hess_phi(e).matrix() * hess_psi(t).matrix() - Matrix::Identity(n, n))
                              .cwiseAbs()
                              .maxCoeff());
      trip = std::max(trip, (to_simplex(t).probs() - p.probs()).cwiseAbs().maxCoeff());
      breg = std::max(breg, std::abs(bregman_psi(to_theta(p), to_theta(q)) - kl(q, p)));
    }
  }
  report("fenchel_identity", conj < 1e-10, conj);
  report("inverse_hessians", inv < 1e-10, inv);
  report("chart_round_trip", trip < 1e-12, trip);
  report("bregman_equals_kl", breg < 1e-12, breg);

  const SymMatrixd q3(Matrix{{6, 3}, {3, 6}});
  const auto ed = eigh(q3);
  report("eigh_example", std::abs(ed.values[0] - 3) < 1e-12 && std::abs(ed.values[1] - 9) < 1e-12,
         ed.values[1]);
  const SymMatrixd pl = solve_lyapunov(q3, 2.0 / 12.0);
  report("lyapunov_lambda_max", std::abs(eigh(pl).values[1] - 4.0 / 3.0) < 1e-10, eigh(pl).values[1]);

  const SimplexPointd q = random_simplex_point(2, rng);
  const SimplexPointd p0 = random_simplex_point(2, rng);
  const Trajectory tr = integrate({Loss::Lq, FlowChart::natural_eta, q, p0, std::nullopt}, 2.0, 1e-3, 100);
  double err = 0;
  for (std::size_t k = 0; k < tr.size(); ++k)
    err = std::max(err, (tr.states[k] - natural_flow_exact(to_eta(q), to_eta(p0), tr.times[k]).values())
                            .cwiseAbs()
                            .maxCoeff());
  report("natural_flow_exact", err < 1e-8, err);
  report("flow_monotone", tr.kl_nonincreasing(), tr.kl_values.back());

  DescentSpec ngd{Method::ngd, Variant::linearized, q, p0, 1.0, NoiseModel::none(), 1, 0.0, std::nullopt};
  Descent d(ngd);
  const double one_step = (d.step(d.initial_state(), 0) - d.optimum()).cwiseAbs().maxCoeff();
  report("ngd_single_step", one_step < 1e-15, one_step);
  return failures == 0 ? kOk : kFailed;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Gradient and natural gradient flows of the KL divergence on the simplex"};
  app.require_subcommand(1);

  CommonFlags flags;
  const char *experiments[][2] = {
      {"sandwich", "fitted decay rates of the eta, natural and theta flows"},
      {"affine", "decay rates in barred affine charts"},
      {"sweep", "convergence time versus learning rate on the empirical loss"},
      {"robustness", "multiplicative and additive noise on linearized descent"},
      {"empirical", "full-batch descent with a small shared learning rate"},
      {"nonconvexity", "midpoint-violation witness for KL(p_theta || p)"},
      {"sections", "KL along lines through the optimum"},
  };
  std::string chosen;
  for (const auto &e : experiments) {
    CLI::App *sub = app.add_subcommand(e[0], e[1]);
    flags.attach(sub);
    sub->callback([&chosen, name = std::string(e[0])] { chosen = name; });
  }

  std::optional<std::string> cp, ceta, ctheta;
  CLI::App *convert = app.add_subcommand("convert", "convert between p, eta and theta");
  convert->add_option("--p", cp, "full probability vector");
  convert->add_option("--eta", ceta, "mixture coordinates");
  convert->add_option("--theta", ctheta, "exponential coordinates");

  std::string kq, kp;
  CLI::App *klc = app.add_subcommand("kl", "KL(q || p)");
  klc->add_option("--q", kq, "first argument")->required();
  klc->add_option("--p", kp, "second argument")->required();

  std::string fit_file;
  double fit_r2 = 0.99;
  CLI::App *fit = app.add_subcommand("fit-rate", "fit an exponential decay rate to t,value rows");
  fit->add_option("file", fit_file, "CSV file")->required();
  fit->add_option("--min-r2", fit_r2, "flag fits below this R^2");

  long self_seed = 7;
  CLI::App *self = app.add_subcommand("selftest", "fast property checks");
  self->add_option("--seed", self_seed, "random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (!chosen.empty())
      return run_named(chosen, flags);
    if (convert->parsed())
      return cmd_convert(cp, ceta, ctheta);
    if (klc->parsed())
      return cmd_kl(kq, kp);
    if (fit->parsed())
      return cmd_fit_rate(fit_file, fit_r2);
    if (self->parsed())
      return cmd_selftest(static_cast<std::uint64_t>(self_seed));
  } catch (const UsageError &e) {
    std::cerr << "usage error: " << e.what() << "\n" << app.help();
    return kUsage;
  } catch (const ConfigError &e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const DomainError &e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kUsage;
}
