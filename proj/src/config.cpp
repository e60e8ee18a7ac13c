#include "simplex_flows/config.hpp"

#include "simplex_flows/types.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace sflow {

namespace {

enum class Kind { positive, positive_or_auto, nonnegative, count, seed, list, grid, mode, kind, method, path };

struct KeyInfo {
  const char *value;
  Kind kind;
};

// clang-format off
const std::map<std::string, KeyInfo> &key_table() {
  static const std::map<std::string, KeyInfo> table{
      // shared
      {"n",              {"2", Kind::count}},
      {"seed",           {"7", Kind::seed}},
      {"inits",          {"100", Kind::count}},
      {"out",            {"out", Kind::path}},
      // flows and rate fitting
      {"dt",             {"0.001", Kind::positive}},
      {"dt_theta",       {"0.02", Kind::positive}},
      {"t_end",          {"40", Kind::positive}},
      {"t_max_theta",    {"5000", Kind::positive}},
      {"stop_below",     {"1e-14", Kind::nonnegative}},
      {"samples_per_fit", {"400", Kind::count}},
      {"fit_fraction",   {"0.6", Kind::positive}},
      {"fit_floor",      {"1e-13", Kind::positive}},
      {"min_r2",         {"0.99", Kind::positive}},
      {"ng_rate_tol",    {"0.1", Kind::positive}},
      {"bound_samples",  {"2000", Kind::count}},
      {"bound_slack",    {"0.05", Kind::nonnegative}},
      {"exact_tol",      {"1e-8", Kind::positive}},
      // affine charts
      {"c_values",       {"0.5,1,2", Kind::list}},
      {"near_kl",        {"0.05", Kind::positive}},
      {"affine_rel_tol", {"0.1", Kind::positive}},
      // empirical
      {"method",         {"ngd", Kind::method}},
      {"mode",           {"full_batch", Kind::mode}},
      {"grid",           {"auto", Kind::grid}},
      {"samples",        {"100000", Kind::count}},
      {"minibatch",      {"1000", Kind::count}},
      {"decay_a",        {"1000", Kind::positive}},
      {"max_iters",      {"100", Kind::count}},
      {"tol",            {"auto", Kind::positive_or_auto}},
      {"small_lr",       {"0.001", Kind::positive}},
      {"sandwich_from",  {"5", Kind::count}},
      // robustness
      {"kind",           {"both", Kind::kind}},
      {"robust_q",       {"0.2,0.3,0.5", Kind::list}},
      {"delta_norm",     {"0.9", Kind::positive}},
      {"robust_seeds",   {"10", Kind::count}},
      {"robust_iters",   {"1000", Kind::count}},
      {"mc_steps",       {"100000", Kind::count}},
      {"burn_in",        {"1000", Kind::count}},
      {"cov_tol",        {"0.05", Kind::positive}},
      {"ngd_cov_tol",    {"0.03", Kind::positive}},
      // nonconvexity witness
      {"witness_p",      {"0.7,0.2,0.1", Kind::list}},
      {"probes",         {"10000", Kind::count}},
      {"probe_radius",   {"3", Kind::positive}},
      // local sections
      {"directions",     {"8", Kind::count}},
      {"s_max",          {"0.05", Kind::positive}},
      {"s_count",        {"21", Kind::count}},
      {"section_tol",    {"0.05", Kind::positive}},
  };
  return table;
}
// clang-format on

std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos)
    return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string &key, const std::string &text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception &) {
    throw ConfigError("key '" + key + "': malformed number '" + text + "'");
  }
  if (used != text.size() || !std::isfinite(v))
    throw ConfigError("key '" + key + "': malformed number '" + text + "'");
  return v;
}

long parse_long(const std::string &key, const std::string &text) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(text, &used);
  } catch (const std::exception &) {
    throw ConfigError("key '" + key + "': malformed integer '" + text + "'");
  }
  if (used != text.size())
    throw ConfigError("key '" + key + "': malformed integer '" + text + "'");
  return v;
}

std::vector<double> parse_list(const std::string &key, const std::string &text) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string field;
  while (std::getline(in, field, ','))
    out.push_back(parse_double(key, trim(field)));
  if (out.empty())
    throw ConfigError("key '" + key + "': empty list");
  return out;
}

void validate(const std::string &key, Kind kind, const std::string &value) {
  switch (kind) {
  case Kind::positive:
    if (!(parse_double(key, value) > 0.0))
      throw ConfigError("key '" + key + "': must be positive, got " + value);
    break;
  case Kind::positive_or_auto:
    if (value != "auto" && !(parse_double(key, value) > 0.0))
      throw ConfigError("key '" + key + "': must be positive or auto, got " + value);
    break;
  case Kind::nonnegative:
    if (!(parse_double(key, value) >= 0.0))
      throw ConfigError("key '" + key + "': must be nonnegative, got " + value);
    break;
  case Kind::count:
    if (parse_long(key, value) < 1)
      throw ConfigError("key '" + key + "': must be a positive integer, got " + value);
    break;
  case Kind::seed:
    if (parse_long(key, value) < 0)
      throw ConfigError("key '" + key + "': seed must be nonnegative, got " + value);
    break;
  case Kind::list:
    (void)parse_list(key, value);
    break;
  case Kind::grid:
    if (value != "auto")
      (void)GridSpec::parse(value);
    break;
  case Kind::mode:
    if (value != "full_batch" && value != "sgd")
      throw ConfigError("key '" + key + "': expected full_batch or sgd, got " + value);
    break;
  case Kind::kind:
    if (value != "multiplicative" && value != "additive" && value != "both")
      throw ConfigError("key '" + key + "': expected multiplicative, additive or both, got " + value);
    break;
  case Kind::method: {
    static const std::set<std::string> ok{"gd_eta", "gd_theta", "ngd", "eta", "theta", "natural"};
    if (!ok.count(value))
      throw ConfigError("key '" + key + "': expected gd_eta, gd_theta or ngd, got " + value);
    break;
  }
  case Kind::path:
    if (value.empty())
      throw ConfigError("key '" + key + "': empty path");
    break;
  }
}

} // namespace

std::vector<double> GridSpec::values() const {
  std::vector<double> out;
  if (count == 1) {
    out.push_back(lo);
    return out;
  }
  for (long i = 0; i < count; ++i)
    out.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1));
  return out;
}

GridSpec GridSpec::parse(const std::string &text) {
  const auto a = text.find(':');
  const auto b = a == std::string::npos ? a : text.find(':', a + 1);
  if (a == std::string::npos || b == std::string::npos)
    throw ConfigError("grid: expected lo:hi:count, got '" + text + "'");
  GridSpec g;
  g.lo = parse_double("grid", trim(text.substr(0, a)));
  g.hi = parse_double("grid", trim(text.substr(a + 1, b - a - 1)));
  g.count = parse_long("grid", trim(text.substr(b + 1)));
  if (g.count < 1)
    throw ConfigError("grid: count must be positive");
  if (!(g.lo > 0.0) || g.hi < g.lo)
    throw ConfigError("grid: need 0 < lo <= hi");
  return g;
}

const std::map<std::string, std::string> &RunConfig::defaults() {
  static const std::map<std::string, std::string> d = [] {
    std::map<std::string, std::string> m;
    for (const auto &[k, info] : key_table())
      m.emplace(k, info.value);
    return m;
  }();
  return d;
}

RunConfig::RunConfig() : values_(defaults()) {}

RunConfig RunConfig::load(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot read config file '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  RunConfig cfg;
  cfg.merge_text(text.str(), path.string());
  return cfg;
}

void RunConfig::merge_text(const std::string &text, const std::string &origin) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';' || t[0] == '[')
      continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected 'key = value'");
    try {
      set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const ConfigError &e) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

void RunConfig::set(const std::string &key, const std::string &value) {
  const auto it = key_table().find(key);
  if (it == key_table().end())
    throw ConfigError("unknown key '" + key + "'");
  validate(key, it->second.kind, value);
  values_[key] = value;
}

bool RunConfig::has(const std::string &key) const { return values_.count(key) != 0; }

const std::string &RunConfig::get(const std::string &key) const {
  const auto it = values_.find(key);
  if (it == values_.end())
    throw ConfigError("unknown key '" + key + "'");
  return it->second;
}

double RunConfig::get_double(const std::string &key) const { return parse_double(key, get(key)); }

long RunConfig::get_long(const std::string &key) const { return parse_long(key, get(key)); }

std::uint64_t RunConfig::get_seed() const { return static_cast<std::uint64_t>(get_long("seed")); }

std::vector<double> RunConfig::get_list(const std::string &key) const {
  return parse_list(key, get(key));
}

GridSpec RunConfig::get_grid(const std::string &key) const { return GridSpec::parse(get(key)); }

} // namespace sflow
