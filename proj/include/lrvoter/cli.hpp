#pragma once

#include "analytic.hpp"
#include "coalesce.hpp"
#include "errors.hpp"
#include "field.hpp"
#include "heatkernel.hpp"
#include "stats.hpp"
#include "steplaw.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#ifndef LRVOTER_VERSION
#define LRVOTER_VERSION "0.0.0"
#endif

namespace lrvoter::cli {

inline constexpr int kConfigSchema = 1;

enum ExitCode : int { exit_pass = 0, exit_usage = 1, exit_acceptance = 2, exit_cutoff = 3 };

/// Bad configuration or arguments; maps to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"analytic", "simulate-field", "coalesce-prob", "heat-kernel",
                                              "hurst",    "gauss-test",     "fgn-test",      "component-scaling"};
  return names;
}

/// Every recognised key with a one-line description. Config files use these
/// names; command-line flags use the same names with '-' for '_'.
inline const std::map<std::string, std::string>& config_schema() {
  static const std::map<std::string, std::string> keys{
      {"alpha", "tail exponent in (0,1)"},
      {"tail_constant", "per-side tail constant c0 in (0, 1/2]"},
      {"slowly_varying", "constant | log_corrected"},
      {"p", "colour probability in (0,1)"},
      {"n", "window width"},
      {"n_grid", "comma-separated window widths"},
      {"slice_times", "comma-separated macroscopic slice times"},
      {"x_grid", "comma-separated points in [0,1] at which S_n is written"},
      {"t_grid", "comma-separated times (macroscopic for analytic, steps for heat-kernel)"},
      {"k_list", "comma-separated site separations"},
      {"t_max", "backward horizon in steps, or auto"},
      {"t_max_c", "c in the automatic horizon c n^alpha log n"},
      {"reps", "replicates"},
      {"seed", "base seed (required)"},
      {"out", "output directory"},
      {"threads", "worker threads"},
      {"hurst_tol", "allowed |H - (1+alpha)/2|"},
      {"skew_max", "bound on |skewness|"},
      {"kurt_max", "bound on |excess kurtosis|"},
      {"ks_factor", "KS bound factor on 1.63/sqrt(reps)"},
      {"fgn_rel_tol", "relative tolerance of the noise variance"},
      {"moment_slack", "slack on the component second-moment exponent 2 alpha"},
      {"bump_centre", "centre of the Gaussian test function"},
      {"bump_width", "standard deviation of the Gaussian test function"},
  };
  return keys;
}

struct ExperimentConfig {
  double alpha = 0.5;
  double tail_constant = 0.5;
  std::string slowly_varying = "constant";
  double p = 0.5;
  std::optional<std::int64_t> n;
  std::optional<std::vector<std::int64_t>> n_grid;
  std::vector<double> slice_times{0.0};
  std::vector<double> x_grid{0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0};
  std::optional<std::vector<double>> t_grid;
  std::vector<std::int64_t> k_list{1, 2, 5, 10, 20};
  std::optional<std::int64_t> t_max;  // unset means automatic
  double t_max_c = 10.0;
  std::optional<std::int64_t> reps;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  unsigned threads = 1;
  bool enforce = false;
  double hurst_tol = 0.05;
  double skew_max = 0.1;
  double kurt_max = 0.2;
  double ks_factor = 1.5;
  double fgn_rel_tol = 0.10;
  double moment_slack = 0.15;
  double bump_centre = 0.5;
  double bump_width = 0.1;

  StepLaw law() const { return StepLaw(alpha, tail_constant, slowly_varying_from_string(slowly_varying)); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

inline std::int64_t to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    // Allow integral values written as 1e6.
    const double d = to_double(key, v);
    if (d != std::floor(d) || std::fabs(d) > 9e18) throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return static_cast<std::int64_t>(d);
  }
}

inline std::uint64_t to_seed(const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long s = std::stoull(v, &used);
    if (used != v.size() || v.front() == '-') throw std::invalid_argument(v);
    return s;
  } catch (const std::exception&) {
    throw ConfigError("seed: expected a non-negative integer, got '" + v + "'");
  }
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_floating_point_v<T>)
      s += format_double(v[i]);
    else
      s += std::to_string(v[i]);
  }
  return s;
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

} // namespace detail

/// Sets one key from its text value. Keys may use '-' or '_'.
inline void set_value(ExperimentConfig& c, std::string key, const std::string& raw) {
  std::replace(key.begin(), key.end(), '-', '_');
  const std::string v = detail::trim(raw);
  if (!config_schema().contains(key)) throw ConfigError("unknown config key '" + key + "'");
  if (v.empty()) throw ConfigError(key + ": empty value");
  auto ints = [&] {
    std::vector<std::int64_t> out;
    for (const auto& s : detail::split_list(v)) out.push_back(detail::to_int(key, s));
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
  };
  auto reals = [&] {
    std::vector<double> out;
    for (const auto& s : detail::split_list(v)) out.push_back(detail::to_double(key, s));
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
  };
  if (key == "alpha") c.alpha = detail::to_double(key, v);
  else if (key == "tail_constant") c.tail_constant = detail::to_double(key, v);
  else if (key == "slowly_varying") c.slowly_varying = v;
  else if (key == "p") c.p = detail::to_double(key, v);
  else if (key == "n") c.n = detail::to_int(key, v);
  else if (key == "n_grid") c.n_grid = ints();
  else if (key == "slice_times") c.slice_times = reals();
  else if (key == "x_grid") c.x_grid = reals();
  else if (key == "t_grid") c.t_grid = reals();
  else if (key == "k_list") c.k_list = ints();
  else if (key == "t_max") {
    if (v == "auto") c.t_max.reset();
    else c.t_max = detail::to_int(key, v);
  } else if (key == "t_max_c") c.t_max_c = detail::to_double(key, v);
  else if (key == "reps") c.reps = detail::to_int(key, v);
  else if (key == "seed") c.seed = detail::to_seed(v);
  else if (key == "out") c.out = v;
  else if (key == "threads") {
    const auto t = detail::to_int(key, v);
    if (t < 1 || t > 4096) throw ConfigError("threads: must lie in 1..4096");
    c.threads = static_cast<unsigned>(t);
  } else if (key == "hurst_tol") c.hurst_tol = detail::to_double(key, v);
  else if (key == "skew_max") c.skew_max = detail::to_double(key, v);
  else if (key == "kurt_max") c.kurt_max = detail::to_double(key, v);
  else if (key == "ks_factor") c.ks_factor = detail::to_double(key, v);
  else if (key == "fgn_rel_tol") c.fgn_rel_tol = detail::to_double(key, v);
  else if (key == "moment_slack") c.moment_slack = detail::to_double(key, v);
  else if (key == "bump_centre") c.bump_centre = detail::to_double(key, v);
  else if (key == "bump_width") c.bump_width = detail::to_double(key, v);
}

/// Parses `key = value` lines; '#' starts a comment. An optional
/// `schema = 1` line pins the format version.
inline void parse_config_text(ExperimentConfig& c, const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = line.substr(eq + 1);
    if (key == "schema") {
      if (detail::to_int(key, detail::trim(value)) != kConfigSchema)
        throw ConfigError("config schema " + detail::trim(value) + " is not supported (expected 1)");
      continue;
    }
    set_value(c, key, value);
  }
}

inline void load_config_file(ExperimentConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  parse_config_text(c, ss.str());
}

/// Fills subcommand-specific defaults and checks every range.
inline ExperimentConfig resolve(ExperimentConfig c, const std::string& command) {
  if (std::find(subcommands().begin(), subcommands().end(), command) == subcommands().end())
    throw ConfigError("unknown subcommand '" + command + "'");
  if (!c.seed) throw ConfigError("seed is required (set seed in the config or pass --seed)");
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw ConfigError("alpha must lie in (0,1), got " + detail::format_double(c.alpha));
  if (!(c.tail_constant > 0.0 && c.tail_constant <= 0.5)) throw ConfigError("tail_constant must lie in (0, 1/2]");
  try {
    (void)slowly_varying_from_string(c.slowly_varying);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(c.p > 0.0 && c.p < 1.0)) throw ConfigError("p must lie in (0,1)");
  if (!(c.t_max_c > 0.0)) throw ConfigError("t_max_c must be positive");
  if (c.t_max && *c.t_max < 0) throw ConfigError("t_max must be >= 0 or auto");
  for (double x : c.x_grid)
    if (!(x >= 0.0 && x <= 1.0)) throw ConfigError("x_grid values must lie in [0,1]");
  for (double t : c.slice_times)
    if (!(t >= 0.0)) throw ConfigError("slice_times must be >= 0");
  for (double tol : {c.hurst_tol, c.skew_max, c.kurt_max, c.ks_factor, c.fgn_rel_tol, c.moment_slack, c.bump_width})
    if (!(tol > 0.0)) throw ConfigError("thresholds and bump_width must be positive");

  std::int64_t default_reps = 100;
  std::int64_t min_reps = 2;
  std::int64_t default_n = 16384;
  if (command == "simulate-field") default_n = 4096;
  if (command == "coalesce-prob") {
    default_reps = 200000;
    min_reps = 100;
    if (!c.t_max) c.t_max = 1000000;
  }
  if (command == "hurst") default_reps = 200;
  if (command == "gauss-test") default_reps = 1000, min_reps = 500;
  if (command == "fgn-test") default_reps = 1000;
  if (command == "component-scaling") default_reps = 400, min_reps = 100;
  if (!c.reps) c.reps = default_reps;
  if (*c.reps < min_reps) throw ConfigError(command + ": reps must be >= " + std::to_string(min_reps));
  if (!c.n) c.n = default_n;
  if (*c.n < 1) throw ConfigError("n must be >= 1");
  if (command == "hurst" && (*c.n < 1024 || (*c.n & (*c.n - 1)) != 0))
    throw ConfigError("hurst: n must be a power of two >= 1024");
  if (!c.n_grid) {
    if (command == "heat-kernel") c.n_grid = std::vector<std::int64_t>{256, 512, 1024, 2048, 4096};
    else if (command == "component-scaling") c.n_grid = std::vector<std::int64_t>{512, 1024, 2048, 4096, 8192};
    else c.n_grid = std::vector<std::int64_t>{1024, 4096, 16384};
  }
  for (auto n : *c.n_grid)
    if (n < 1) throw ConfigError("n_grid values must be >= 1");
  if (!c.t_grid) {
    if (command == "heat-kernel") c.t_grid = std::vector<double>{100, 200, 500, 1000, 2000, 5000, 10000};
    else c.t_grid = std::vector<double>{0.0, 0.5, 1.0, 2.0};
  }
  for (double t : *c.t_grid) {
    if (!(t >= 0.0)) throw ConfigError("t_grid values must be >= 0");
    if (command == "heat-kernel" && (t < 1.0 || t != std::floor(t)))
      throw ConfigError("heat-kernel: t_grid values must be positive integers");
  }
  if (command == "coalesce-prob" && *c.t_max < 1) throw ConfigError("coalesce-prob: t_max must be >= 1");
  return c;
}

/// Canonical text of a resolved config; its hash names the run.
inline std::string canonical_text(const ExperimentConfig& c, const std::string& command) {
  std::map<std::string, std::string> kv{
      {"command", command},
      {"schema", std::to_string(kConfigSchema)},
      {"alpha", detail::format_double(c.alpha)},
      {"tail_constant", detail::format_double(c.tail_constant)},
      {"slowly_varying", c.slowly_varying},
      {"p", detail::format_double(c.p)},
      {"n", c.n ? std::to_string(*c.n) : "auto"},
      {"n_grid", c.n_grid ? detail::join(*c.n_grid) : "auto"},
      {"slice_times", detail::join(c.slice_times)},
      {"x_grid", detail::join(c.x_grid)},
      {"t_grid", c.t_grid ? detail::join(*c.t_grid) : "auto"},
      {"k_list", detail::join(c.k_list)},
      {"t_max", c.t_max ? std::to_string(*c.t_max) : "auto"},
      {"t_max_c", detail::format_double(c.t_max_c)},
      {"reps", c.reps ? std::to_string(*c.reps) : "auto"},
      {"seed", c.seed ? std::to_string(*c.seed) : "unset"},
      {"hurst_tol", detail::format_double(c.hurst_tol)},
      {"skew_max", detail::format_double(c.skew_max)},
      {"kurt_max", detail::format_double(c.kurt_max)},
      {"ks_factor", detail::format_double(c.ks_factor)},
      {"fgn_rel_tol", detail::format_double(c.fgn_rel_tol)},
      {"moment_slack", detail::format_double(c.moment_slack)},
      {"bump_centre", detail::format_double(c.bump_centre)},
      {"bump_width", detail::format_double(c.bump_width)},
  };
  std::string s;
  for (const auto& [k, v] : kv) s += k + " = " + v + "\n";
  return s;
}

inline std::string config_hash(const ExperimentConfig& c, const std::string& command) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(detail::fnv1a(canonical_text(c, command))));
  return buf;
}

/// Result of one subcommand: the verdict and whether it is enforced.
struct RunOutcome {
  int exit_code = exit_pass;
  bool pass = true;
  std::vector<std::string> files;
};

/// Writes files under the output directory. Every CSV starts with a comment
/// naming the manifest and the config hash.
class RunWriter {
 public:
  RunWriter(const ExperimentConfig& c, std::string command)
      : dir_(c.out), command_(std::move(command)), hash_(config_hash(c, command_)) {
    std::filesystem::create_directories(dir_);
  }

  const std::string& hash() const { return hash_; }

  std::string csv(const std::string& name, const std::vector<std::string>& header,
                  const std::vector<std::vector<std::string>>& rows) {
    std::string text = "# manifest=" + command_ + ".manifest.json config_hash=" + hash_ + "\n";
    text += join_row(header);
    for (const auto& r : rows) text += join_row(r);
    return write(name, text);
  }

  std::string json(const std::string& name, const nlohmann::ordered_json& j) { return write(name, j.dump(2) + "\n"); }

  const std::vector<std::string>& written() const { return written_; }

 private:
  static std::string join_row(const std::vector<std::string>& r) {
    std::string s;
    for (std::size_t i = 0; i < r.size(); ++i) s += (i ? "," : "") + r[i];
    return s + "\n";
  }

  std::string write(const std::string& name, const std::string& text) {
    const auto path = dir_ / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
    written_.push_back(path.string());
    return path.string();
  }

  std::filesystem::path dir_;
  std::string command_;
  std::string hash_;
  std::vector<std::string> written_;
};

inline std::string num(double v) { return detail::format_double(v); }

inline nlohmann::ordered_json law_json(const ExperimentConfig& c) {
  return {{"alpha", c.alpha}, {"per_side_tail_constant", c.tail_constant}, {"slowly_varying_kind", c.slowly_varying}};
}

inline nlohmann::ordered_json manifest_json(const ExperimentConfig& c, const std::string& command,
                                            const nlohmann::ordered_json& constants) {
  nlohmann::ordered_json config;
  std::stringstream ss(canonical_text(c, command));
  std::string line;
  while (std::getline(ss, line)) {
    const auto eq = line.find(" = ");
    config[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return {{"command", command},      {"version", LRVOTER_VERSION}, {"config_hash", config_hash(c, command)},
          {"config", config},        {"law", law_json(c)},         {"constants", constants}};
}

inline nlohmann::ordered_json verdict_json(const std::string& name, double estimate, double stderr,
                                           const std::string& threshold, bool pass) {
  return {{"estimator", name}, {"estimate", estimate}, {"stderr", stderr}, {"threshold", threshold}, {"pass", pass}};
}

inline nlohmann::ordered_json constants_json(const AnalyticConstants& k) {
  return {{"c_alpha", k.c_alpha}, {"q_norm2", k.q_norm2}, {"v0", k.v0}};
}

inline std::int64_t horizon(const ExperimentConfig& c, const StepLaw& law, std::int64_t n) {
  return c.t_max ? *c.t_max : default_t_max(law, n, c.t_max_c);
}

inline std::vector<std::int64_t> microscopic_slices(const ExperimentConfig& c, const StepLaw& law, std::int64_t n) {
  std::vector<std::int64_t> out;
  for (double t : c.slice_times) out.push_back(microscopic_time(law, t, n));
  return out;
}

inline std::function<double(double)> gaussian_bump(double centre, double width) {
  return [centre, width](double x) {
    const double z = (x - centre) / width;
    return std::exp(-0.5 * z * z);
  };
}

/// The test function on a grid fine enough for fgn_variance: spacing width/64.
inline GridFunction bump_grid(double centre, double width) {
  GridFunction g;
  g.h = width / 64.0;
  g.x0 = centre - 12.0 * width;
  const auto phi = gaussian_bump(centre, width);
  for (int i = 0; i <= 24 * 64; ++i) g.values.push_back(phi(g.x0 + i * g.h));
  return g;
}

inline RunOutcome finish(const ExperimentConfig& c, RunWriter& w, const std::string& command, bool pass,
                         const nlohmann::ordered_json& constants) {
  w.json(command + ".manifest.json", manifest_json(c, command, constants));
  RunOutcome o;
  o.pass = pass;
  o.exit_code = (!pass && c.enforce) ? exit_acceptance : exit_pass;
  o.files = w.written();
  return o;
}

inline RunOutcome run_analytic(const ExperimentConfig& c) {
  const auto law = c.law();
  const auto k = AnalyticConstants::compute(law);
  RunWriter w(c, "analytic");
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"c_alpha", "", num(k.c_alpha)});
  rows.push_back({"q_norm2", "", num(k.q_norm2)});
  for (double t : *c.t_grid) rows.push_back({"V(t,1)", num(t), num(k.v->at_ratio(t))});
  rows.push_back({"c_tilde_p", num(c.p), num(c_tilde_p(k, c.p))});
  for (auto n : *c.n_grid) rows.push_back({"sigma_n", std::to_string(n), num(sigma_n(k, law, c.p, n))});
  w.csv("analytic.csv", {"quantity", "argument", "value"}, rows);
  return finish(c, w, "analytic", true, constants_json(k));
}

inline RunOutcome run_simulate_field(const ExperimentConfig& c) {
  const auto law = c.law();
  const auto k = AnalyticConstants::compute(law);
  const auto n = *c.n;
  const auto slices = microscopic_slices(c, law, n);
  const auto t_max = horizon(c, law, n);
  const double sigma = sigma_n(k, law, c.p, n);
  const auto reps = *c.reps;
  std::vector<std::vector<std::vector<double>>> values(static_cast<std::size_t>(reps));
  std::vector<double> residual(static_cast<std::size_t>(reps));
  std::vector<std::vector<double>> last(slices.size(), std::vector<double>(static_cast<std::size_t>(reps)));
  std::vector<std::vector<std::vector<double>>> weights(slices.size(),
                                                        std::vector<std::vector<double>>(static_cast<std::size_t>(reps)));
  for_each_field(law, c.p, n, slices, t_max, reps, *c.seed, c.threads, [&](std::size_t r, const SpaceTimeField& f) {
    values[r].resize(slices.size());
    for (std::size_t s = 0; s < slices.size(); ++s) {
      for (double x : c.x_grid) values[r][s].push_back(rescaled(f, sigma, x, s));
      last[s][r] = rescaled(f, sigma, 1.0, s);
      weights[s][r] = rescaled_weights(f, sigma, 1.0, s);
    }
    residual[r] = static_cast<double>(f.labeling().residual_clusters);
  });
  RunWriter w(c, "simulate-field");
  std::vector<std::string> header{"replicate", "slice", "t", "t_steps"};
  for (double x : c.x_grid) header.push_back("S_n(" + num(x) + ")");
  std::vector<std::vector<std::string>> rows;
  for (std::int64_t r = 0; r < reps; ++r)
    for (std::size_t s = 0; s < slices.size(); ++s) {
      std::vector<std::string> row{std::to_string(r), std::to_string(s), num(c.slice_times[s]), std::to_string(slices[s])};
      for (double v : values[static_cast<std::size_t>(r)][s]) row.push_back(num(v));
      rows.push_back(std::move(row));
    }
  w.csv("field.csv", header, rows);

  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  for (std::size_t s = 0; s < slices.size(); ++s) {
    ConditionalMoments cm(c.p);
    for (const auto& wt : weights[s]) cm.add(wt);
    nlohmann::ordered_json row{{"slice", s}, {"t", c.slice_times[s]}, {"t_steps", slices[s]}};
    row["mean_S_n(1)"] = mean(last[s]);
    if (reps >= 2) {
      row["var_S_n(1)"] = sample_variance(last[s]);
      const auto cv = cm.variance();
      row["conditional_var_S_n(1)"] = cv.value;
      row["conditional_var_stderr"] = cv.stderr;
    }
    summary.push_back(row);
  }
  nlohmann::ordered_json side{{"law", law_json(c)},
                              {"constants", constants_json(k)},
                              {"sigma_n", sigma},
                              {"n", n},
                              {"t_max", t_max},
                              {"replicates", reps},
                              {"seed", *c.seed},
                              {"mean_residual_clusters", mean(residual)},
                              {"slices", summary}};
  w.json("field.json", side);
  return finish(c, w, "simulate-field", true, constants_json(k));
}

inline RunOutcome run_coalesce_prob(const ExperimentConfig& c) {
  const auto law = c.law();
  const double q2 = q_norm_squared(law);
  RunWriter w(c, "coalesce-prob");
  std::vector<std::vector<std::string>> rows;
  nlohmann::ordered_json verdicts = nlohmann::ordered_json::array();
  bool pass = true;
  for (std::size_t i = 0; i < c.k_list.size(); ++i) {
    const auto kk = c.k_list[i];
    const auto mc = coalesce_prob_mc(law, kk, *c.t_max, *c.reps, *c.seed + i, c.threads);
    const double fourier = coalesce_prob_fourier(law, kk, q2);
    rows.push_back({std::to_string(kk), num(mc.estimate), num(mc.stderr), num(mc.live_fraction), num(fourier),
                    num(mc.escaped_fraction), num(mc.cutoff_allowance)});
    const double tol = 3.0 * mc.stderr + 1e-3;
    const bool ok = std::fabs(mc.estimate - fourier) <= tol;
    pass = pass && ok;
    auto v = verdict_json("coalesce_prob_mc(k=" + std::to_string(kk) + ")", mc.estimate, mc.stderr,
                          "|mc - fourier| <= 3 stderr + 1e-3", ok);
    v["fourier_value"] = fourier;
    verdicts.push_back(v);
  }
  w.csv("coalesce.csv",
        {"k", "mc_estimate", "stderr", "live_fraction", "fourier_value", "escaped_fraction", "cutoff_allowance"}, rows);
  w.json("coalesce.verdict.json", {{"pass", pass}, {"checks", verdicts}});
  return finish(c, w, "coalesce-prob", pass, {{"q_norm2", q2}});
}

inline RunOutcome run_heat_kernel(const ExperimentConfig& c) {
  const auto law = c.law();
  RunWriter w(c, "heat-kernel");
  std::vector<std::int64_t> ts;
  for (double t : *c.t_grid) ts.push_back(static_cast<std::int64_t>(t));
  const auto fit = supnorm_exponent(law, ts);
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < ts.size(); ++i)
    rows.push_back({std::to_string(ts[i]), num(fit.values[i]), num(fit.leaks[i]), num(return_prob(law, ts[i]))});
  w.csv("supnorm.csv", {"t", "supnorm", "leak", "return_prob"}, rows);
  const auto occ = occupation_exponent(law, *c.n_grid);
  rows.clear();
  for (std::size_t i = 0; i < c.n_grid->size(); ++i)
    rows.push_back({std::to_string((*c.n_grid)[i]), num(occ.values[i]), num(occ.leaks[i])});
  w.csv("occupation.csv", {"n", "occupation_sum", "tail_bound"}, rows);
  const double target = -1.0 / c.alpha;
  const bool slope_ok = std::fabs(fit.fit.slope - target) <= 0.1;
  const bool occ_ok = occ.fit.slope <= c.alpha + 0.1;
  w.json("heat-kernel.verdict.json",
         {{"pass", slope_ok && occ_ok},
          {"checks",
           {verdict_json("supnorm slope", fit.fit.slope, fit.fit.slope_stderr, "|slope + 1/alpha| <= 0.1", slope_ok),
            verdict_json("occupation exponent", occ.fit.slope, occ.fit.slope_stderr, "<= alpha + 0.1", occ_ok)}}});
  return finish(c, w, "heat-kernel", slope_ok && occ_ok, nlohmann::ordered_json::object());
}

inline RunOutcome run_hurst(const ExperimentConfig& c) {
  const auto law = c.law();
  const auto n = *c.n;
  const auto t_max = horizon(c, law, n);
  std::vector<double> h(static_cast<std::size_t>(*c.reps)), se(h.size());
  const double drift = 2.0 * c.p - 1.0;
  for_each_field(law, c.p, n, {0}, t_max, *c.reps, *c.seed, c.threads, [&](std::size_t r, const SpaceTimeField& f) {
    std::vector<double> path(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) path[static_cast<std::size_t>(i)] = static_cast<double>(f.prefix_sum(i, 0));
    const auto est = hurst_estimate(path, drift);
    h[r] = est.h;
    se[r] = est.stderr;
  });
  RunWriter w(c, "hurst");
  std::vector<std::vector<std::string>> rows;
  for (std::size_t r = 0; r < h.size(); ++r) rows.push_back({std::to_string(r), num(h[r]), num(se[r])});
  w.csv("hurst.csv", {"replicate", "hurst", "stderr"}, rows);
  const auto m = mean_estimate(h);
  const double target = 0.5 * (1.0 + c.alpha);
  const bool pass = std::fabs(m.value - target) <= c.hurst_tol;
  auto v = verdict_json("mean hurst_estimate", m.value, m.stderr, "|H - (1+alpha)/2| <= " + num(c.hurst_tol), pass);
  v["target"] = target;
  w.json("hurst.verdict.json", v);
  return finish(c, w, "hurst", pass, nlohmann::ordered_json::object());
}

inline RunOutcome run_gauss_test(const ExperimentConfig& c) {
  const auto law = c.law();
  const auto k = AnalyticConstants::compute(law);
  const auto n = *c.n;
  const double sigma = sigma_n(k, law, c.p, n);
  std::vector<double> x(static_cast<std::size_t>(*c.reps));
  std::vector<std::vector<double>> weights(x.size());
  for_each_field(law, c.p, n, {0}, horizon(c, law, n), *c.reps, *c.seed, c.threads,
                 [&](std::size_t r, const SpaceTimeField& f) {
                   x[r] = rescaled(f, sigma, 1.0, 0);
                   weights[r] = rescaled_weights(f, sigma, 1.0, 0);
                 });
  ConditionalMoments cm(c.p);
  for (const auto& wt : weights) cm.add(wt);
  const auto g = gaussianity(x);
  const auto skew = cm.skewness();
  const auto kurt = cm.excess_kurtosis();
  const double ks_bound = 1.63 / std::sqrt(static_cast<double>(x.size())) * c.ks_factor;
  const bool skew_ok = std::fabs(skew.value) < c.skew_max;
  const bool kurt_ok = std::fabs(kurt.value) < c.kurt_max;
  const bool ks_ok = g.ks_distance < ks_bound;
  RunWriter w(c, "gauss-test");
  std::vector<std::vector<std::string>> rows;
  for (std::size_t r = 0; r < x.size(); ++r) rows.push_back({std::to_string(r), num(x[r])});
  w.csv("gauss.csv", {"replicate", "S_n(1)"}, rows);
  auto vs = verdict_json("skewness (conditional)", skew.value, skew.stderr, "< " + num(c.skew_max), skew_ok);
  vs["sample_value"] = g.skewness;
  auto vk = verdict_json("excess kurtosis (conditional)", kurt.value, kurt.stderr, "< " + num(c.kurt_max), kurt_ok);
  vk["sample_value"] = g.excess_kurtosis;
  auto vks = verdict_json("KS distance", g.ks_distance, 0.0, "< " + num(ks_bound), ks_ok);
  w.json("gauss.verdict.json", {{"pass", skew_ok && kurt_ok && ks_ok}, {"checks", {vs, vk, vks}}});
  return finish(c, w, "gauss-test", skew_ok && kurt_ok && ks_ok, constants_json(k));
}

inline RunOutcome run_fgn_test(const ExperimentConfig& c) {
  const auto law = c.law();
  const auto k = AnalyticConstants::compute(law);
  const auto n = *c.n;
  const double sigma = sigma_n(k, law, c.p, n);
  const auto phi = gaussian_bump(c.bump_centre, c.bump_width);
  std::vector<double> x(static_cast<std::size_t>(*c.reps));
  std::vector<std::vector<double>> weights(x.size());
  for_each_field(law, c.p, n, {0}, horizon(c, law, n), *c.reps, *c.seed, c.threads,
                 [&](std::size_t r, const SpaceTimeField& f) {
                   x[r] = fgn_functional(f, phi, sigma);
                   weights[r] = fgn_weights(f, phi, sigma);
                 });
  ConditionalMoments cm(c.p);
  for (const auto& wt : weights) cm.add(wt);
  const auto target = fgn_variance(c.alpha, bump_grid(c.bump_centre, c.bump_width));
  const auto var = cm.variance();
  const double ratio = var.value / target.value;
  const bool pass = std::fabs(ratio - 1.0) <= c.fgn_rel_tol;
  RunWriter w(c, "fgn-test");
  std::vector<std::vector<std::string>> rows;
  for (std::size_t r = 0; r < x.size(); ++r) rows.push_back({std::to_string(r), num(x[r])});
  w.csv("fgn.csv", {"replicate", "F_n(phi)"}, rows);
  auto v = verdict_json("Var F_n(phi) (conditional)", var.value, var.stderr,
                        "|Var / fgn_variance - 1| <= " + num(c.fgn_rel_tol), pass);
  v["sample_variance"] = sample_variance(x);
  v["fgn_variance"] = target.value;
  v["ratio"] = ratio;
  w.json("fgn.verdict.json", v);
  return finish(c, w, "fgn-test", pass, constants_json(k));
}

inline RunOutcome run_component_scaling(const ExperimentConfig& c) {
  const auto law = c.law();
  HorizonPolicy policy;
  if (c.t_max) policy.t_max = *c.t_max;
  policy.c = c.t_max_c;
  const auto r = component_moment_scaling(law, *c.n_grid, *c.reps, *c.seed, policy, c.threads);
  RunWriter w(c, "component-scaling");
  std::vector<std::vector<std::string>> rows;
  for (const auto& row : r.rows)
    rows.push_back({std::to_string(row.n), std::to_string(row.t_max), num(row.second_moment.value),
                    num(row.second_moment.stderr), num(row.v_mean.value), num(row.v_variance.value),
                    num(row.v_variance.stderr), num(row.mean_residual)});
  w.csv("components.csv",
        {"n", "t_max", "second_moment", "second_moment_stderr", "mean_V_n", "var_V_n", "var_V_n_stderr",
         "mean_residual_clusters"},
        rows);
  const bool exp_ok = r.second_moment_fit.slope <= 2.0 * c.alpha + c.moment_slack;
  const bool var_ok = r.v_variance_decreasing && r.v_variance_fit.slope < 0.0;
  w.json("components.verdict.json",
         {{"pass", exp_ok && var_ok},
          {"checks",
           {verdict_json("second-moment exponent", r.second_moment_fit.slope, r.second_moment_fit.slope_stderr,
                         "<= 2 alpha + " + num(c.moment_slack), exp_ok),
            verdict_json("Var(V_n) slope", r.v_variance_fit.slope, r.v_variance_fit.slope_stderr,
                         "< 0 and strictly decreasing", var_ok)}}});
  return finish(c, w, "component-scaling", exp_ok && var_ok, nlohmann::ordered_json::object());
}

/// Runs a resolved config. Cutoff failures surface as CutoffError.
inline RunOutcome run(const ExperimentConfig& c, const std::string& command) {
  if (command == "analytic") return run_analytic(c);
  if (command == "simulate-field") return run_simulate_field(c);
  if (command == "coalesce-prob") return run_coalesce_prob(c);
  if (command == "heat-kernel") return run_heat_kernel(c);
  if (command == "hurst") return run_hurst(c);
  if (command == "gauss-test") return run_gauss_test(c);
  if (command == "fgn-test") return run_fgn_test(c);
  if (command == "component-scaling") return run_component_scaling(c);
  throw ConfigError("unknown subcommand '" + command + "'");
}

/// resolve + run with the documented exit codes; messages go to `err`.
inline int run_command(const ExperimentConfig& raw, const std::string& command, std::ostream& err) {
  try {
    const auto c = resolve(raw, command);
    const auto o = run(c, command);
    if (!o.pass) err << command << ": acceptance check failed" << (c.enforce ? "" : " (report only)") << "\n";
    return o.exit_code;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return exit_usage;
  } catch (const CutoffError& e) {
    err << "cutoff error: " << e.what() << "\n";
    return exit_cutoff;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return exit_usage;
  } catch (const std::domain_error& e) {
    err << "error: " << e.what() << "\n";
    return exit_usage;
  }
}

} // namespace lrvoter::cli
