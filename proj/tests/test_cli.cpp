#include <lrvoter/cli.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using namespace lrvoter::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("lrvoter-test-" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig parsed(const std::string& text) {
  ExperimentConfig c;
  parse_config_text(c, text);
  return c;
}

} // namespace

TEST(Cli, ParsesConfigText) {
  const auto c = parsed("schema = 1\n# comment\nalpha = 0.3  # trailing\nseed=42\nk_list = 1, 4,9\nt_max = auto\n"
                        "slowly-varying = log_corrected\ntail_constant = 0.25\n");
  EXPECT_DOUBLE_EQ(c.alpha, 0.3);
  EXPECT_EQ(*c.seed, 42u);
  EXPECT_EQ(c.k_list, (std::vector<std::int64_t>{1, 4, 9}));
  EXPECT_FALSE(c.t_max.has_value());
  EXPECT_EQ(c.slowly_varying, "log_corrected");
}

TEST(Cli, RejectsBadConfig) {
  EXPECT_THROW(parsed("colour = red\n"), ConfigError);
  EXPECT_THROW(parsed("alpha\n"), ConfigError);
  EXPECT_THROW(parsed("schema = 2\n"), ConfigError);
  EXPECT_THROW(parsed("n = 12x\n"), ConfigError);
  EXPECT_THROW(parsed("threads = 0\n"), ConfigError);
  EXPECT_THROW(resolve(parsed("alpha = 0.5\n"), "analytic"), ConfigError);  // no seed
  EXPECT_THROW(resolve(parsed("seed = 1\nalpha = 1.2\n"), "analytic"), ConfigError);
  EXPECT_THROW(resolve(parsed("seed = 1\np = 0\n"), "analytic"), ConfigError);
  EXPECT_THROW(resolve(parsed("seed = 1\nn = 1000\n"), "hurst"), ConfigError);
  EXPECT_THROW(resolve(parsed("seed = 1\nreps = 100\n"), "gauss-test"), ConfigError);
  EXPECT_THROW(resolve(parsed("seed = 1\n"), "bogus"), ConfigError);
}

TEST(Cli, ResolveFillsDefaults) {
  const auto c = resolve(parsed("seed = 1\n"), "coalesce-prob");
  EXPECT_EQ(*c.reps, 200000);
  EXPECT_EQ(*c.t_max, 1000000);
  EXPECT_EQ(*resolve(parsed("seed = 1\n"), "simulate-field").n, 4096);
  EXPECT_EQ(*resolve(parsed("seed = 1\n"), "hurst").n, 16384);
  EXPECT_EQ(resolve(parsed("seed = 1\n"), "component-scaling").n_grid->size(), 5u);
}

TEST(Cli, ConfigHashTracksContent) {
  const auto a = resolve(parsed("seed = 1\n"), "analytic");
  const auto b = resolve(parsed("seed = 2\n"), "analytic");
  EXPECT_EQ(config_hash(a, "analytic"), config_hash(a, "analytic"));
  EXPECT_NE(config_hash(a, "analytic"), config_hash(b, "analytic"));
}

TEST(Cli, AnalyticWritesConstants) {
  const auto dir = scratch("analytic");
  auto c = parsed("seed = 1\nalpha = 0.5\n");
  c.out = dir.string();
  std::ostringstream err;
  ASSERT_EQ(run_command(c, "analytic", err), exit_pass) << err.str();
  const auto csv = slurp(dir / "analytic.csv");
  EXPECT_EQ(csv.rfind("# manifest=analytic.manifest.json config_hash=", 0), 0u);
  EXPECT_NE(csv.find("c_alpha,,1.2533141373"), std::string::npos) << csv;
  EXPECT_TRUE(fs::exists(dir / "analytic.manifest.json"));
  fs::remove_all(dir);
}

TEST(Cli, SimulateFieldIsDeterministic) {
  std::string first;
  for (unsigned threads : {1u, 2u}) {
    const auto dir = scratch("field" + std::to_string(threads));
    auto c = parsed("seed = 5\nn = 256\nreps = 3\nslice_times = 0, 0.5\n");
    c.threads = threads;
    c.out = dir.string();
    std::ostringstream err;
    ASSERT_EQ(run_command(c, "simulate-field", err), exit_pass) << err.str();
    const auto csv = slurp(dir / "field.csv");
    EXPECT_FALSE(csv.empty());
    if (first.empty()) first = csv;
    else EXPECT_EQ(csv, first);
    fs::remove_all(dir);
  }
}

TEST(Cli, ExitCodes) {
  std::ostringstream err;
  EXPECT_EQ(run_command(parsed("alpha = 0.5\n"), "analytic", err), exit_usage);

  const auto dir = scratch("codes");
  auto strict = parsed("seed = 3\nn = 1024\nreps = 2\nhurst_tol = 1e-9\n");
  strict.out = dir.string();
  EXPECT_EQ(run_command(strict, "hurst", err), exit_pass);
  strict.enforce = true;
  EXPECT_EQ(run_command(strict, "hurst", err), exit_acceptance);

  auto cut = parsed("seed = 3\nn_grid = 64, 128\nreps = 100\nt_max = 0\n");
  cut.out = dir.string();
  EXPECT_EQ(run_command(cut, "component-scaling", err), exit_cutoff);
  fs::remove_all(dir);
}
