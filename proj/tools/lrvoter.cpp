#include <lrvoter/cli.hpp>

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>

namespace {

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-range voter model experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(LRVOTER_VERSION));

  std::string config_path;
  bool enforce = false;
  // Per-subcommand flag values; only flags given on the command line are applied.
  std::map<std::string, std::map<std::string, std::string>> flags;

  for (const auto& name : lrvoter::cli::subcommands()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "key = value config file");
    sub->add_flag("--enforce", enforce, "exit 2 when an acceptance check fails");
    for (const auto& [key, help] : lrvoter::cli::config_schema())
      sub->add_option(flag_name(key), flags[name][key], help);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : lrvoter::cli::exit_usage;
  }

  const auto* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  lrvoter::cli::ExperimentConfig config;
  try {
    if (!config_path.empty()) lrvoter::cli::load_config_file(config, config_path);
    for (const auto& [key, value] : flags[command])
      if (sub->count(flag_name(key)) > 0) lrvoter::cli::set_value(config, key, value);
  } catch (const lrvoter::cli::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return lrvoter::cli::exit_usage;
  }
  config.enforce = enforce;
  return lrvoter::cli::run_command(config, command, std::cerr);
}
