// riskpia check|solve|refine|oracle|simulate --config <path> [--out <dir>] [--seed <u64>]

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "riskpia/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Policy improvement for ergodic risk-sensitive control"};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  bool allow_guard_fail = false;

  for (const char* name : {"check", "solve", "refine", "oracle", "simulate"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "run configuration (TOML)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "artifact directory (default: output.dir of the config)");
    sub->add_option("--seed", seed, "override the configured seed");
    sub->add_option("--threads", threads, "worker threads (default: hardware concurrency)");
    sub->add_flag("--allow-guard-fail", allow_guard_fail, "continue when the max-sense guard fails");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : riskpia::exit_code::kError;
  }

  CLI::App* sub = app.get_subcommands().front();
  riskpia::CommandOptions opt;
  opt.config = config;
  if (sub->count("--out")) opt.out = out;
  if (sub->count("--seed")) opt.seed = seed;
  if (sub->count("--threads")) opt.threads = threads;
  opt.allow_guard_fail = allow_guard_fail;
  return riskpia::run_command(sub->get_name(), opt, std::cout, std::cerr);
}
