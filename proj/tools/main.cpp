#include <iostream>

#include <CLI11.hpp>

#include "runner.hpp"

int main(int argc, char** argv) {
  using namespace fmstat;
  CLI::App app{"fmstat: flow-matching and score-based statistics experiments"};
  app.set_version_flag("--version", std::string(FMSTAT_VERSION));

  std::string subcommand, config_path, out;
  std::uint64_t seed = 0;
  std::size_t reps = 0;
  int threads = 0;
  bool list = false;
  app.add_option("subcommand", subcommand, "Experiment to run (see --list)");
  app.add_option("--config", config_path, "JSON file with the subcommand's parameters");
  auto* seed_opt = app.add_option("--seed", seed, "Seed override");
  auto* out_opt = app.add_option("--out", out, "Output directory (default fmstat-out/<subcommand>)");
  auto* reps_opt = app.add_option("--reps", reps, "Replicate-count override");
  auto* threads_opt = app.add_option("--threads", threads, "OpenMP thread count");
  app.add_flag("--list", list, "List subcommands and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << cli::error_json(ErrorCode::ConfigInvalid, e.what()) << "\n";
    return 2;
  }
  if (list) {
    for (const auto& s : cli::subcommands()) std::cout << s << "\n";
    return 0;
  }

  try {
    cli::RunOptions opts;
    opts.subcommand = subcommand;
    if (subcommand.empty()) fail(ErrorCode::ConfigInvalid, "no subcommand given (see --list)");
    if (!config_path.empty()) opts.config = cli::load_config(config_path);
    if (*seed_opt) opts.seed = seed;
    if (*out_opt) opts.out = out;
    if (*reps_opt) opts.reps = reps;
    if (*threads_opt) opts.threads = threads;
    const auto manifest = cli::run(opts);
    std::cout << manifest.to_json().dump(2) << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << cli::error_json(e) << "\n";
    return e.code() == ErrorCode::ConfigInvalid ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << cli::error_json(ErrorCode::ExperimentFailed, e.what()) << "\n";
    return 1;
  }
}
