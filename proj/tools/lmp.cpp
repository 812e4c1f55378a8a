// Latent Markov panel toolkit: simulate synthetic earnings panels, estimate
// the two-component hidden Markov model by modified stochastic EM, and run
// the diagnostics suite.

#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "lmp/cli.hpp"
#include "lmp/config.hpp"

int main(int argc, char** argv) {
  CLI::App app{"latent Markov earnings-dynamics toolkit"};
  app.set_version_flag("--version", lmp::kVersion);
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false, out_set = false;
  int threads = 0;
  bool resume = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "TOML configuration file")->required();
    sub->add_option("--out", out_dir, "output directory (overrides [run].out_dir)")
        ->each([&](const std::string&) { out_set = true; });
    sub->add_option("--seed", seed, "master seed (overrides [run].seed)")
        ->each([&](const std::string&) { seed_set = true; });
    sub->add_option("--threads", threads, "worker threads (overrides [run].threads)");
  };

  CLI::App* c_sim = app.add_subcommand("simulate", "generate a synthetic panel");
  CLI::App* c_est = app.add_subcommand("estimate", "fit the model to a panel CSV");
  CLI::App* c_diag = app.add_subcommand("diagnose", "diagnostics for fitted parameters");
  CLI::App* c_rep = app.add_subcommand("replicate", "simulate + estimate + diagnose");
  for (CLI::App* sub : {c_sim, c_est, c_diag, c_rep}) add_common(sub);
  c_est->add_flag("--resume", resume, "continue from the latest checkpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  lmp::Command cmd = lmp::Command::simulate;
  if (c_est->parsed()) cmd = lmp::Command::estimate;
  else if (c_diag->parsed()) cmd = lmp::Command::diagnose;
  else if (c_rep->parsed()) cmd = lmp::Command::replicate;

  try {
    lmp::RunConfig cfg = lmp::load_config(config_path);
    if (out_set) cfg.out_dir = out_dir;
    if (seed_set) cfg.seed = seed;
    if (threads > 0) cfg.threads = threads;
    return lmp::dispatch(cfg, cmd, resume);
  } catch (const lmp::io_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
