#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lmp/config.hpp"
#include "lmp/diagnostics.hpp"
#include "lmp/msem.hpp"
#include "lmp/panel.hpp"
#include "lmp/simulator.hpp"

namespace lmp {

inline constexpr const char* kVersion = "0.1.0";

enum class Command { simulate, estimate, diagnose, replicate };

inline const char* command_name(Command c) {
  switch (c) {
    case Command::simulate: return "simulate";
    case Command::estimate: return "estimate";
    case Command::diagnose: return "diagnose";
    case Command::replicate: return "replicate";
  }
  return "?";
}

// One derived seed per pipeline stage, so `simulate` + `estimate` +
// `diagnose` and `replicate` agree on every stream.
inline std::uint64_t stage_seed(std::uint64_t master, const char* stage) {
  return Rng::mix(master ^ fnv1a64(stage));
}

namespace detail {

class ArtifactTracker {
 public:
  explicit ArtifactTracker(std::filesystem::path root) : root_(std::move(root)) {}

  std::filesystem::path path(const std::string& rel) {
    auto p = root_ / rel;
    std::filesystem::create_directories(p.parent_path());
    written_.push_back(rel);
    return p;
  }

  // On failure every artifact written so far is kept under a .partial name.
  void mark_partial() {
    for (const auto& rel : written_) {
      std::error_code ec;
      auto p = root_ / rel;
      if (std::filesystem::exists(p, ec))
        std::filesystem::rename(p, p.string() + ".partial", ec);
    }
  }

  nlohmann::json hashes() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& rel : written_) {
      std::ifstream in(root_ / rel, std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      std::ostringstream hex;
      hex << std::hex << fnv1a64(ss.str());
      j[rel] = hex.str();
    }
    return j;
  }

  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  std::vector<std::string> written_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw io_error("cli: cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw io_error("cli: write failed for '" + p.string() + "'");
}

inline std::string hash_file_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return "";
  std::stringstream ss;
  ss << in.rdbuf();
  std::ostringstream hex;
  hex << std::hex << fnv1a64(ss.str());
  return hex.str();
}

inline void write_traces_csv(const std::filesystem::path& p, const MsemState& state) {
  std::ostringstream o;
  o << "iteration,loglik,surrogate_loss\n";
  for (std::size_t s = 0; s < state.loglik_trace.size(); ++s)
    o << (s + 1) << ',' << format_double(state.loglik_trace[s]) << ','
      << format_double(state.surrogate_trace[s]) << '\n';
  write_text(p, o.str());
}

struct EstimateOutput {
  ModelParams params;
  MsemState state;
};

inline EstimateOutput run_estimate_stage(const PanelDataset& data, const RunConfig& cfg,
                                         std::uint64_t seed, ArtifactTracker& art,
                                         const std::string& prefix, bool resume) {
  MsemConfig mc = cfg.msem;
  mc.seed = seed;
  std::optional<ModelParams> init;
  MsemResume resume_info;
  const MsemResume* resume_ptr = nullptr;
  const auto ckpt_dir = art.root() / (prefix + "checkpoints");
  if (resume) {
    int best = 0;
    std::filesystem::path best_path;
    if (std::filesystem::exists(ckpt_dir))
      for (const auto& e : std::filesystem::directory_iterator(ckpt_dir)) {
        const auto name = e.path().filename().string();
        if (name.rfind("checkpoint_", 0) != 0) continue;
        int it = std::atoi(name.substr(11, name.size() - 11 - 5).c_str());
        if (it > best) {
          best = it;
          best_path = e.path();
        }
      }
    if (best == 0) throw io_error("cli: --resume requested but no checkpoint found");
    std::ifstream in(best_path);
    nlohmann::json j = nlohmann::json::parse(in);
    init = j.at("params").get<ModelParams>();
    resume_info.completed_iterations = j.at("iteration").get<int>();
    resume_info.loglik_trace = j.at("loglik_trace").get<std::vector<double>>();
    resume_info.surrogate_trace = j.at("surrogate_trace").get<std::vector<double>>();
    resume_info.sweep_counter = j.at("sweep_counter").get<std::uint64_t>();
    resume_ptr = &resume_info;
    if (resume_info.completed_iterations >= mc.n_outer)
      throw io_error("cli: checkpoint already covers all " + std::to_string(mc.n_outer) +
                     " iterations");
  } else {
    init = default_init_params(data, cfg.structure);
  }

  MsemCallback cb = nullptr;
  if (cfg.checkpoint) {
    cb = [&](int s, const ModelParams& p, const MsemState& st) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_%04d.json", s);
      nlohmann::json j{{"iteration", s},
                       {"params", p},
                       {"loglik_trace", st.loglik_trace},
                       {"surrogate_trace", st.surrogate_trace},
                       {"sweep_counter", st.sweep_counter}};
      write_text(art.path(prefix + "checkpoints/" + name), j.dump(2) + "\n");
    };
  }
  MsemRun run = run_msem(data, mc, init, cfg.threads, cb, resume_ptr);
  nlohmann::json pj = run.estimate;
  write_text(art.path(prefix + "params.json"), pj.dump(2) + "\n");
  write_traces_csv(art.path(prefix + "traces.csv"), run.state);
  return {run.estimate, run.state};
}

inline void run_simulate_stage(const RunConfig& cfg, std::uint64_t seed, ArtifactTracker& art,
                               const std::string& prefix, DgpKind kind_override,
                               bool has_override) {
  DgpSpec spec = cfg.dgp;
  if (has_override) spec.kind = kind_override;
  spec.seed = seed;
  SimResult sim;
  if (spec.kind == DgpKind::fitted) {
    if (cfg.sim_params_path.empty())
      throw io_error("cli: simulate kind 'fitted' needs params_path");
    std::ifstream in(cfg.sim_params_path);
    if (!in) throw io_error("cli: cannot open '" + cfg.sim_params_path + "'");
    ModelParams p = nlohmann::json::parse(in).get<ModelParams>();
    sim = simulate(spec, &p);
  } else {
    sim = simulate(spec);
  }
  write_panel_csv(sim.to_raw(spec.year_start), art.path(prefix + "panel.csv").string());
  write_truth_csv(sim, art.path(prefix + "truth.csv").string(), spec.year_start);
  write_text(art.path(prefix + "panel.meta.json"), panel_meta(sim.panel).dump(2) + "\n");
}

inline DiagnosticsReport run_diagnose_stage(const ModelParams& params,
                                            const PanelDataset& data, const RunConfig& cfg,
                                            std::uint64_t seed, ArtifactTracker& art,
                                            const std::string& prefix) {
  DiagnosticsOptions opt = cfg.diag;
  opt.seed = seed;
  DiagnosticsReport rep = build_report(params, data, opt, cfg.threads);
  auto dir = art.root() / prefix;
  write_report(rep, dir.string());
  // register the generated files so they land in the manifest
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file()) {
      auto rel = prefix + e.path().filename().string();
      art.path(rel);
    }
  return rep;
}

// Interior mean of the U persistence surface (extreme knots dropped).
inline double interior_persistence_mean(const PersistenceSurface& s) {
  const auto R = s.values.rows(), C = s.values.cols();
  if (R < 3 || C < 3) return s.values.mean();
  return s.values.block(1, 1, R - 2, C - 2).mean();
}

inline nlohmann::json branch_summary(const DiagnosticsReport& rep) {
  nlohmann::json j;
  for (const auto& s : rep.surfaces)
    if (s.target == "U") j["persistence_U_interior_mean"] = interior_persistence_mean(s);
  const auto& skew = rep.skewness_curves.at("U");
  j["skewness_U_first"] = skew.values.front();
  j["skewness_U_last"] = skew.values.back();
  j["marginal_V_excess_kurtosis"] = rep.marginal_densities.at("V").moments.kurtosis - 3.0;
  j["normalization_deviation_U"] = rep.normalization.u;
  j["normalization_deviation_V"] = rep.normalization.v;
  bool increasing = true;
  for (std::size_t i = 1; i < rep.growth_records.size(); ++i)
    increasing = increasing &&
                 rep.growth_records[i].variance > rep.growth_records[i - 1].variance;
  j["growth_variance_increasing"] = increasing;
  if (!rep.growth_records.empty()) {
    j["growth_kurtosis_h_first"] = rep.growth_records.front().kurtosis;
    j["growth_arch_slope_h_first"] = rep.growth_records.front().arch_slope;
  }
  return j;
}

}  // namespace detail

// Runs one subcommand against a resolved configuration. Artifacts land in
// cfg.out_dir; a manifest.json records input hashes, the seed, and a hash
// per artifact. Returns a process exit code (0 ok, 1 invariant failure,
// 2 usage/IO), leaving the output directory untouched when inputs are
// missing.
inline int dispatch(const RunConfig& cfg, Command cmd, bool resume = false,
                    std::ostream& log = std::cerr) {
  const auto t0 = std::chrono::steady_clock::now();
  nlohmann::json input_hashes = nlohmann::json::object();

  // validate inputs before touching the output directory
  try {
    switch (cmd) {
      case Command::estimate: {
        if (cfg.panel_path.empty()) throw io_error("cli: estimate needs panel_path");
        if (!std::filesystem::exists(cfg.panel_path))
          throw io_error("cli: panel file '" + cfg.panel_path + "' does not exist");
        input_hashes["panel"] = detail::hash_file_hex(cfg.panel_path);
        break;
      }
      case Command::diagnose: {
        const std::string params = cfg.diag_params_path;
        const std::string panel =
            cfg.diag_panel_path.empty() ? cfg.panel_path : cfg.diag_panel_path;
        if (params.empty() || panel.empty())
          throw io_error("cli: diagnose needs params_path and panel_path");
        for (const auto& p : {params, panel})
          if (!std::filesystem::exists(p))
            throw io_error("cli: input file '" + p + "' does not exist");
        input_hashes["params"] = detail::hash_file_hex(params);
        input_hashes["panel"] = detail::hash_file_hex(panel);
        break;
      }
      case Command::simulate: {
        if (cfg.dgp.kind == DgpKind::fitted) {
          if (cfg.sim_params_path.empty() || !std::filesystem::exists(cfg.sim_params_path))
            throw io_error("cli: simulate kind 'fitted' needs an existing params_path");
          input_hashes["params"] = detail::hash_file_hex(cfg.sim_params_path);
        }
        break;
      }
      case Command::replicate: break;
    }
  } catch (const io_error& e) {
    log << "error: " << e.what() << "\n";
    return 2;
  }

  std::filesystem::create_directories(cfg.out_dir);
  detail::ArtifactTracker art{cfg.out_dir};
  try {
    detail::write_text(art.path("effective_config.toml"), to_toml(cfg));
    const auto seed_sim = stage_seed(cfg.seed, "simulate");
    const auto seed_est = stage_seed(cfg.seed, "estimate");
    const auto seed_diag = stage_seed(cfg.seed, "diagnose");

    switch (cmd) {
      case Command::simulate:
        detail::run_simulate_stage(cfg, seed_sim, art, "", DgpKind::canonical, false);
        break;
      case Command::estimate: {
        PanelDataset data = residualize(parse_panel(cfg.panel_path));
        detail::run_estimate_stage(data, cfg, seed_est, art, "", resume);
        break;
      }
      case Command::diagnose: {
        const std::string panel_path =
            cfg.diag_panel_path.empty() ? cfg.panel_path : cfg.diag_panel_path;
        std::ifstream in(cfg.diag_params_path);
        ModelParams params = nlohmann::json::parse(in).get<ModelParams>();
        PanelDataset data = residualize(parse_panel(panel_path));
        detail::run_diagnose_stage(params, data, cfg, seed_diag, art, "");
        break;
      }
      case Command::replicate: {
        nlohmann::json summary;
        struct Branch {
          const char* name;
          DgpKind kind;
        };
        for (const Branch& br : {Branch{"canonical", DgpKind::canonical},
                                 Branch{"nonlinear", DgpKind::nonlinear_sieve}}) {
          const std::string prefix = std::string(br.name) + "/";
          detail::run_simulate_stage(cfg, seed_sim, art, prefix, br.kind, true);
          PanelDataset data =
              residualize(parse_panel((art.root() / prefix / "panel.csv").string()));
          auto est = detail::run_estimate_stage(data, cfg, seed_est, art, prefix, false);
          auto rep = detail::run_diagnose_stage(est.params, data, cfg, seed_diag, art, prefix);
          summary[br.name] = detail::branch_summary(rep);
          log << "[replicate] " << br.name << " branch done\n";
        }
        detail::write_text(art.path("summary.json"), summary.dump(2) + "\n");
        log << "replicate summary\n";
        for (const auto& [branch, metrics] : summary.items())
          for (const auto& [k, v] : metrics.items())
            log << "  " << branch << "." << k << " = " << v.dump() << "\n";
        break;
      }
    }

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    nlohmann::json manifest{{"command", command_name(cmd)},
                            {"version", kVersion},
                            {"seed", cfg.seed},
                            {"threads", cfg.threads},
                            {"inputs", input_hashes},
                            {"artifacts", art.hashes()},
                            {"walltime_sec", wall}};
    detail::write_text(std::filesystem::path(cfg.out_dir) / "manifest.json",
                       manifest.dump(2) + "\n");
    return 0;
  } catch (const io_error& e) {
    art.mark_partial();
    log << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    art.mark_partial();
    log << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace lmp
