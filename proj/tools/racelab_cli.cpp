#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "racelab/experiment.hpp"
#include "racelab/track.hpp"

using namespace racelab;

namespace {

struct Shortcut {
  const char* flag;
  const char* key;
  const char* help;
};

// Flags that map onto config keys; every other key is reachable as --section.key=value.
const std::vector<Shortcut> kShortcuts{
    {"--track", "experiment.track", "track name or CSV path"},
    {"--tire", "experiment.tire_preset", "turbo or tpu"},
    {"--controller", "experiment.controller", "pp, map, ftg or none"},
    {"--mode", "experiment.mode", "residual or e2e"},
    {"--seed", "experiment.seed", "random seed (falls back to RACE_LAB_SEED)"},
    {"--budget-steps", "experiment.budget_steps", "training budget in env steps"},
    {"--run-mode", "experiment.run_mode", "train_async or train_sync"},
    {"--output", "experiment.output_dir", "output directory"},
    {"--checkpoint", "experiment.checkpoint", "checkpoint directory"},
    {"--shots", "transfer.shots", "zero or few"},
    {"--target-track", "transfer.target_track", "transfer target track"},
};

struct Verb {
  CLI::App* app{};
  std::optional<std::string> config;
  std::vector<std::optional<std::string>> values;
  bool baseline_only{false};
  std::string export_path;
};

Verb add_verb(CLI::App& root, const std::string& name, const std::string& help) {
  Verb v;
  v.app = root.add_subcommand(name, help);
  v.app->allow_extras();
  v.values.resize(kShortcuts.size());
  return v;
}

void add_options(Verb& v) {
  v.app->add_option("-c,--config", v.config, "YAML config file");
  for (std::size_t i = 0; i < kShortcuts.size(); ++i) {
    v.app->add_option(kShortcuts[i].flag, v.values[i], kShortcuts[i].help);
  }
}

std::vector<std::string> overrides_of(const Verb& v) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < kShortcuts.size(); ++i) {
    if (v.values[i]) out.push_back(std::string(kShortcuts[i].key) + "=" + *v.values[i]);
  }
  if (v.baseline_only) out.emplace_back("experiment.baseline_only=true");
  for (const auto& extra : v.app->remaining()) {
    if (extra.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + extra + "'");
    out.push_back(extra.substr(2));
  }
  return out;
}

void print_deploy(const DeployOutcome& d) {
  const auto& r = d.report;
  std::cout << "converged " << (r.converged ? "yes" : "no") << "  laps " << r.laps.size() << "  n_bound " << r.n_bound
            << '\n';
  if (r.converged) {
    std::cout << "t_min " << r.stats.t_min << "  t_max " << r.stats.t_max << "  t_mu " << r.stats.t_mu << "  sigma "
              << r.stats.sigma << '\n';
  }
}

int run(const std::string& verb, const Verb& v, const std::vector<std::string>& argv) {
  const char* env_seed = std::getenv("RACE_LAB_SEED");
  const ExperimentConfig cfg =
      resolve_config(v.config, overrides_of(v), env_seed ? std::optional<std::string>(env_seed) : std::nullopt);

  if (verb == "track-info") {
    nlohmann::json info = cmd_track_info(cfg);
    if (!v.export_path.empty()) {
      save_track_csv(*resolve_track(cfg.track, cfg), v.export_path);
      info["exported"] = v.export_path;
    }
    std::cout << info.dump(2) << '\n';
    return kExitOk;
  }
  write_manifest(cfg, verb, argv);
  if (verb == "train") {
    const TrainOutcome t = cmd_train(cfg);
    const auto& r = t.report;
    std::cout << "steps " << r.env_steps << "  updates " << r.learner_updates << "  laps " << r.laps.size()
              << "  violations " << r.boundary_violations << "  sim_min " << r.sim_minutes << "  wall_s "
              << r.wall_seconds << '\n';
    std::cout << "artifacts in " << cfg.output_dir.string() << '\n';
  } else if (verb == "deploy") {
    const DeployOutcome d = cmd_deploy(cfg);
    print_deploy(d);
    if (!d.report.converged) return kExitRuntime;
  } else if (verb == "ablation") {
    const AblationOutcome a = cmd_ablation(cfg);
    write_ablation_summary_csv(std::cout, a.rows);
  } else if (verb == "transfer") {
    const TransferOutcome t = cmd_transfer(cfg);
    print_deploy(t.deployment);
  } else if (verb == "make-map-table") {
    std::cout << cmd_make_map_table(cfg).string() << '\n';
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App root{"racelab: residual and end-to-end RL racing experiments"};
  root.require_subcommand(1);
  std::vector<Verb> verbs;
  verbs.push_back(add_verb(root, "train", "train a policy"));
  verbs.push_back(add_verb(root, "deploy", "deploy a checkpoint or the base controller until 20 clean laps"));
  verbs.push_back(add_verb(root, "ablation", "run the HDRA / TD-steps / sync-async grid"));
  verbs.push_back(add_verb(root, "transfer", "zero- or few-shot transfer to another track"));
  verbs.push_back(add_verb(root, "track-info", "print track statistics"));
  verbs.push_back(add_verb(root, "make-map-table", "write the MAP steering lookup table"));
  for (auto& v : verbs) add_options(v);
  verbs[1].app->add_flag("--baseline-only", verbs[1].baseline_only, "deploy the base controller alone");
  verbs[4].app->add_option("--export", verbs[4].export_path, "write the track as CSV");

  try {
    root.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = root.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  const std::vector<std::string> args(argv, argv + argc);
  for (const auto& v : verbs) {
    if (!v.app->parsed()) continue;
    try {
      return run(v.app->get_name(), v, args);
    } catch (const ConfigError& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return kExitConfig;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitRuntime;
    }
  }
  return kExitConfig;
}
