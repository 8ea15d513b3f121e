#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "racelab/controllers.hpp"
#include "racelab/env.hpp"
#include "racelab/orchestrator.hpp"
#include "racelab/sac.hpp"
#include "racelab/vehicle.hpp"

namespace racelab {

// Bad configuration: exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Anything that goes wrong after the configuration was accepted: exit code 3.
class RunError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

// The full default tree, one section per module.
nlohmann::json default_config_tree();

// FNV-1a over the compact dump of the default tree.
std::uint64_t default_config_hash();

const char* code_version();

struct AblationSettings {
  std::vector<std::uint64_t> seeds;
  std::int64_t budget_steps{};
  double window_minutes{};
  double sync_learner_hz{};
  std::vector<std::string> variants;
};

struct TransferSettings {
  std::string shots;
  std::string target_track;
  std::int64_t few_shot_steps{};
  double histogram_bin_s{};
};

struct ExperimentConfig {
  nlohmann::json tree;

  std::string track;
  TirePreset tire{TirePreset::turbo};
  ControllerKind controller{ControllerKind::map};
  RaceMode mode{RaceMode::residual};
  std::uint64_t seed{};
  std::int64_t budget_steps{};
  RunMode run_mode{RunMode::train_async};
  std::filesystem::path output_dir;
  std::filesystem::path checkpoint;
  std::filesystem::path map_table;
  bool baseline_only{false};
  bool hdra_on{true};
  bool threaded{false};
  int trace_stride{10};

  VelocityProfileParams profile;
  double profile_friction_scale{};
  VehicleParams vehicle;
  PurePursuitConfig pursuit;
  FtgConfig ftg;
  EnvConfig env;
  SacConfig sac;
  RateSchedule rates;
  DeploymentOptions deploy;
  AblationSettings ablation;
  TransferSettings transfer;
};

// Defaults, then the YAML file, then `section.key=value` overrides in order.
// The seed falls back to `env_seed` (RACE_LAB_SEED) when neither the file nor
// an override sets it. Throws ConfigError with the offending line or override.
ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& file,
                                const std::vector<std::string>& overrides,
                                const std::optional<std::string>& env_seed = std::nullopt);

// Typed view of an already merged tree; applies the cross-field rules.
ExperimentConfig config_from_tree(const nlohmann::json& tree);

// A named bundled layout, a file under the data directory or a CSV path.
std::shared_ptr<Track> resolve_track(const std::string& spec, const ExperimentConfig& cfg);

struct Scenario {
  std::shared_ptr<Track> track;
  VehicleParams params;
  std::optional<BaseController> base;
};

Scenario make_scenario(const ExperimentConfig& cfg, const std::string& track_spec);

// Training environment config and the deployment variant: deploy rate, the
// filter fixed at its upper bound and the curriculum frozen at `alpha`.
EnvConfig training_env_config(const ExperimentConfig& cfg);
EnvConfig deployment_env_config(const ExperimentConfig& cfg, double alpha);

void write_manifest(const ExperimentConfig& cfg, const std::string& verb,
                    const std::vector<std::string>& argv);

struct TrainOutcome {
  TrainingReport report;
  double final_alpha{1.0};
};

TrainOutcome cmd_train(const ExperimentConfig& cfg);

struct DeployOutcome {
  DeploymentReport report;
  std::vector<LapRecord> untimed_laps;
  std::filesystem::path lap_csv;
};

DeployOutcome cmd_deploy(const ExperimentConfig& cfg);

// Lap statistics of a deployment recomputed from its per-lap CSV alone.
struct LapCsvSummary {
  LapStats stats;
  int n_bound{};
  int trailing_clean{};
};
LapCsvSummary summarize_lap_csv(const std::filesystem::path& path, int target_clean_laps);

struct AblationRun {
  std::string variant;
  std::uint64_t seed{};
  double first_clean_minutes{-1.0};  // -1 when no clean lap was driven
  std::vector<double> window_lap_times;
  int window_bound{};
  double sim_minutes{};
  std::vector<double> filter_trace;
  std::vector<double> alpha_trace;
  std::int64_t learner_updates{};
};

struct AblationRow {
  std::string run;
  LapStats stats;
  double n_laps_mu{};
  double n_bound_mu{};
};

// One training run of the grid. Variants: hdra_td3_async, hdra_td3_sync,
// td3_async, td1_async.
AblationRun run_ablation_variant(const ExperimentConfig& cfg, const std::string& variant, std::uint64_t seed);

// Pools the final-window laps of every seed of one variant.
AblationRow summarize_ablation(const std::string& variant, const std::vector<AblationRun>& runs);

nlohmann::json to_json(const AblationRun& run);
AblationRun ablation_run_from_json(const nlohmann::json& j);
void write_ablation_summary_csv(std::ostream& out, const std::vector<AblationRow>& rows);

struct AblationOutcome {
  std::vector<AblationRun> runs;
  std::vector<AblationRow> rows;
};

AblationOutcome cmd_ablation(const ExperimentConfig& cfg);

struct HistogramBin {
  double lo{};
  double hi{};
  int count{};
};

// Fixed-width bins anchored at multiples of `width`.
std::vector<HistogramBin> lap_histogram(const std::vector<double>& lap_times, double width);

struct TransferOutcome {
  DeployOutcome deployment;
  std::vector<HistogramBin> histogram;
};

TransferOutcome cmd_transfer(const ExperimentConfig& cfg);

nlohmann::json track_info(const Track& track);
nlohmann::json cmd_track_info(const ExperimentConfig& cfg);

std::filesystem::path cmd_make_map_table(const ExperimentConfig& cfg);

}  // namespace racelab
