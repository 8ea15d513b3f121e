#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "racelab/env.hpp"
#include "racelab/replay.hpp"
#include "racelab/sac.hpp"

namespace racelab {

struct RateSchedule {
  double control_hz{10.0};
  double deploy_hz{15.0};
  double learner_hz{32.0};
  double sync_hz{1.0};
  int base_hz{40};
  int physics_hz{400};

  double updates_per_step() const { return learner_hz / control_hz; }
  int sync_period_steps() const;
  void validate() const;
};

enum class RunMode { train_async, train_sync, deploy };

RunMode parse_run_mode(const std::string& name);
std::string to_string(RunMode mode);

struct TrainingOptions {
  RunMode mode{RunMode::train_async};
  std::int64_t budget_steps{12000};
  bool hdra_on{true};
  std::uint64_t seed{0};
  // Free-running actor and learner threads instead of the deterministic
  // lock-step interleaving. Not reproducible.
  bool threaded{false};
  // Called after every completed lap.
  std::function<void(const LapRecord&)> on_lap;
};

struct TrainingReport {
  RunMode mode{RunMode::train_async};
  std::int64_t env_steps{};
  std::int64_t learner_updates{};
  std::int64_t behavior_syncs{};
  std::int64_t transitions{};
  std::int64_t episodes{};
  std::int64_t recovery_ticks{};
  int recovery_timeouts{};
  int boundary_violations{};
  int safety_interventions{};
  int singularities{};
  double control_hz{};
  double sim_seconds{};
  double sim_minutes{};
  double wall_seconds{};
  std::vector<LapRecord> laps;
  std::vector<double> filter_trace;
  std::vector<double> alpha_trace;
  std::vector<std::int64_t> sync_ticks;
  std::uint64_t checksum{};
};

TrainingReport run_training(RaceEnv& env, SacLearner& learner, ReplayBuffer& buffer, const RateSchedule& rates,
                            const TrainingOptions& opts);

struct DeploymentOptions {
  int target_clean_laps{20};
  int violation_cap{50};
  // The first lap starts from rest and is not timed.
  bool discard_out_lap{true};
  double max_sim_seconds{3600.0};
};

struct LapStats {
  double t_min{};
  double t_max{};
  double t_mu{};
  double sigma{};  // sample standard deviation
};

LapStats lap_statistics(const std::vector<double>& lap_times);

struct DeploymentReport {
  bool converged{false};
  std::vector<LapRecord> laps;  // every timed lap, in order
  std::vector<double> final_lap_times;  // the consecutive clean laps that ended the run
  LapStats stats;
  int n_bound{};
  std::int64_t env_steps{};
  double sim_seconds{};
  std::uint64_t checksum_before{};
  std::uint64_t checksum_after{};
};

// Deterministic policy mean on top of the base controller, or the base
// controller alone when `policy` is null.
DeploymentReport run_deployment(RaceEnv& env, const Mlp* policy, const DeploymentOptions& opts);

nlohmann::json to_json(const LapRecord& lap);
nlohmann::json to_json(const TrainingReport& report);
nlohmann::json to_json(const DeploymentReport& report);

void write_lap_curve_csv(std::ostream& out, const std::vector<LapRecord>& laps, double control_hz);
void write_lap_table_csv(std::ostream& out, const std::vector<LapRecord>& laps);

}  // namespace racelab
