#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "racelab/controllers.hpp"
#include "racelab/track.hpp"
#include "racelab/vehicle.hpp"

namespace racelab {

enum class RaceMode { residual, e2e };
enum class TerminalCause { none, boundary_violation, safety_filter, singularity };

RaceMode parse_race_mode(const std::string& name);
std::string to_string(RaceMode mode);
std::string to_string(TerminalCause cause);

struct SafetyFilterState {
  double psi_filter{0.5235987755982988};
  double psi_min{0.5235987755982988};  // pi/6
  double psi_max{1.5707963267948966};  // pi/2
  double epsilon{0.05};
};

enum class FilterEvent { lap_completed, boundary_violation };

SafetyFilterState update_safety_filter(SafetyFilterState sf, FilterEvent event);

struct CurriculumState {
  double alpha{1.0};
  int consecutive_clean_laps{0};
  double alpha_step{0.5};
  double alpha_max{7.0};
  int laps_per_step{3};
};

CurriculumState update_curriculum(CurriculumState cs, bool lap_clean);

// Residual command ranges.
inline constexpr double kResidualDeltaMax = 0.15;
inline constexpr double kResidualSpeedMin = -0.5;
inline constexpr double kResidualSpeedMax = 2.0;
inline constexpr double kE2eSpeedMin = 0.5;

// Maps a normalised action in [-1, 1]^2 to a command in the residual box or,
// in e2e mode, to delta in [-0.42, 0.42] and v in [0.5, alpha].
ControlInput denormalize_action(double a_delta, double a_speed, RaceMode mode, double alpha);

// Residual: element-wise sum with u_rl clamped to its box. E2E: u_rl as is.
ControlInput compose_action(const ControlInput& u_rl, const ControlInput& u_base, RaceMode mode);

struct ObservationConfig {
  int horizon_points{20};  // J
  double horizon_m{6.0};   // l
  double velocity_scale{10.0};
  double yaw_rate_scale{6.0};
  double offset_scale{1.0};
  double heading_scale{3.141592653589793};
  double steering_scale{0.42};
};

int observation_dim(RaceMode mode, const ObservationConfig& cfg);

std::vector<double> build_observation(const VehicleState& state, const ControlInput& u_base,
                                      const ControlInput& u_rl_prev, const Track& track, RaceMode mode,
                                      const ObservationConfig& cfg);

struct EnvConfig {
  RaceMode mode{RaceMode::residual};
  double control_hz{10.0};
  int physics_hz{400};
  int base_hz{40};
  ObservationConfig obs{};
  double lambda_progress{10.0};
  double penalty{10.0};
  double start_s{0.0};
  double start_speed{0.5};
  double recovery_speed{1.5};
  double recovery_offset_tol{0.15};
  double recovery_heading_tol{0.15};
  double recovery_timeout_s{60.0};
  bool safety_filter_enabled{true};
  bool safety_filter_adaptive{true};
  SafetyFilterState safety_filter{};
  CurriculumState curriculum{};
};

struct StepInfo {
  double s{};
  double delta_s{};
  int lap_count{};
  double lap_time_s{};  // running time of the current lap
};

struct StepResult {
  std::vector<double> observation;
  double reward{};
  bool terminal{false};
  TerminalCause terminal_cause{TerminalCause::none};
  StepInfo info;
};

struct LapRecord {
  int lap_index{};
  double lap_time_s{};
  bool clean{true};
  int boundary_violations{};
  int safety_interventions{};
  int singularities{};
  double mean_speed{};
  double max_speed{};
  std::int64_t completed_at_tick{};  // control ticks since reset
};

struct TraceRow {
  double t_s;
  VehicleState state;
  ControlInput cmd;
  double reward;
  TerminalCause cause;
};

// Episodic racing environment. One control tick advances the plant by one
// control period; ticks spent in recovery are counted like any other tick.
class RaceEnv {
 public:
  RaceEnv(std::shared_ptr<const Track> track, VehicleParams params, EnvConfig cfg,
          std::optional<BaseController> base);

  const EnvConfig& config() const { return cfg_; }
  const Track& track() const { return *track_; }
  const VehicleParams& params() const { return params_; }
  int observation_dim() const { return racelab::observation_dim(cfg_.mode, cfg_.obs); }

  std::vector<double> reset(std::uint64_t seed);

  // Advances one control period with the policy's normalised action.
  StepResult step(double a_delta, double a_speed);
  // Same with the residual (or e2e) command given directly.
  StepResult step_command(const ControlInput& u_rl);

  bool in_recovery() const { return in_recovery_; }
  // One control period under the recovery controller. Returns the first
  // observation of the new episode once the car has realigned.
  std::optional<std::vector<double>> recovery_tick();

  std::vector<double> observation() const;

  const VehicleState& state() const { return state_; }
  void set_state(const VehicleState& st) { state_ = st; }
  ControlInput base_command() const { return u_base_; }
  ControlInput last_rl_command() const { return u_rl_prev_; }

  const SafetyFilterState& safety_filter() const { return filter_; }
  const CurriculumState& curriculum() const { return curriculum_; }
  double alpha() const { return curriculum_.alpha; }

  const std::vector<LapRecord>& laps() const { return laps_; }
  // psi_filter after every change, starting with the initial value.
  const std::vector<double>& filter_trace() const { return filter_trace_; }
  const std::vector<double>& alpha_trace() const { return alpha_trace_; }

  std::int64_t tick() const { return tick_; }
  std::int64_t episode() const { return episode_; }
  int recovery_timeouts() const { return recovery_timeouts_; }

  void enable_trace(bool on) { trace_on_ = on; }
  const std::vector<TraceRow>& trace() const { return trace_; }
  void clear_trace() { trace_.clear(); }

  static void write_trace_header(std::ostream& out);
  static void write_trace_rows(std::ostream& out, const std::vector<TraceRow>& rows);

 private:
  struct TickOutcome {
    double delta_s{};
    TerminalCause cause{TerminalCause::none};
  };

  ControlInput recovery_base_command() const;
  ControlInput query_base() const;
  TickOutcome advance(const ControlInput& u_rl, bool recovery);
  void on_lap_completed();
  void start_episode();
  int physics_ticks_for(std::int64_t control_tick) const;

  std::shared_ptr<const Track> track_;
  VehicleParams params_;
  EnvConfig cfg_;
  std::optional<BaseController> base_;
  BaseController recovery_controller_;

  VehicleState state_{};
  ControlInput u_base_{};
  ControlInput u_rl_prev_{};
  SafetyFilterState filter_{};
  CurriculumState curriculum_{};
  std::int64_t tick_{0};
  std::int64_t physics_tick_{0};
  std::int64_t episode_{0};
  bool in_recovery_{false};
  double recovery_elapsed_{0.0};
  int recovery_timeouts_{0};

  double lap_progress_{0.0};
  std::int64_t lap_start_tick_{0};
  LapRecord current_lap_{};
  double lap_speed_sum_{0.0};
  std::int64_t lap_speed_samples_{0};
  bool in_violation_{false};
  std::vector<LapRecord> laps_;
  std::vector<double> filter_trace_;
  std::vector<double> alpha_trace_;

  bool trace_on_{false};
  std::vector<TraceRow> trace_;
};

}  // namespace racelab
