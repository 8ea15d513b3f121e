#include "racelab/env.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace racelab {

RaceMode parse_race_mode(const std::string& name) {
  if (name == "residual") return RaceMode::residual;
  if (name == "e2e") return RaceMode::e2e;
  throw std::invalid_argument("unknown mode '" + name + "' (expected residual or e2e)");
}

std::string to_string(RaceMode mode) { return mode == RaceMode::residual ? "residual" : "e2e"; }

std::string to_string(TerminalCause cause) {
  switch (cause) {
    case TerminalCause::none: return "none";
    case TerminalCause::boundary_violation: return "boundary_violation";
    case TerminalCause::safety_filter: return "safety_filter";
    case TerminalCause::singularity: return "singularity";
  }
  return "none";
}

SafetyFilterState update_safety_filter(SafetyFilterState sf, FilterEvent event) {
  const double step = event == FilterEvent::lap_completed ? sf.epsilon : -sf.epsilon;
  sf.psi_filter = std::clamp(sf.psi_filter + step, sf.psi_min, sf.psi_max);
  return sf;
}

CurriculumState update_curriculum(CurriculumState cs, bool lap_clean) {
  if (!lap_clean) {
    cs.consecutive_clean_laps = 0;
    return cs;
  }
  if (++cs.consecutive_clean_laps >= cs.laps_per_step) {
    cs.alpha = std::min(cs.alpha + cs.alpha_step, cs.alpha_max);
    cs.consecutive_clean_laps = 0;
  }
  return cs;
}

ControlInput denormalize_action(double a_delta, double a_speed, RaceMode mode, double alpha) {
  a_delta = std::clamp(a_delta, -1.0, 1.0);
  a_speed = std::clamp(a_speed, -1.0, 1.0);
  if (mode == RaceMode::residual) {
    return {kResidualDeltaMax * a_delta,
            kResidualSpeedMin + 0.5 * (a_speed + 1.0) * (kResidualSpeedMax - kResidualSpeedMin)};
  }
  return {kBaseDeltaMax * a_delta, kE2eSpeedMin + 0.5 * (a_speed + 1.0) * (alpha - kE2eSpeedMin)};
}

ControlInput compose_action(const ControlInput& u_rl, const ControlInput& u_base, RaceMode mode) {
  if (mode == RaceMode::e2e) return u_rl;
  return {u_base.delta_cmd + std::clamp(u_rl.delta_cmd, -kResidualDeltaMax, kResidualDeltaMax),
          u_base.v_cmd + std::clamp(u_rl.v_cmd, kResidualSpeedMin, kResidualSpeedMax)};
}

int observation_dim(RaceMode mode, const ObservationConfig& cfg) {
  return (mode == RaceMode::residual ? 9 : 7) + 6 * cfg.horizon_points;
}

std::vector<double> build_observation(const VehicleState& st, const ControlInput& u_base,
                                      const ControlInput& u_rl_prev, const Track& track, RaceMode mode,
                                      const ObservationConfig& cfg) {
  std::vector<double> o;
  o.reserve(static_cast<std::size_t>(observation_dim(mode, cfg)));
  o.push_back(st.v_x / cfg.velocity_scale);
  o.push_back(st.v_y / cfg.velocity_scale);
  o.push_back(st.r / cfg.yaw_rate_scale);
  o.push_back(st.n / cfg.offset_scale);
  o.push_back(st.mu / cfg.heading_scale);
  if (mode == RaceMode::residual) {
    o.push_back(u_base.delta_cmd / cfg.steering_scale);
    o.push_back(u_base.v_cmd / cfg.velocity_scale);
  }
  o.push_back(u_rl_prev.delta_cmd / cfg.steering_scale);
  o.push_back(u_rl_prev.v_cmd / cfg.velocity_scale);

  const GlobalPose car = frenet_to_global(track, {st.s, st.n, st.mu});
  const double c = std::cos(car.heading);
  const double sn = std::sin(car.heading);
  auto push_body = [&](Vec2 p) {
    const double dx = p.x - car.x;
    const double dy = p.y - car.y;
    o.push_back((c * dx + sn * dy) / cfg.horizon_m);
    o.push_back((-sn * dx + c * dy) / cfg.horizon_m);
  };

  const int J = cfg.horizon_points;
  std::vector<double> ss(static_cast<std::size_t>(J));
  for (int k = 0; k < J; ++k) ss[static_cast<std::size_t>(k)] = st.s + k * cfg.horizon_m / (J - 1);
  for (double s : ss) push_body(track.position_at(s));
  for (double s : ss) {
    const GlobalPose p = frenet_to_global(track, {s, track.w_left_at(s), 0.0});
    push_body({p.x, p.y});
  }
  for (double s : ss) {
    const GlobalPose p = frenet_to_global(track, {s, -track.w_right_at(s), 0.0});
    push_body({p.x, p.y});
  }
  return o;
}

RaceEnv::RaceEnv(std::shared_ptr<const Track> track, VehicleParams params, EnvConfig cfg,
                 std::optional<BaseController> base)
    : track_(std::move(track)),
      params_(std::move(params)),
      cfg_(cfg),
      base_(std::move(base)),
      recovery_controller_(BaseController::make_pure_pursuit({})) {
  if (!track_) throw std::invalid_argument("environment needs a track");
  params_.validate();
  if (cfg_.mode == RaceMode::residual && (!base_ || base_->kind() == ControllerKind::none)) {
    throw std::invalid_argument("residual mode requires a base controller");
  }
  if (cfg_.mode == RaceMode::e2e && base_) {
    throw std::invalid_argument("e2e mode takes no base controller");
  }
  if (!(cfg_.control_hz > 0.0) || cfg_.control_hz > cfg_.physics_hz) {
    throw std::invalid_argument("control_hz must lie in (0, physics_hz]");
  }
  if (cfg_.base_hz <= 0 || cfg_.physics_hz % cfg_.base_hz != 0) {
    throw std::invalid_argument("physics_hz must be a multiple of base_hz");
  }
  if (cfg_.obs.horizon_points < 2) throw std::invalid_argument("horizon_points must be >= 2");
  if (track_->velocity_profile().empty()) throw std::invalid_argument("track has no velocity profile");
  // Pursuit-type base controllers also drive recovery; FTG has no reference
  // line to return to, so recovery falls back to pure pursuit.
  if (base_ && (base_->kind() == ControllerKind::pp || base_->kind() == ControllerKind::map)) {
    recovery_controller_ = *base_;
  }
}

std::vector<double> RaceEnv::reset(std::uint64_t /*seed*/) {
  state_ = VehicleState{};
  state_.s = track_->wrap_s(cfg_.start_s);
  state_.v_x = cfg_.start_speed;
  tick_ = 0;
  physics_tick_ = 0;
  episode_ = 0;
  in_recovery_ = false;
  recovery_elapsed_ = 0.0;
  recovery_timeouts_ = 0;
  filter_ = cfg_.safety_filter;
  filter_.psi_filter = std::clamp(filter_.psi_filter, filter_.psi_min, filter_.psi_max);
  curriculum_ = cfg_.curriculum;
  lap_progress_ = 0.0;
  lap_start_tick_ = 0;
  current_lap_ = LapRecord{};
  lap_speed_sum_ = 0.0;
  lap_speed_samples_ = 0;
  in_violation_ = false;
  laps_.clear();
  filter_trace_.assign(1, filter_.psi_filter);
  alpha_trace_.assign(1, curriculum_.alpha);
  trace_.clear();
  u_rl_prev_ = {};
  u_base_ = query_base();
  return observation();
}

ControlInput RaceEnv::query_base() const {
  if (!base_) return {};
  return base_->command(state_, *track_);
}

ControlInput RaceEnv::recovery_base_command() const {
  ControlInput u = recovery_controller_.command(state_, *track_);
  u.v_cmd = std::min(u.v_cmd, cfg_.recovery_speed);
  return u;
}

std::vector<double> RaceEnv::observation() const {
  return build_observation(state_, query_base(), u_rl_prev_, *track_, cfg_.mode, cfg_.obs);
}

int RaceEnv::physics_ticks_for(std::int64_t k) const {
  const auto at = [&](std::int64_t i) {
    return static_cast<std::int64_t>(std::floor(static_cast<double>(i) * cfg_.physics_hz / cfg_.control_hz + 1e-9));
  };
  return static_cast<int>(at(k + 1) - at(k));
}

RaceEnv::TickOutcome RaceEnv::advance(const ControlInput& u_rl, bool recovery) {
  TickOutcome out;
  const double dt = 1.0 / cfg_.physics_hz;
  const int base_div = cfg_.physics_hz / cfg_.base_hz;
  const int n = physics_ticks_for(tick_);
  bool frozen = false;
  for (int i = 0; i < n; ++i, ++physics_tick_) {
    if (physics_tick_ % base_div == 0) u_base_ = recovery ? recovery_base_command() : query_base();
    if (frozen) continue;
    const ControlInput cmd = recovery ? u_base_ : compose_action(u_rl, u_base_, cfg_.mode);
    const double s_prev = state_.s;
    try {
      state_ = racelab::step(state_, cmd, params_, *track_, dt);
    } catch (const SingularityError&) {
      out.cause = TerminalCause::singularity;
      frozen = true;
      continue;
    }
    const double ds = progress_delta(*track_, s_prev, state_.s);
    out.delta_s += ds;
    lap_progress_ += ds;
    lap_speed_sum_ += state_.v_x;
    ++lap_speed_samples_;
    current_lap_.max_speed = std::max(current_lap_.max_speed, state_.v_x);
    if (lap_progress_ >= track_->total_length()) {
      lap_progress_ -= track_->total_length();
      on_lap_completed();
    }
  }
  ++tick_;

  if (out.cause == TerminalCause::singularity) {
    ++current_lap_.singularities;
    return out;
  }
  const bool outside = boundary_violation(*track_, {state_.s, state_.n, state_.mu});
  if (outside && !in_violation_) {
    ++current_lap_.boundary_violations;
    current_lap_.clean = false;
    if (cfg_.safety_filter_adaptive) {
      filter_ = update_safety_filter(filter_, FilterEvent::boundary_violation);
      filter_trace_.push_back(filter_.psi_filter);
    }
  }
  in_violation_ = outside;
  if (recovery) return out;
  if (outside) {
    out.cause = TerminalCause::boundary_violation;
  } else if (cfg_.safety_filter_enabled && std::abs(state_.mu) > filter_.psi_filter) {
    out.cause = TerminalCause::safety_filter;
    ++current_lap_.safety_interventions;
  }
  return out;
}

void RaceEnv::on_lap_completed() {
  // Credited at the end of the running control tick.
  LapRecord rec = current_lap_;
  rec.lap_index = static_cast<int>(laps_.size());
  rec.lap_time_s = static_cast<double>(tick_ + 1 - lap_start_tick_) / cfg_.control_hz;
  rec.completed_at_tick = tick_ + 1;
  rec.mean_speed = lap_speed_samples_ > 0 ? lap_speed_sum_ / static_cast<double>(lap_speed_samples_) : 0.0;
  laps_.push_back(rec);

  if (rec.clean && cfg_.safety_filter_adaptive) {
    filter_ = update_safety_filter(filter_, FilterEvent::lap_completed);
    filter_trace_.push_back(filter_.psi_filter);
  }
  if (cfg_.mode == RaceMode::e2e) {
    const double before = curriculum_.alpha;
    curriculum_ = update_curriculum(curriculum_, rec.clean);
    if (curriculum_.alpha != before) alpha_trace_.push_back(curriculum_.alpha);
  }

  lap_start_tick_ = tick_ + 1;
  current_lap_ = LapRecord{};
  // A car still outside the track when the line is crossed starts the next lap dirty.
  current_lap_.clean = !in_violation_;
  lap_speed_sum_ = 0.0;
  lap_speed_samples_ = 0;
}

StepResult RaceEnv::step(double a_delta, double a_speed) {
  return step_command(denormalize_action(a_delta, a_speed, cfg_.mode, curriculum_.alpha));
}

StepResult RaceEnv::step_command(const ControlInput& u_rl) {
  if (in_recovery_) throw std::logic_error("step() called during recovery");
  const TickOutcome t = advance(u_rl, false);
  u_rl_prev_ = u_rl;

  StepResult r;
  r.terminal_cause = t.cause;
  r.terminal = t.cause != TerminalCause::none;
  r.reward = r.terminal ? -cfg_.penalty : cfg_.lambda_progress * t.delta_s;
  r.info = {state_.s, t.delta_s, static_cast<int>(laps_.size()),
            static_cast<double>(tick_ - lap_start_tick_) / cfg_.control_hz};
  r.observation = observation();
  if (trace_on_) {
    const ControlInput cmd = compose_action(u_rl, u_base_, cfg_.mode);
    trace_.push_back({static_cast<double>(tick_) / cfg_.control_hz, state_, cmd, r.reward, t.cause});
  }
  if (r.terminal) {
    const bool aligned = t.cause != TerminalCause::singularity && !in_violation_ &&
                         std::abs(state_.n) < cfg_.recovery_offset_tol &&
                         std::abs(state_.mu) < cfg_.recovery_heading_tol;
    in_recovery_ = !aligned;
    recovery_elapsed_ = 0.0;
    if (aligned) start_episode();
  }
  return r;
}

void RaceEnv::start_episode() {
  ++episode_;
  in_recovery_ = false;
  u_rl_prev_ = {};
}

std::optional<std::vector<double>> RaceEnv::recovery_tick() {
  if (!in_recovery_) throw std::logic_error("recovery_tick() called outside recovery");
  const TickOutcome t = advance({}, true);
  recovery_elapsed_ += 1.0 / cfg_.control_hz;
  if (trace_on_) {
    trace_.push_back({static_cast<double>(tick_) / cfg_.control_hz, state_, u_base_, 0.0, t.cause});
  }
  const bool aligned = t.cause == TerminalCause::none && !in_violation_ &&
                       std::abs(state_.n) < cfg_.recovery_offset_tol &&
                       std::abs(state_.mu) < cfg_.recovery_heading_tol;
  if (!aligned && t.cause != TerminalCause::singularity && recovery_elapsed_ < cfg_.recovery_timeout_s) {
    return std::nullopt;
  }
  if (!aligned) {
    // Hard reset onto the reference line at the current progress.
    ++recovery_timeouts_;
    const double s = state_.s;
    state_ = VehicleState{};
    state_.s = s;
    state_.v_x = cfg_.start_speed;
    in_violation_ = false;
  }
  start_episode();
  return observation();
}

void RaceEnv::write_trace_header(std::ostream& out) {
  out << "t_s,s_m,n_m,mu_rad,v_x,v_y,r,delta,delta_cmd,v_cmd,reward,terminal_cause\n";
}

void RaceEnv::write_trace_rows(std::ostream& out, const std::vector<TraceRow>& rows) {
  for (const auto& row : rows) {
    out << row.t_s << ',' << row.state.s << ',' << row.state.n << ',' << row.state.mu << ','
        << row.state.v_x << ',' << row.state.v_y << ',' << row.state.r << ',' << row.state.delta << ','
        << row.cmd.delta_cmd << ',' << row.cmd.v_cmd << ',' << row.reward << ',' << to_string(row.cause)
        << '\n';
  }
}

}  // namespace racelab
