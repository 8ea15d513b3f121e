#include "racelab/orchestrator.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <memory>
#include <mutex>
#include <numeric>
#include <ostream>
#include <thread>

#include <nlohmann/json.hpp>

namespace racelab {

int RateSchedule::sync_period_steps() const {
  return std::max(1, static_cast<int>(std::lround(control_hz / sync_hz)));
}

void RateSchedule::validate() const {
  if (!(control_hz > 0.0) || !(deploy_hz > 0.0) || !(learner_hz > 0.0) || !(sync_hz > 0.0)) {
    throw std::invalid_argument("rates must be positive");
  }
  if (base_hz <= 0 || physics_hz % base_hz != 0) {
    throw std::invalid_argument("physics_hz must be a multiple of base_hz");
  }
  if (sync_hz > control_hz) throw std::invalid_argument("sync_hz cannot exceed control_hz");
}

RunMode parse_run_mode(const std::string& name) {
  if (name == "train_async") return RunMode::train_async;
  if (name == "train_sync") return RunMode::train_sync;
  if (name == "deploy") return RunMode::deploy;
  throw std::invalid_argument("unknown run mode '" + name + "' (expected train_async, train_sync or deploy)");
}

std::string to_string(RunMode mode) {
  switch (mode) {
    case RunMode::train_async: return "train_async";
    case RunMode::train_sync: return "train_sync";
    case RunMode::deploy: return "deploy";
  }
  return "train_async";
}

namespace {

// Updates due after `steps` control ticks at `ratio` updates per tick.
std::int64_t updates_due(std::int64_t steps, double ratio) {
  return static_cast<std::int64_t>(std::floor(static_cast<double>(steps) * ratio + 1e-9));
}

struct Actor {
  RaceEnv& env;
  ReplayBuffer& buffer;
  const TrainingOptions& opts;
  double penalty;
  int hdra_n;
  Rng rng;
  std::vector<double> obs;
  std::int64_t transitions{0};
  std::int64_t recovery_ticks{0};
  std::size_t laps_seen{0};

  // One control tick with the given behaviour policy.
  void tick(const Mlp& policy) {
    if (env.in_recovery()) {
      ++recovery_ticks;
      if (auto o = env.recovery_tick()) obs = std::move(*o);
    } else {
      const Vector a = policy_action(policy, obs, rng, false);
      const std::int64_t episode = env.episode();
      StepResult r = env.step(a(0), a(1));
      Transition t{obs, {a(0), a(1)}, r.reward, r.observation, r.terminal, episode};
      if (r.terminal) {
        buffer.push_terminal(t, opts.hdra_on ? hdra_n : 0, penalty);
        if (!env.in_recovery()) obs = env.observation();
      } else {
        buffer.push(t);
        obs = std::move(r.observation);
      }
      ++transitions;
    }
    if (opts.on_lap) {
      while (laps_seen < env.laps().size()) opts.on_lap(env.laps()[laps_seen++]);
    }
  }
};

void fill_env_counters(TrainingReport& rep, const RaceEnv& env) {
  rep.laps = env.laps();
  rep.filter_trace = env.filter_trace();
  rep.alpha_trace = env.alpha_trace();
  rep.episodes = env.episode() + 1;
  rep.recovery_timeouts = env.recovery_timeouts();
  for (const auto& l : rep.laps) {
    rep.boundary_violations += l.boundary_violations;
    rep.safety_interventions += l.safety_interventions;
    rep.singularities += l.singularities;
  }
}

}  // namespace

TrainingReport run_training(RaceEnv& env, SacLearner& learner, ReplayBuffer& buffer, const RateSchedule& rates,
                            const TrainingOptions& opts) {
  rates.validate();
  if (opts.mode == RunMode::deploy) throw std::invalid_argument("run_training needs a training mode");
  if (opts.budget_steps <= 0) throw std::invalid_argument("budget_steps must be positive");
  if (std::abs(env.config().control_hz - rates.control_hz) > 1e-12) {
    throw std::invalid_argument("environment control rate differs from the schedule");
  }
  const auto wall0 = std::chrono::steady_clock::now();

  TrainingReport rep;
  rep.mode = opts.mode;
  rep.control_hz = rates.control_hz;
  Actor actor{env, buffer, opts, env.config().penalty, learner.config().hdra_N,
              Rng(opts.seed ^ 0x94d049bb133111ebULL), env.reset(opts.seed)};

  const bool sync = opts.mode == RunMode::train_sync;
  const double ratio = sync ? std::round(rates.updates_per_step()) : rates.updates_per_step();
  const int sync_period = rates.sync_period_steps();

  if (!opts.threaded || sync) {
    Mlp behavior = learner.actor();
    for (std::int64_t t = 0; t < opts.budget_steps; ++t) {
      actor.tick(sync ? learner.actor() : behavior);
      const std::int64_t k = updates_due(t + 1, ratio) - updates_due(t, ratio);
      for (std::int64_t i = 0; i < k; ++i) {
        if (learner.update_from(buffer)) ++rep.learner_updates;
      }
      if (!sync && (t + 1) % sync_period == 0) {
        behavior = learner.actor();
        ++rep.behavior_syncs;
        rep.sync_ticks.push_back(t + 1);
      }
    }
  } else {
    // Free-running: the learner chases the update quota implied by the actor's
    // progress and publishes actor snapshots on request.
    std::atomic<std::int64_t> steps{0};
    std::atomic<bool> stop{false};
    std::atomic<bool> sync_requested{false};
    std::mutex snap_mu;
    auto snapshot = std::make_shared<const Mlp>(learner.actor());
    std::atomic<std::int64_t> updates{0};

    std::thread learner_thread([&] {
      while (!stop.load()) {
        if (sync_requested.exchange(false)) {
          auto fresh = std::make_shared<const Mlp>(learner.actor());
          std::lock_guard lock(snap_mu);
          snapshot = std::move(fresh);
        }
        if (updates.load() < updates_due(steps.load(), ratio)) {
          if (learner.update_from(buffer)) {
            updates.fetch_add(1);
          } else {
            std::this_thread::yield();
          }
        } else {
          std::this_thread::yield();
        }
      }
    });
    for (std::int64_t t = 0; t < opts.budget_steps; ++t) {
      std::shared_ptr<const Mlp> policy;
      {
        std::lock_guard lock(snap_mu);
        policy = snapshot;
      }
      actor.tick(*policy);
      steps.store(t + 1);
      if ((t + 1) % sync_period == 0) {
        sync_requested.store(true);
        ++rep.behavior_syncs;
        rep.sync_ticks.push_back(t + 1);
      }
    }
    stop.store(true);
    learner_thread.join();
    rep.learner_updates = updates.load();
  }

  rep.env_steps = opts.budget_steps;
  rep.transitions = actor.transitions;
  rep.recovery_ticks = actor.recovery_ticks;
  rep.sim_seconds = static_cast<double>(rep.env_steps) / rates.control_hz;
  rep.sim_minutes = rep.sim_seconds / 60.0;
  fill_env_counters(rep, env);
  rep.checksum = learner.checksum();
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  return rep;
}

LapStats lap_statistics(const std::vector<double>& t) {
  LapStats s;
  if (t.empty()) return s;
  s.t_min = *std::min_element(t.begin(), t.end());
  s.t_max = *std::max_element(t.begin(), t.end());
  s.t_mu = std::accumulate(t.begin(), t.end(), 0.0) / static_cast<double>(t.size());
  if (t.size() > 1) {
    double ss = 0.0;
    for (double x : t) ss += (x - s.t_mu) * (x - s.t_mu);
    s.sigma = std::sqrt(ss / static_cast<double>(t.size() - 1));
  }
  return s;
}

DeploymentReport run_deployment(RaceEnv& env, const Mlp* policy, const DeploymentOptions& opts) {
  if (opts.target_clean_laps < 1) throw std::invalid_argument("target_clean_laps must be >= 1");
  if (!policy && env.config().mode == RaceMode::e2e) {
    throw std::invalid_argument("an e2e deployment needs a policy");
  }
  if (policy && policy->input_dim() != env.observation_dim()) {
    throw DimensionError("policy input dimension " + std::to_string(policy->input_dim()) +
                         " does not match the observation dimension " + std::to_string(env.observation_dim()));
  }
  DeploymentReport rep;
  if (policy) rep.checksum_before = parameter_checksum(*policy);

  std::vector<double> obs = env.reset(0);
  Rng unused(0);
  const auto max_steps = static_cast<std::int64_t>(opts.max_sim_seconds * env.config().control_hz);
  std::size_t laps_seen = 0;
  int consecutive = 0;
  std::int64_t t = 0;
  for (; t < max_steps; ++t) {
    if (env.in_recovery()) {
      if (auto o = env.recovery_tick()) obs = std::move(*o);
    } else {
      StepResult r;
      if (policy) {
        const Vector a = policy_action(*policy, obs, unused, true);
        r = env.step(a(0), a(1));
      } else {
        r = env.step_command({});
      }
      obs = r.terminal && !env.in_recovery() ? env.observation() : std::move(r.observation);
    }

    bool done = false;
    while (laps_seen < env.laps().size()) {
      const LapRecord& lap = env.laps()[laps_seen++];
      if (lap.lap_index == 0 && opts.discard_out_lap) {
        rep.n_bound += lap.boundary_violations;
        continue;
      }
      rep.laps.push_back(lap);
      rep.n_bound += lap.boundary_violations;
      consecutive = lap.clean ? consecutive + 1 : 0;
      if (consecutive >= opts.target_clean_laps) {
        done = true;
        break;
      }
    }
    if (done) {
      rep.converged = true;
      ++t;
      break;
    }
    if (rep.n_bound >= opts.violation_cap) {
      ++t;
      break;
    }
  }
  rep.env_steps = t;
  rep.sim_seconds = static_cast<double>(t) / env.config().control_hz;
  if (rep.converged) {
    for (auto it = rep.laps.end() - opts.target_clean_laps; it != rep.laps.end(); ++it) {
      rep.final_lap_times.push_back(it->lap_time_s);
    }
    rep.stats = lap_statistics(rep.final_lap_times);
  }
  if (policy) rep.checksum_after = parameter_checksum(*policy);
  return rep;
}

nlohmann::json to_json(const LapRecord& lap) {
  return {{"lap_index", lap.lap_index},
          {"lap_time_s", lap.lap_time_s},
          {"clean", lap.clean},
          {"boundary_violations", lap.boundary_violations},
          {"safety_interventions", lap.safety_interventions},
          {"singularities", lap.singularities},
          {"mean_speed", lap.mean_speed},
          {"max_speed", lap.max_speed},
          {"completed_at_tick", lap.completed_at_tick}};
}

nlohmann::json to_json(const TrainingReport& r) {
  nlohmann::json laps = nlohmann::json::array();
  for (const auto& l : r.laps) laps.push_back(to_json(l));
  return {{"mode", to_string(r.mode)},
          {"env_steps", r.env_steps},
          {"learner_updates", r.learner_updates},
          {"behavior_syncs", r.behavior_syncs},
          {"transitions", r.transitions},
          {"episodes", r.episodes},
          {"recovery_ticks", r.recovery_ticks},
          {"recovery_timeouts", r.recovery_timeouts},
          {"boundary_violations", r.boundary_violations},
          {"safety_interventions", r.safety_interventions},
          {"singularities", r.singularities},
          {"control_hz", r.control_hz},
          {"sim_seconds", r.sim_seconds},
          {"sim_minutes", r.sim_minutes},
          {"wall_seconds", r.wall_seconds},
          {"filter_trace", r.filter_trace},
          {"alpha_trace", r.alpha_trace},
          {"parameter_checksum", hex64(r.checksum)},
          {"laps", laps}};
}

nlohmann::json to_json(const DeploymentReport& r) {
  nlohmann::json laps = nlohmann::json::array();
  for (const auto& l : r.laps) laps.push_back(to_json(l));
  return {{"converged", r.converged},
          {"t_min", r.stats.t_min},
          {"t_max", r.stats.t_max},
          {"t_mu", r.stats.t_mu},
          {"sigma", r.stats.sigma},
          {"n_bound", r.n_bound},
          {"final_lap_times", r.final_lap_times},
          {"env_steps", r.env_steps},
          {"sim_seconds", r.sim_seconds},
          {"checksum_before", hex64(r.checksum_before)},
          {"checksum_after", hex64(r.checksum_after)},
          {"laps", laps}};
}

void write_lap_curve_csv(std::ostream& out, const std::vector<LapRecord>& laps, double control_hz) {
  out << "sim_minutes,lap_time_s,clean\n";
  out.precision(17);
  for (const auto& l : laps) {
    out << static_cast<double>(l.completed_at_tick) / control_hz / 60.0 << ',' << l.lap_time_s << ','
        << (l.clean ? 1 : 0) << '\n';
  }
}

void write_lap_table_csv(std::ostream& out, const std::vector<LapRecord>& laps) {
  out << "lap_index,lap_time_s,clean,boundary_violations,safety_interventions,mean_speed,max_speed\n";
  out.precision(17);
  for (const auto& l : laps) {
    out << l.lap_index << ',' << l.lap_time_s << ',' << (l.clean ? 1 : 0) << ',' << l.boundary_violations << ','
        << l.safety_interventions << ',' << l.mean_speed << ',' << l.max_speed << '\n';
  }
}

}  // namespace racelab
