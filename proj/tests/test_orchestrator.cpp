#include <doctest.h>

#include <cmath>
#include <memory>
#include <sstream>

#include "racelab/orchestrator.hpp"
#include "racelab/track_library.hpp"

using namespace racelab;

namespace {

struct Rig {
  std::shared_ptr<Track> track;
  std::optional<BaseController> base;
  EnvConfig cfg;
};

Rig rig(RaceMode mode = RaceMode::residual) {
  Rig r;
  r.track = std::make_shared<Track>(make_c_like_track());
  VelocityProfileParams vp;
  vp.mu_friction = 0.6;
  r.track->set_velocity_profile(generate_velocity_profile(*r.track, vp));
  r.cfg.mode = mode;
  if (mode == RaceMode::residual) r.base = BaseController::make_pure_pursuit({});
  return r;
}

SacConfig tiny() {
  SacConfig c;
  c.hidden = {16, 16};
  c.batch_size = 16;
  return c;
}

TrainingReport train(const Rig& r, RunMode mode, std::int64_t steps, std::uint64_t seed, RateSchedule rates = {}) {
  RaceEnv env(r.track, default_vehicle_params(), r.cfg, r.base);
  SacLearner learner(env.observation_dim(), 2, tiny(), seed);
  ReplayBuffer buffer(100000, env.observation_dim(), 2);
  TrainingOptions o;
  o.mode = mode;
  o.budget_steps = steps;
  o.seed = seed;
  return run_training(env, learner, buffer, rates, o);
}

}  // namespace

TEST_CASE("rate schedule") {
  RateSchedule r;
  CHECK(r.updates_per_step() == doctest::Approx(3.2));
  CHECK(r.sync_period_steps() == 10);
  r.physics_hz = 410;
  CHECK_THROWS(r.validate());
  CHECK(parse_run_mode("train_sync") == RunMode::train_sync);
}

TEST_CASE("async run keeps the 3.2 update ratio and syncs every ten steps") {
  const TrainingReport rep = train(rig(), RunMode::train_async, 1000, 1);
  CHECK(rep.env_steps == 1000);
  CHECK(rep.learner_updates == 3200);
  CHECK(rep.behavior_syncs == 100);
  for (std::size_t i = 1; i < rep.sync_ticks.size(); ++i) CHECK(rep.sync_ticks[i] - rep.sync_ticks[i - 1] == 10);
  CHECK(rep.sim_minutes == 1000.0 / 10.0 / 60.0);
}

TEST_CASE("sync mode is reproducible") {
  const TrainingReport a = train(rig(), RunMode::train_sync, 400, 2);
  const TrainingReport b = train(rig(), RunMode::train_sync, 400, 2);
  CHECK(a.checksum == b.checksum);
  CHECK(a.learner_updates == 400 * 3);
  REQUIRE(a.laps.size() == b.laps.size());
  for (std::size_t i = 0; i < a.laps.size(); ++i) CHECK(a.laps[i].lap_time_s == b.laps[i].lap_time_s);
}

TEST_CASE("virtual async with ratio one and per-step sync equals sync mode") {
  RateSchedule one;
  one.learner_hz = one.control_hz;
  one.sync_hz = one.control_hz;
  const TrainingReport s = train(rig(RaceMode::e2e), RunMode::train_sync, 300, 3, one);
  const TrainingReport a = train(rig(RaceMode::e2e), RunMode::train_async, 300, 3, one);
  CHECK(s.checksum == a.checksum);
}

TEST_CASE("different seeds diverge") {
  CHECK(train(rig(), RunMode::train_sync, 100, 4).checksum != train(rig(), RunMode::train_sync, 100, 5).checksum);
}

TEST_CASE("threaded mode runs and counts") {
  const Rig r = rig();
  RaceEnv env(r.track, default_vehicle_params(), r.cfg, r.base);
  SacLearner learner(env.observation_dim(), 2, tiny(), 6);
  ReplayBuffer buffer(100000, env.observation_dim(), 2);
  TrainingOptions o;
  o.budget_steps = 200;
  o.threaded = true;
  const TrainingReport rep = run_training(env, learner, buffer, {}, o);
  CHECK(rep.env_steps == 200);
  CHECK(rep.learner_updates > 0);
}

TEST_CASE("lap statistics use the sample deviation") {
  const LapStats s = lap_statistics({1.0, 2.0, 3.0, 6.0});
  CHECK(s.t_min == 1.0);
  CHECK(s.t_max == 6.0);
  CHECK(s.t_mu == 3.0);
  CHECK(s.sigma == doctest::Approx(std::sqrt(14.0 / 3.0)));
}

TEST_CASE("base-only deployment stops at twenty clean laps") {
  Rig r = rig();
  r.cfg.control_hz = 15.0;
  RaceEnv env(r.track, default_vehicle_params(), r.cfg, r.base);
  const DeploymentReport d = run_deployment(env, nullptr, {});
  REQUIRE(d.converged);
  CHECK(d.n_bound == 0);
  CHECK(d.laps.size() == 20u);
  CHECK(d.final_lap_times.size() == 20u);
  CHECK(d.stats.t_mu == lap_statistics(d.final_lap_times).t_mu);
}

TEST_CASE("deployment never touches the policy") {
  const Rig r = rig();
  RaceEnv env(r.track, default_vehicle_params(), r.cfg, r.base);
  SacLearner learner(env.observation_dim(), 2, tiny(), 7);
  DeploymentOptions o;
  o.target_clean_laps = 2;
  const DeploymentReport d = run_deployment(env, &learner.actor(), o);
  CHECK(d.checksum_before == d.checksum_after);
  CHECK(d.checksum_before == parameter_checksum(learner.actor()));
}

TEST_CASE("lap curve csv has the plot columns") {
  LapRecord l;
  l.lap_time_s = 7.5;
  l.completed_at_tick = 600;
  std::ostringstream out;
  write_lap_curve_csv(out, {l}, 10.0);
  CHECK(out.str() == "sim_minutes,lap_time_s,clean\n1,7.5,1\n");
}
