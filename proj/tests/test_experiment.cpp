#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "racelab/experiment.hpp"

using namespace racelab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("racelab_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
  return p;
}

std::string error_of(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
  try {
    resolve_config(file, overrides);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("defaults equal the on-board hyperparameter table") {
  const auto t = default_config_tree();
  CHECK(t["observation"]["horizon_points"] == 20);
  CHECK(t["observation"]["horizon_m"] == 6.0);
  CHECK(t["reward"]["lambda"] == 10.0);
  CHECK(t["reward"]["penalty"] == 10.0);
  CHECK(t["reward"]["hdra_steps"] == 10);
  CHECK(t["safety"]["psi_min"] == std::numbers::pi / 6);
  CHECK(t["safety"]["psi_max"] == std::numbers::pi / 2);
  CHECK(t["safety"]["epsilon"] == 0.05);
  CHECK(t["sac"]["optimizer"] == "adam");
  CHECK(t["sac"]["learning_rate"] == 0.003);
  CHECK(t["sac"]["gamma"] == 0.96);
  CHECK(t["sac"]["n_steps"] == 3);
  CHECK(t["sac"]["buffer_size"] == 1000000);
  CHECK(t["sac"]["batch_size"] == 256);
  CHECK(t["sac"]["hidden_layers"] == 2);
  CHECK(t["sac"]["hidden_size"] == 256);
  CHECK(t["sac"]["activation"] == "relu");
  CHECK(t["rates"]["control_hz"] == 10.0);
  CHECK(t["rates"]["deploy_hz"] == 15.0);
  CHECK(t["rates"]["learner_hz"] == 32.0);
  CHECK(t["rates"]["sync_hz"] == 1.0);
  CHECK(t["deploy"]["target_clean_laps"] == 20);
  CHECK(t["experiment"]["budget_steps"] == 12000);
}

TEST_CASE("default config hash is pinned") {
  CHECK(hex64(default_config_hash()) == "8ceec3e7bc2a97b1");
}

TEST_CASE("resolved defaults reach the module configs") {
  const ExperimentConfig c = resolve_config(std::nullopt, {});
  CHECK(c.sac.hidden == std::vector<int>{256, 256});
  CHECK(c.env.obs.horizon_points == 20);
  CHECK(c.env.safety_filter.psi_filter == c.env.safety_filter.psi_min);
  CHECK(c.controller == ControllerKind::map);
  CHECK(c.mode == RaceMode::residual);
  CHECK(c.vehicle.mu_friction == preset_friction(TirePreset::turbo));
  CHECK(resolve_config(std::nullopt, {"experiment.tire_preset=tpu"}).vehicle.mu_friction ==
        preset_friction(TirePreset::tpu));
}

TEST_CASE("file then overrides, in order") {
  const fs::path dir = scratch("cfg");
  const auto f = write(dir / "a.yaml", "sac:\n  batch_size: 64\n  hidden_size: 32\nablation:\n  seeds: [4, 5]\n");
  const ExperimentConfig c = resolve_config(f, {"sac.batch_size=8", "ablation.seeds=1,2,3"});
  CHECK(c.sac.batch_size == 8);
  CHECK(c.sac.hidden == std::vector<int>{32, 32});
  CHECK(c.ablation.seeds == std::vector<std::uint64_t>{1, 2, 3});
}

TEST_CASE("config errors name the line or the override") {
  const fs::path dir = scratch("cfg_err");
  CHECK(error_of(write(dir / "a.yaml", "sac:\n  gama: 0.9\n"), {}).find("a.yaml:2: unknown key 'sac.gama'") !=
        std::string::npos);
  CHECK(error_of(write(dir / "b.yaml", "experiment:\n  seed: 1\n  budget_steps: lots\n"), {})
            .find("b.yaml:3: 'experiment.budget_steps' must be an integer") != std::string::npos);
  CHECK(error_of(write(dir / "c.yaml", "sac:\n  gamma: 1.5\n"), {}).find("c.yaml:2: sac.gamma") !=
        std::string::npos);
  CHECK(error_of(write(dir / "d.yaml", "sac: [1, 2\n"), {}).find("d.yaml:") != std::string::npos);
  CHECK(error_of(std::nullopt, {"nokey"}).find("expected section.key=value") != std::string::npos);
  CHECK(error_of(std::nullopt, {"sac.nope=1"}).find("unknown key") != std::string::npos);
  CHECK_FALSE(error_of(dir / "missing.yaml", {}).empty());
}

TEST_CASE("controller is none exactly in e2e mode") {
  CHECK(error_of(std::nullopt, {"experiment.mode=e2e"}).find("must be none") != std::string::npos);
  CHECK(error_of(std::nullopt, {"experiment.controller=none"}).find("only valid") != std::string::npos);
  CHECK(error_of(std::nullopt, {"experiment.mode=e2e", "experiment.controller=none"}).empty());
}

TEST_CASE("seed falls back to the environment variable") {
  CHECK(resolve_config(std::nullopt, {}, "42").seed == 42u);
  CHECK(resolve_config(std::nullopt, {"experiment.seed=7"}, "42").seed == 7u);
  CHECK_THROWS_AS(resolve_config(std::nullopt, {}, "x1"), ConfigError);
}

TEST_CASE("deployment config: deploy rate, open filter, frozen curriculum") {
  const ExperimentConfig c = resolve_config(std::nullopt, {});
  const EnvConfig d = deployment_env_config(c, 3.5);
  CHECK(d.control_hz == 15.0);
  CHECK_FALSE(d.safety_filter_adaptive);
  CHECK(d.safety_filter.psi_filter == c.env.safety_filter.psi_max);
  CHECK(d.curriculum.alpha == 3.5);
  CHECK(update_curriculum(d.curriculum, true).alpha == 3.5);
}

TEST_CASE("baseline deployment report matches its lap csv") {
  const fs::path dir = scratch("deploy");
  const ExperimentConfig c =
      resolve_config(std::nullopt, {"experiment.baseline_only=true", "experiment.output_dir=" + dir.string()});
  const DeployOutcome d = cmd_deploy(c);
  REQUIRE(d.report.converged);
  const LapCsvSummary s = summarize_lap_csv(d.lap_csv, 20);
  CHECK(s.trailing_clean == 20);
  CHECK(s.stats.t_min == d.report.stats.t_min);
  CHECK(s.stats.t_max == d.report.stats.t_max);
  CHECK(s.stats.t_mu == d.report.stats.t_mu);
  CHECK(s.stats.sigma == d.report.stats.sigma);
  CHECK(s.n_bound == d.report.n_bound);
  CHECK(fs::exists(dir / "deploy_report.json"));
  CHECK(fs::file_size(dir / "fastest_lap_trace.csv") > 1000);
}

TEST_CASE("deploy without a checkpoint fails cleanly") {
  const fs::path dir = scratch("deploy_missing");
  const ExperimentConfig c = resolve_config(
      std::nullopt, {"experiment.checkpoint=" + (dir / "none").string(), "experiment.output_dir=" + dir.string()});
  CHECK_THROWS_AS(cmd_deploy(c), RunError);
}

TEST_CASE("train writes artifacts and sync runs are byte-identical") {
  const fs::path dir = scratch("train");
  auto run = [&](const std::string& sub) {
    const ExperimentConfig c = resolve_config(
        std::nullopt, {"experiment.run_mode=train_sync", "experiment.budget_steps=300", "experiment.seed=3",
                       "sac.hidden_size=16", "sac.batch_size=16", "experiment.controller=pp",
                       "experiment.output_dir=" + (dir / sub).string()});
    write_manifest(c, "train", {});
    cmd_train(c);
    std::ifstream in(dir / sub / "lap_curve.csv");
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const std::string a = run("a");
  CHECK(a == run("b"));
  for (const char* f : {"manifest.json", "training_report.json", "lap_curve.csv", "trace_sampled.csv",
                        "checkpoint/actor.bin", "checkpoint/run.json"}) {
    CHECK(fs::exists(dir / "a" / f));
  }
  // The trained checkpoint deploys; a mode mismatch is refused.
  const ExperimentConfig d = resolve_config(
      std::nullopt, {"experiment.controller=pp", "experiment.checkpoint=" + (dir / "a" / "checkpoint").string(),
                     "experiment.output_dir=" + (dir / "a" / "deploy").string(), "deploy.target_clean_laps=2"});
  CHECK_NOTHROW(cmd_deploy(d));
  const ExperimentConfig e = resolve_config(
      std::nullopt, {"experiment.mode=e2e", "experiment.controller=none",
                     "experiment.checkpoint=" + (dir / "a" / "checkpoint").string(),
                     "experiment.output_dir=" + (dir / "a" / "deploy2").string()});
  CHECK_THROWS_AS(cmd_deploy(e), RunError);
}

TEST_CASE("histogram bins rebin the raw laps") {
  const std::vector<double> t{7.01, 7.05, 7.19, 7.2, 7.55};
  const auto bins = lap_histogram(t, 0.1);
  int total = 0;
  for (const auto& b : bins) {
    total += b.count;
    int direct = 0;
    for (double x : t) direct += (std::floor(x / 0.1) * 0.1 == b.lo) ? 1 : 0;
    CHECK(b.count == direct);
  }
  CHECK(total == 5);
  CHECK(bins.front().lo == doctest::Approx(7.0));
}

TEST_CASE("ablation summary pools the final windows") {
  AblationRun a{"td3_async", 1, 2.0, {7.0, 8.0}, 1, 40.0, {}, {}, 0};
  AblationRun b{"td3_async", 2, 3.0, {9.0}, 3, 40.0, {}, {}, 0};
  AblationRun c{"td1_async", 1, 4.0, {5.0}, 0, 40.0, {}, {}, 0};
  const AblationRow row = summarize_ablation("td3_async", {a, b, c});
  CHECK(row.stats.t_min == 7.0);
  CHECK(row.stats.t_max == 9.0);
  CHECK(row.stats.t_mu == 8.0);
  CHECK(row.stats.sigma == 1.0);
  CHECK(row.n_laps_mu == 1.5);
  CHECK(row.n_bound_mu == 2.0);
  const AblationRun back = ablation_run_from_json(to_json(a));
  CHECK(back.window_lap_times == a.window_lap_times);
  std::ostringstream out;
  write_ablation_summary_csv(out, {row});
  CHECK(out.str().rfind("run,t_min,t_max,t_mu,sigma,n_laps_mu,n_bound_mu\ntd3_async,7,9,8,1,1.5,2\n", 0) == 0);
}

TEST_CASE("track info and map table") {
  const ExperimentConfig c = resolve_config(std::nullopt, {"experiment.track=y-like"});
  const auto info = cmd_track_info(c);
  CHECK(info["length_m"].get<double>() == doctest::Approx(34.0).epsilon(0.01));
  const fs::path dir = scratch("map");
  const ExperimentConfig m = resolve_config(std::nullopt, {"experiment.output_dir=" + dir.string()});
  const fs::path p = cmd_make_map_table(m);
  CHECK(MapLookupTable::load_csv(p).spec().v_count() == MapGridSpec{}.v_count());
  CHECK_THROWS_AS(resolve_track("no-such-track", c), ConfigError);
}
