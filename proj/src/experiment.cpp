#include "racelab/experiment.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "racelab/track_library.hpp"

#ifndef RACELAB_DATA_DIR
#define RACELAB_DATA_DIR "data"
#endif
#ifndef RACELAB_GIT_HASH
#define RACELAB_GIT_HASH "unknown"
#endif

namespace racelab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kVariants{"hdra_td3_async", "hdra_td3_sync", "td3_async", "td1_async"};

// Thrown by the typed view; resolve_config adds the file line when it knows it.
struct KeyError : ConfigError {
  KeyError(std::string key, const std::string& msg) : ConfigError(key + ": " + msg), key(std::move(key)) {}
  std::string key;
};

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

json scalar_from_yaml(const json& slot, const YAML::Node& node) {
  if (slot.is_boolean()) return node.as<bool>();
  if (slot.is_number_integer()) return node.as<long long>();
  if (slot.is_number_float() || slot.is_null()) return node.as<double>();
  if (slot.is_string()) return node.as<std::string>();
  throw YAML::BadConversion(node.Mark());
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

json value_from_yaml(const json& slot, const YAML::Node& node) {
  if (slot.is_array()) {
    const json proto = slot.empty() ? json("") : slot.front();
    json out = json::array();
    if (node.IsSequence()) {
      for (const auto& item : node) out.push_back(scalar_from_yaml(proto, item));
    } else {
      // Comma separated scalar, handy on the command line.
      std::stringstream ss(node.as<std::string>());
      std::string part;
      while (std::getline(ss, part, ',')) {
        part = trim(part);
        if (!part.empty()) out.push_back(scalar_from_yaml(proto, YAML::Load(part)));
      }
    }
    return out;
  }
  if (!node.IsScalar()) throw YAML::BadConversion(node.Mark());
  return scalar_from_yaml(slot, node);
}

std::string type_name(const json& slot) {
  if (slot.is_boolean()) return "a boolean";
  if (slot.is_number_integer()) return "an integer";
  if (slot.is_number_float() || slot.is_null()) return "a number";
  if (slot.is_string()) return "a string";
  if (slot.is_array()) return "a list";
  return "a section";
}

void merge_yaml(json& dst, const YAML::Node& node, const std::string& prefix, const std::string& where,
                std::map<std::string, int>& lines) {
  if (!node.IsMap()) {
    throw ConfigError(where + ":" + std::to_string(node.Mark().line + 1) + ": '" +
                      (prefix.empty() ? std::string("<root>") : prefix) + "' must be a mapping");
  }
  for (const auto& kv : node) {
    const std::string key = kv.first.as<std::string>();
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    const int line = kv.first.Mark().line + 1;
    if (!dst.contains(key)) {
      throw ConfigError(where + ":" + std::to_string(line) + ": unknown key '" + path + "'");
    }
    json& slot = dst[key];
    if (slot.is_object()) {
      merge_yaml(slot, kv.second, path, where, lines);
      continue;
    }
    try {
      slot = value_from_yaml(slot, kv.second);
    } catch (const YAML::Exception&) {
      throw ConfigError(where + ":" + std::to_string(kv.second.Mark().line + 1) + ": '" + path + "' must be " +
                        type_name(slot));
    }
    lines[path] = line;
  }
}

void apply_override(json& tree, const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + text + "': expected section.key=value");
  }
  const std::string path = text.substr(0, eq);
  const std::string value = text.substr(eq + 1);
  json* slot = &tree;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (!slot->is_object() || !slot->contains(part)) {
      throw ConfigError("override '" + text + "': unknown key '" + path + "'");
    }
    slot = &(*slot)[part];
  }
  if (slot->is_object()) throw ConfigError("override '" + text + "': '" + path + "' is a section");
  try {
    *slot = value.empty() && slot->is_string() ? json("") : value_from_yaml(*slot, YAML::Load(value));
  } catch (const YAML::Exception&) {
    throw ConfigError("override '" + text + "': '" + path + "' must be " + type_name(*slot));
  }
}

template <typename T>
T get(const json& tree, const std::string& section, const std::string& key) {
  return tree.at(section).at(key).get<T>();
}

template <typename F>
auto keyed(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw KeyError(key, e.what());
  }
}

void require(bool ok, const std::string& key, const std::string& msg) {
  if (!ok) throw KeyError(key, msg);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw RunError("cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw RunError("cannot read " + path.string());
  return json::parse(in);
}

struct LoadedPolicy {
  Mlp actor;
  double alpha{1.0};
  json meta;
};

LoadedPolicy load_policy(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.checkpoint;
  if (!fs::exists(dir / "actor.bin")) throw RunError("no checkpoint at " + dir.string());
  LoadedPolicy p;
  p.meta = fs::exists(dir / "run.json") ? read_json(dir / "run.json") : json::object();
  if (p.meta.contains("mode") && p.meta["mode"].get<std::string>() != to_string(cfg.mode)) {
    throw RunError("checkpoint was trained in " + p.meta["mode"].get<std::string>() + " mode, config asks for " +
                   to_string(cfg.mode));
  }
  p.actor = load_checkpoint(dir / "actor.bin");
  p.alpha = p.meta.value("alpha", cfg.env.curriculum.alpha);
  return p;
}

void save_run_meta(const ExperimentConfig& cfg, const fs::path& dir, const RaceEnv& env, const std::string& track) {
  json meta{{"mode", to_string(cfg.mode)},
            {"controller", to_string(cfg.controller)},
            {"track", track},
            {"tire_preset", to_string(cfg.tire)},
            {"alpha", env.alpha()},
            {"psi_filter", env.safety_filter().psi_filter},
            {"obs_dim", env.observation_dim()},
            {"seed", cfg.seed}};
  write_text(dir / "run.json", meta.dump(2) + "\n");
}

void write_deploy_lap_csv(const fs::path& path, const std::vector<LapRecord>& untimed,
                          const std::vector<LapRecord>& timed) {
  std::ofstream out(path);
  if (!out) throw RunError("cannot write " + path.string());
  out << "lap_index,lap_time_s,clean,timed,boundary_violations,safety_interventions,mean_speed,max_speed\n";
  out.precision(17);
  auto row = [&](const LapRecord& l, bool is_timed) {
    out << l.lap_index << ',' << l.lap_time_s << ',' << (l.clean ? 1 : 0) << ',' << (is_timed ? 1 : 0) << ','
        << l.boundary_violations << ',' << l.safety_interventions << ',' << l.mean_speed << ',' << l.max_speed
        << '\n';
  };
  for (const auto& l : untimed) row(l, false);
  for (const auto& l : timed) row(l, true);
}

// Trace rows of the fastest timed lap.
std::vector<TraceRow> fastest_lap_rows(const RaceEnv& env, const std::vector<LapRecord>& laps) {
  if (laps.empty()) return {};
  const auto best = std::min_element(laps.begin(), laps.end(), [](const LapRecord& a, const LapRecord& b) {
    return a.lap_time_s < b.lap_time_s;
  });
  const double hz = env.config().control_hz;
  const double t_end = static_cast<double>(best->completed_at_tick) / hz;
  const double t_begin = t_end - best->lap_time_s;
  std::vector<TraceRow> rows;
  for (const auto& r : env.trace()) {
    if (r.t_s > t_begin + 1e-9 && r.t_s <= t_end + 1e-9) rows.push_back(r);
  }
  return rows;
}

DeployOutcome deploy_policy(const ExperimentConfig& cfg, const std::string& track_spec, const Mlp* policy,
                            double alpha, const json& tags) {
  const Scenario sc = make_scenario(cfg, track_spec);
  RaceEnv env(sc.track, sc.params, deployment_env_config(cfg, alpha), sc.base);
  env.enable_trace(true);
  DeployOutcome out;
  out.report = run_deployment(env, policy, cfg.deploy);
  if (cfg.deploy.discard_out_lap && !env.laps().empty() && env.laps().front().lap_index == 0) {
    out.untimed_laps.push_back(env.laps().front());
  }

  fs::create_directories(cfg.output_dir);
  out.lap_csv = cfg.output_dir / "laps.csv";
  write_deploy_lap_csv(out.lap_csv, out.untimed_laps, out.report.laps);
  json j = to_json(out.report);
  j["track"] = sc.track->name();
  j["baseline_only"] = policy == nullptr;
  j["controller"] = to_string(cfg.controller);
  j["control_hz"] = env.config().control_hz;
  j["alpha"] = alpha;
  for (const auto& [k, v] : tags.items()) j[k] = v;
  write_text(cfg.output_dir / "deploy_report.json", j.dump(2) + "\n");
  std::ofstream trace(cfg.output_dir / "fastest_lap_trace.csv");
  RaceEnv::write_trace_header(trace);
  RaceEnv::write_trace_rows(trace, fastest_lap_rows(env, out.report.laps));
  return out;
}

std::vector<double> window_times(const std::vector<LapRecord>& laps, double control_hz, double sim_minutes,
                                 double window, int* bound) {
  std::vector<double> t;
  int b = 0;
  for (const auto& l : laps) {
    const double at = static_cast<double>(l.completed_at_tick) / control_hz / 60.0;
    if (at >= sim_minutes - window) {
      t.push_back(l.lap_time_s);
      b += l.boundary_violations;
    }
  }
  if (bound) *bound = b;
  return t;
}

}  // namespace

json default_config_tree() {
  const VehicleParams v = default_vehicle_params(TirePreset::turbo);
  const PurePursuitConfig pp{};
  const FtgConfig ftg{};
  return json{
      {"experiment",
       {{"track", "c-like"},
        {"tire_preset", "turbo"},
        {"controller", "map"},
        {"mode", "residual"},
        {"seed", 0},
        {"budget_steps", 12000},
        {"run_mode", "train_async"},
        {"output_dir", "runs/default"},
        {"checkpoint", ""},
        {"map_table", ""},
        {"baseline_only", false},
        {"hdra_on", true},
        {"threaded", false},
        {"trace_stride", 10}}},
      {"profile", {{"friction_scale", 0.6}, {"a_max", 3.0}, {"v_cap", 10.0}}},
      {"vehicle",
       {{"m", v.m},
        {"I_z", v.I_z},
        {"l_f", v.l_f},
        {"l_r", v.l_r},
        {"mu_friction", nullptr},
        {"delta_max", v.delta_max},
        {"v_max", v.v_max},
        {"a_long_max", v.a_long_max},
        {"steer_rate_max", v.steer_rate_max},
        {"speed_tau", v.speed_tau},
        {"pacejka_front",
         {{"B", v.pacejka_front.B}, {"C", v.pacejka_front.C}, {"D", v.pacejka_front.D}, {"E", v.pacejka_front.E}}},
        {"pacejka_rear",
         {{"B", v.pacejka_rear.B}, {"C", v.pacejka_rear.C}, {"D", v.pacejka_rear.D}, {"E", v.pacejka_rear.E}}}}},
      {"controller",
       {{"lookahead_base", pp.lookahead_base},
        {"lookahead_gain", pp.lookahead_gain},
        {"lookahead_min", pp.lookahead_min},
        {"lookahead_max", pp.lookahead_max},
        {"ftg_rays", ftg.n_rays},
        {"ftg_bubble_radius", ftg.bubble_radius},
        {"ftg_speed_gain", ftg.speed_gain},
        {"ftg_speed_max", ftg.speed_max}}},
      {"observation", {{"horizon_points", 20}, {"horizon_m", 6.0}}},
      {"reward", {{"lambda", 10.0}, {"penalty", 10.0}, {"hdra_steps", 10}}},
      {"safety",
       {{"enabled", true},
        {"adaptive", true},
        {"psi_min", std::numbers::pi / 6.0},
        {"psi_max", std::numbers::pi / 2.0},
        {"epsilon", 0.05}}},
      {"curriculum", {{"alpha_init", 1.0}, {"alpha_step", 0.5}, {"alpha_max", 7.0}, {"laps_per_step", 3}}},
      {"recovery", {{"speed", 1.5}, {"timeout_s", 60.0}}},
      {"sac",
       {{"optimizer", "adam"},
        {"learning_rate", 0.003},
        {"gamma", 0.96},
        {"n_steps", 3},
        {"buffer_size", 1000000},
        {"batch_size", 256},
        {"hidden_layers", 2},
        {"hidden_size", 256},
        {"activation", "relu"},
        {"tau", 0.005},
        {"target_entropy", -2.0},
        {"init_alpha", 1.0},
        {"auto_alpha", true}}},
      {"rates",
       {{"control_hz", 10.0},
        {"deploy_hz", 15.0},
        {"learner_hz", 32.0},
        {"sync_hz", 1.0},
        {"base_hz", 40},
        {"physics_hz", 400}}},
      {"deploy", {{"target_clean_laps", 20}, {"violation_cap", 50}, {"discard_out_lap", true}, {"max_sim_seconds", 3600.0}}},
      {"ablation",
       {{"seeds", {1, 2, 3, 4, 5}},
        {"budget_steps", 24000},
        {"window_minutes", 3.0},
        {"sync_learner_hz", 10.0},
        {"variants", kVariants}}},
      {"transfer", {{"shots", "zero"}, {"target_track", "y-like"}, {"few_shot_steps", 12000}, {"histogram_bin_s", 0.1}}},
  };
}

std::uint64_t default_config_hash() { return fnv1a(default_config_tree().dump()); }

const char* code_version() { return RACELAB_GIT_HASH; }

ExperimentConfig config_from_tree(const json& tree) {
  ExperimentConfig c;
  c.tree = tree;
  const auto& e = tree.at("experiment");
  c.track = e.at("track").get<std::string>();
  require(!c.track.empty(), "experiment.track", "must not be empty");
  c.tire = keyed("experiment.tire_preset", [&] { return parse_tire_preset(e.at("tire_preset").get<std::string>()); });
  c.controller =
      keyed("experiment.controller", [&] { return parse_controller_kind(e.at("controller").get<std::string>()); });
  c.mode = keyed("experiment.mode", [&] { return parse_race_mode(e.at("mode").get<std::string>()); });
  if (c.mode == RaceMode::e2e) {
    require(c.controller == ControllerKind::none, "experiment.controller", "must be none when experiment.mode is e2e");
  } else {
    require(c.controller != ControllerKind::none, "experiment.controller",
            "none is only valid when experiment.mode is e2e");
  }
  const auto seed = e.at("seed").get<long long>();
  require(seed >= 0, "experiment.seed", "must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);
  c.budget_steps = e.at("budget_steps").get<std::int64_t>();
  require(c.budget_steps > 0, "experiment.budget_steps", "must be > 0");
  c.run_mode = keyed("experiment.run_mode", [&] { return parse_run_mode(e.at("run_mode").get<std::string>()); });
  c.output_dir = e.at("output_dir").get<std::string>();
  require(!c.output_dir.empty(), "experiment.output_dir", "must not be empty");
  c.checkpoint = e.at("checkpoint").get<std::string>();
  c.map_table = e.at("map_table").get<std::string>();
  c.baseline_only = e.at("baseline_only").get<bool>();
  require(!(c.baseline_only && c.mode == RaceMode::e2e), "experiment.baseline_only",
          "an e2e run has no base controller to deploy");
  c.hdra_on = e.at("hdra_on").get<bool>();
  c.threaded = e.at("threaded").get<bool>();
  c.trace_stride = e.at("trace_stride").get<int>();
  require(c.trace_stride >= 1, "experiment.trace_stride", "must be >= 1");

  const auto& v = tree.at("vehicle");
  c.vehicle = default_vehicle_params(c.tire);
  c.vehicle.m = v.at("m").get<double>();
  c.vehicle.I_z = v.at("I_z").get<double>();
  c.vehicle.l_f = v.at("l_f").get<double>();
  c.vehicle.l_r = v.at("l_r").get<double>();
  if (!v.at("mu_friction").is_null()) c.vehicle.mu_friction = v.at("mu_friction").get<double>();
  c.vehicle.delta_max = v.at("delta_max").get<double>();
  c.vehicle.v_max = v.at("v_max").get<double>();
  c.vehicle.a_long_max = v.at("a_long_max").get<double>();
  c.vehicle.steer_rate_max = v.at("steer_rate_max").get<double>();
  c.vehicle.speed_tau = v.at("speed_tau").get<double>();
  for (auto [name, coeffs] : {std::pair{"pacejka_front", &c.vehicle.pacejka_front},
                              std::pair{"pacejka_rear", &c.vehicle.pacejka_rear}}) {
    const auto& p = v.at(name);
    coeffs->B = p.at("B").get<double>();
    coeffs->C = p.at("C").get<double>();
    coeffs->D = p.at("D").get<double>();
    coeffs->E = p.at("E").get<double>();
  }
  c.vehicle.set_static_loads();
  keyed("vehicle", [&] {
    c.vehicle.validate();
    return 0;
  });

  const auto& pr = tree.at("profile");
  c.profile_friction_scale = pr.at("friction_scale").get<double>();
  require(c.profile_friction_scale > 0.0, "profile.friction_scale", "must be > 0");
  c.profile.mu_friction = c.profile_friction_scale * c.vehicle.mu_friction;
  c.profile.g = c.vehicle.g;
  c.profile.a_max = pr.at("a_max").get<double>();
  c.profile.v_cap = pr.at("v_cap").get<double>();
  require(c.profile.a_max > 0.0, "profile.a_max", "must be > 0");
  require(c.profile.v_cap > 0.0, "profile.v_cap", "must be > 0");

  const auto& ctl = tree.at("controller");
  c.pursuit.lookahead_base = ctl.at("lookahead_base").get<double>();
  c.pursuit.lookahead_gain = ctl.at("lookahead_gain").get<double>();
  c.pursuit.lookahead_min = ctl.at("lookahead_min").get<double>();
  c.pursuit.lookahead_max = ctl.at("lookahead_max").get<double>();
  c.pursuit.wheelbase = c.vehicle.wheelbase();
  require(c.pursuit.lookahead_min > 0.0 && c.pursuit.lookahead_min <= c.pursuit.lookahead_max,
          "controller.lookahead_min", "must lie in (0, lookahead_max]");
  c.ftg.n_rays = ctl.at("ftg_rays").get<int>();
  c.ftg.bubble_radius = ctl.at("ftg_bubble_radius").get<double>();
  c.ftg.speed_gain = ctl.at("ftg_speed_gain").get<double>();
  c.ftg.speed_max = ctl.at("ftg_speed_max").get<double>();
  require(c.ftg.n_rays >= 3, "controller.ftg_rays", "must be >= 3");

  const auto& r = tree.at("rates");
  c.rates.control_hz = r.at("control_hz").get<double>();
  c.rates.deploy_hz = r.at("deploy_hz").get<double>();
  c.rates.learner_hz = r.at("learner_hz").get<double>();
  c.rates.sync_hz = r.at("sync_hz").get<double>();
  c.rates.base_hz = r.at("base_hz").get<int>();
  c.rates.physics_hz = r.at("physics_hz").get<int>();
  keyed("rates", [&] {
    c.rates.validate();
    return 0;
  });

  EnvConfig& env = c.env;
  env.mode = c.mode;
  env.control_hz = c.rates.control_hz;
  env.physics_hz = c.rates.physics_hz;
  env.base_hz = c.rates.base_hz;
  env.obs.horizon_points = get<int>(tree, "observation", "horizon_points");
  env.obs.horizon_m = get<double>(tree, "observation", "horizon_m");
  require(env.obs.horizon_points >= 1, "observation.horizon_points", "must be >= 1");
  require(env.obs.horizon_m > 0.0, "observation.horizon_m", "must be > 0");
  env.lambda_progress = get<double>(tree, "reward", "lambda");
  env.penalty = get<double>(tree, "reward", "penalty");
  require(env.penalty > 0.0, "reward.penalty", "must be > 0");
  const auto& s = tree.at("safety");
  env.safety_filter_enabled = s.at("enabled").get<bool>();
  env.safety_filter_adaptive = s.at("adaptive").get<bool>();
  env.safety_filter.psi_min = s.at("psi_min").get<double>();
  env.safety_filter.psi_max = s.at("psi_max").get<double>();
  env.safety_filter.psi_filter = env.safety_filter.psi_min;
  env.safety_filter.epsilon = s.at("epsilon").get<double>();
  require(env.safety_filter.psi_min > 0.0 && env.safety_filter.psi_min <= env.safety_filter.psi_max,
          "safety.psi_min", "must lie in (0, psi_max]");
  require(env.safety_filter.epsilon >= 0.0, "safety.epsilon", "must be >= 0");
  const auto& cu = tree.at("curriculum");
  env.curriculum.alpha = cu.at("alpha_init").get<double>();
  env.curriculum.alpha_step = cu.at("alpha_step").get<double>();
  env.curriculum.alpha_max = cu.at("alpha_max").get<double>();
  env.curriculum.laps_per_step = cu.at("laps_per_step").get<int>();
  require(env.curriculum.alpha > kE2eSpeedMin && env.curriculum.alpha <= env.curriculum.alpha_max,
          "curriculum.alpha_init", "must lie in (0.5, alpha_max]");
  require(env.curriculum.laps_per_step >= 1, "curriculum.laps_per_step", "must be >= 1");
  env.recovery_speed = get<double>(tree, "recovery", "speed");
  env.recovery_timeout_s = get<double>(tree, "recovery", "timeout_s");
  require(env.recovery_speed > 0.0, "recovery.speed", "must be > 0");

  const auto& sac = tree.at("sac");
  require(sac.at("optimizer").get<std::string>() == "adam", "sac.optimizer", "only adam is implemented");
  require(sac.at("activation").get<std::string>() == "relu", "sac.activation", "only relu is implemented");
  c.sac.learning_rate = sac.at("learning_rate").get<double>();
  c.sac.gamma = sac.at("gamma").get<double>();
  c.sac.n_steps = sac.at("n_steps").get<int>();
  const auto buffer = sac.at("buffer_size").get<long long>();
  require(buffer >= 1, "sac.buffer_size", "must be >= 1");
  c.sac.buffer_capacity = static_cast<std::size_t>(buffer);
  c.sac.batch_size = sac.at("batch_size").get<int>();
  const int layers = sac.at("hidden_layers").get<int>();
  const int width = sac.at("hidden_size").get<int>();
  require(layers >= 1, "sac.hidden_layers", "must be >= 1");
  require(width >= 1, "sac.hidden_size", "must be >= 1");
  c.sac.hidden.assign(static_cast<std::size_t>(layers), width);
  c.sac.tau_polyak = sac.at("tau").get<double>();
  c.sac.target_entropy = sac.at("target_entropy").get<double>();
  c.sac.init_alpha = sac.at("init_alpha").get<double>();
  c.sac.auto_alpha = sac.at("auto_alpha").get<bool>();
  c.sac.hdra_N = get<int>(tree, "reward", "hdra_steps");
  c.sac.penalty = env.penalty;
  require(c.sac.gamma > 0.0 && c.sac.gamma < 1.0, "sac.gamma", "must lie in (0, 1)");
  require(c.sac.n_steps >= 1, "sac.n_steps", "must be >= 1");
  require(c.sac.batch_size >= 1, "sac.batch_size", "must be >= 1");
  require(c.sac.learning_rate > 0.0, "sac.learning_rate", "must be > 0");
  require(c.sac.init_alpha > 0.0, "sac.init_alpha", "must be > 0");
  require(c.sac.hdra_N >= 0, "reward.hdra_steps", "must be >= 0");

  const auto& d = tree.at("deploy");
  c.deploy.target_clean_laps = d.at("target_clean_laps").get<int>();
  c.deploy.violation_cap = d.at("violation_cap").get<int>();
  c.deploy.discard_out_lap = d.at("discard_out_lap").get<bool>();
  c.deploy.max_sim_seconds = d.at("max_sim_seconds").get<double>();
  require(c.deploy.target_clean_laps >= 1, "deploy.target_clean_laps", "must be >= 1");
  require(c.deploy.violation_cap >= 1, "deploy.violation_cap", "must be >= 1");
  require(c.deploy.max_sim_seconds > 0.0, "deploy.max_sim_seconds", "must be > 0");

  const auto& a = tree.at("ablation");
  for (const auto& s2 : a.at("seeds")) {
    const auto v2 = s2.get<long long>();
    require(v2 >= 0, "ablation.seeds", "seeds must be >= 0");
    c.ablation.seeds.push_back(static_cast<std::uint64_t>(v2));
  }
  require(!c.ablation.seeds.empty(), "ablation.seeds", "must not be empty");
  c.ablation.budget_steps = a.at("budget_steps").get<std::int64_t>();
  c.ablation.window_minutes = a.at("window_minutes").get<double>();
  c.ablation.sync_learner_hz = a.at("sync_learner_hz").get<double>();
  c.ablation.variants = a.at("variants").get<std::vector<std::string>>();
  require(c.ablation.budget_steps > 0, "ablation.budget_steps", "must be > 0");
  require(c.ablation.window_minutes > 0.0, "ablation.window_minutes", "must be > 0");
  require(c.ablation.sync_learner_hz > 0.0, "ablation.sync_learner_hz", "must be > 0");
  for (const auto& name : c.ablation.variants) {
    require(std::find(kVariants.begin(), kVariants.end(), name) != kVariants.end(), "ablation.variants",
            "unknown variant '" + name + "'");
  }

  const auto& t = tree.at("transfer");
  c.transfer.shots = t.at("shots").get<std::string>();
  require(c.transfer.shots == "zero" || c.transfer.shots == "few", "transfer.shots", "must be zero or few");
  c.transfer.target_track = t.at("target_track").get<std::string>();
  c.transfer.few_shot_steps = t.at("few_shot_steps").get<std::int64_t>();
  c.transfer.histogram_bin_s = t.at("histogram_bin_s").get<double>();
  require(c.transfer.few_shot_steps > 0, "transfer.few_shot_steps", "must be > 0");
  require(c.transfer.histogram_bin_s > 0.0, "transfer.histogram_bin_s", "must be > 0");
  return c;
}

ExperimentConfig resolve_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides,
                                const std::optional<std::string>& env_seed) {
  json tree = default_config_tree();
  std::map<std::string, int> lines;
  std::string where;
  if (file) {
    where = file->string();
    if (!fs::exists(*file)) throw ConfigError(where + ": no such file");
    YAML::Node root;
    try {
      root = YAML::LoadFile(where);
    } catch (const YAML::ParserException& e) {
      throw ConfigError(where + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
    }
    if (root.IsDefined() && !root.IsNull()) merge_yaml(tree, root, "", where, lines);
  }
  bool seed_set = lines.count("experiment.seed") > 0;
  for (const auto& o : overrides) {
    apply_override(tree, o);
    if (o.rfind("experiment.seed=", 0) == 0) seed_set = true;
  }
  if (!seed_set && env_seed && !env_seed->empty()) {
    try {
      std::size_t used = 0;
      const long long seed = std::stoll(*env_seed, &used);
      if (used != env_seed->size() || seed < 0) throw std::invalid_argument("bad");
      tree["experiment"]["seed"] = seed;
    } catch (const std::exception&) {
      throw ConfigError("RACE_LAB_SEED='" + *env_seed + "' is not a non-negative integer");
    }
  }
  try {
    return config_from_tree(tree);
  } catch (const KeyError& e) {
    auto it = lines.find(e.key);
    if (it != lines.end()) throw ConfigError(where + ":" + std::to_string(it->second) + ": " + e.what());
    throw ConfigError(e.what());
  }
}

std::shared_ptr<Track> resolve_track(const std::string& spec, const ExperimentConfig& cfg) {
  std::shared_ptr<Track> track;
  const fs::path bundled = fs::path(RACELAB_DATA_DIR) / "tracks" / (spec + ".csv");
  try {
    if (fs::is_regular_file(spec)) {
      track = std::make_shared<Track>(load_track(spec));
    } else if (fs::is_regular_file(bundled)) {
      track = std::make_shared<Track>(load_track(bundled));
    } else {
      track = std::make_shared<Track>(make_named_track(spec));
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError("track '" + spec + "': " + e.what());
  }
  track->set_velocity_profile(generate_velocity_profile(*track, cfg.profile));
  return track;
}

Scenario make_scenario(const ExperimentConfig& cfg, const std::string& track_spec) {
  Scenario sc;
  sc.track = resolve_track(track_spec, cfg);
  sc.params = cfg.vehicle;
  switch (cfg.controller) {
    case ControllerKind::pp:
      sc.base = BaseController::make_pure_pursuit(cfg.pursuit);
      break;
    case ControllerKind::map: {
      auto table = cfg.map_table.empty() ? std::make_shared<MapLookupTable>(build_map_table(cfg.vehicle))
                                         : std::make_shared<MapLookupTable>(MapLookupTable::load_csv(cfg.map_table));
      sc.base = BaseController::make_map(cfg.pursuit, std::move(table));
      break;
    }
    case ControllerKind::ftg:
      sc.base = BaseController::make_ftg(cfg.ftg);
      break;
    case ControllerKind::none:
      break;
  }
  return sc;
}

EnvConfig training_env_config(const ExperimentConfig& cfg) { return cfg.env; }

EnvConfig deployment_env_config(const ExperimentConfig& cfg, double alpha) {
  EnvConfig e = cfg.env;
  e.control_hz = cfg.rates.deploy_hz;
  e.safety_filter_adaptive = false;
  e.safety_filter.psi_filter = e.safety_filter.psi_max;
  e.curriculum.alpha = alpha;
  e.curriculum.laps_per_step = INT_MAX;
  return e;
}

void write_manifest(const ExperimentConfig& cfg, const std::string& verb, const std::vector<std::string>& argv) {
  fs::create_directories(cfg.output_dir);
  json m{{"verb", verb},
         {"argv", argv},
         {"seed", cfg.seed},
         {"code_version", code_version()},
         {"defaults_hash", hex64(default_config_hash())},
         {"config", cfg.tree}};
  write_text(cfg.output_dir / "manifest.json", m.dump(2) + "\n");
}

TrainOutcome cmd_train(const ExperimentConfig& cfg) {
  if (cfg.run_mode == RunMode::deploy) throw ConfigError("experiment.run_mode: train needs train_async or train_sync");
  const Scenario sc = make_scenario(cfg, cfg.track);
  RaceEnv env(sc.track, sc.params, training_env_config(cfg), sc.base);
  env.enable_trace(true);
  SacLearner learner(env.observation_dim(), 2, cfg.sac, cfg.seed);
  ReplayBuffer buffer(cfg.sac.buffer_capacity, env.observation_dim(), 2);
  TrainingOptions opts;
  opts.mode = cfg.run_mode;
  opts.budget_steps = cfg.budget_steps;
  opts.hdra_on = cfg.hdra_on;
  opts.seed = cfg.seed;
  opts.threaded = cfg.threaded;

  TrainOutcome out;
  out.report = run_training(env, learner, buffer, cfg.rates, opts);
  out.final_alpha = env.alpha();

  fs::create_directories(cfg.output_dir);
  const fs::path ckpt = cfg.output_dir / "checkpoint";
  learner.save(ckpt);
  save_run_meta(cfg, ckpt, env, sc.track->name());
  json j = to_json(out.report);
  j["track"] = sc.track->name();
  j["final_alpha"] = out.final_alpha;
  write_text(cfg.output_dir / "training_report.json", j.dump(2) + "\n");
  {
    std::ofstream curve(cfg.output_dir / "lap_curve.csv");
    write_lap_curve_csv(curve, out.report.laps, cfg.rates.control_hz);
  }
  std::vector<TraceRow> sampled;
  for (std::size_t i = 0; i < env.trace().size(); i += static_cast<std::size_t>(cfg.trace_stride)) {
    sampled.push_back(env.trace()[i]);
  }
  std::ofstream trace(cfg.output_dir / "trace_sampled.csv");
  RaceEnv::write_trace_header(trace);
  RaceEnv::write_trace_rows(trace, sampled);
  return out;
}

DeployOutcome cmd_deploy(const ExperimentConfig& cfg) {
  if (cfg.baseline_only) return deploy_policy(cfg, cfg.track, nullptr, cfg.env.curriculum.alpha, json::object());
  if (cfg.checkpoint.empty()) throw ConfigError("experiment.checkpoint: required unless experiment.baseline_only");
  const LoadedPolicy p = load_policy(cfg);
  return deploy_policy(cfg, cfg.track, &p.actor, p.alpha, json{{"checkpoint", cfg.checkpoint.string()}});
}

LapCsvSummary summarize_lap_csv(const fs::path& path, int target_clean_laps) {
  std::ifstream in(path);
  if (!in) throw RunError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<double> timed;
  std::vector<bool> clean;
  LapCsvSummary s;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() < 5) throw RunError("malformed lap row: " + line);
    s.n_bound += std::stoi(f[4]);
    if (f[3] == "1") {
      timed.push_back(std::stod(f[1]));
      clean.push_back(f[2] == "1");
    }
  }
  for (auto it = clean.rbegin(); it != clean.rend() && *it; ++it) ++s.trailing_clean;
  if (s.trailing_clean < target_clean_laps) return s;
  const std::vector<double> last(timed.end() - target_clean_laps, timed.end());
  double sum = 0.0;
  s.stats.t_min = last.front();
  s.stats.t_max = last.front();
  for (double t : last) {
    sum += t;
    s.stats.t_min = std::min(s.stats.t_min, t);
    s.stats.t_max = std::max(s.stats.t_max, t);
  }
  s.stats.t_mu = sum / static_cast<double>(last.size());
  if (last.size() > 1) {
    double ss = 0.0;
    for (double t : last) ss += (t - s.stats.t_mu) * (t - s.stats.t_mu);
    s.stats.sigma = std::sqrt(ss / static_cast<double>(last.size() - 1));
  }
  return s;
}

AblationRun run_ablation_variant(const ExperimentConfig& cfg, const std::string& variant, std::uint64_t seed) {
  if (std::find(kVariants.begin(), kVariants.end(), variant) == kVariants.end()) {
    throw ConfigError("unknown ablation variant '" + variant + "'");
  }
  SacConfig sac = cfg.sac;
  RateSchedule rates = cfg.rates;
  TrainingOptions opts;
  opts.seed = seed;
  opts.budget_steps = cfg.ablation.budget_steps;
  opts.hdra_on = variant.rfind("hdra", 0) == 0;
  sac.n_steps = variant == "td1_async" ? 1 : 3;
  if (variant == "hdra_td3_sync") {
    opts.mode = RunMode::train_sync;
    rates.learner_hz = cfg.ablation.sync_learner_hz;
  }

  const Scenario sc = make_scenario(cfg, cfg.track);
  RaceEnv env(sc.track, sc.params, training_env_config(cfg), sc.base);
  SacLearner learner(env.observation_dim(), 2, sac, seed);
  ReplayBuffer buffer(sac.buffer_capacity, env.observation_dim(), 2);
  const TrainingReport rep = run_training(env, learner, buffer, rates, opts);

  AblationRun run;
  run.variant = variant;
  run.seed = seed;
  run.sim_minutes = rep.sim_minutes;
  for (const auto& l : rep.laps) {
    if (l.clean) {
      run.first_clean_minutes = static_cast<double>(l.completed_at_tick) / rates.control_hz / 60.0;
      break;
    }
  }
  run.window_lap_times =
      window_times(rep.laps, rates.control_hz, rep.sim_minutes, cfg.ablation.window_minutes, &run.window_bound);
  run.filter_trace = rep.filter_trace;
  run.alpha_trace = rep.alpha_trace;
  run.learner_updates = rep.learner_updates;
  return run;
}

AblationRow summarize_ablation(const std::string& variant, const std::vector<AblationRun>& runs) {
  AblationRow row;
  row.run = variant;
  std::vector<double> pooled;
  int n = 0;
  double laps = 0.0;
  double bound = 0.0;
  for (const auto& r : runs) {
    if (r.variant != variant) continue;
    pooled.insert(pooled.end(), r.window_lap_times.begin(), r.window_lap_times.end());
    laps += static_cast<double>(r.window_lap_times.size());
    bound += r.window_bound;
    ++n;
  }
  if (n == 0) throw RunError("no runs for variant " + variant);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  row.stats = pooled.empty() ? LapStats{nan, nan, nan, nan} : lap_statistics(pooled);
  row.n_laps_mu = laps / n;
  row.n_bound_mu = bound / n;
  return row;
}

json to_json(const AblationRun& run) {
  return {{"variant", run.variant},
          {"seed", run.seed},
          {"first_clean_minutes", run.first_clean_minutes},
          {"window_lap_times", run.window_lap_times},
          {"window_bound", run.window_bound},
          {"sim_minutes", run.sim_minutes},
          {"filter_trace", run.filter_trace},
          {"alpha_trace", run.alpha_trace},
          {"learner_updates", run.learner_updates}};
}

AblationRun ablation_run_from_json(const json& j) {
  AblationRun r;
  r.variant = j.at("variant").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.first_clean_minutes = j.at("first_clean_minutes").get<double>();
  r.window_lap_times = j.at("window_lap_times").get<std::vector<double>>();
  r.window_bound = j.at("window_bound").get<int>();
  r.sim_minutes = j.at("sim_minutes").get<double>();
  r.filter_trace = j.at("filter_trace").get<std::vector<double>>();
  r.alpha_trace = j.at("alpha_trace").get<std::vector<double>>();
  r.learner_updates = j.at("learner_updates").get<std::int64_t>();
  return r;
}

void write_ablation_summary_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "run,t_min,t_max,t_mu,sigma,n_laps_mu,n_bound_mu\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.run << ',' << r.stats.t_min << ',' << r.stats.t_max << ',' << r.stats.t_mu << ',' << r.stats.sigma << ','
        << r.n_laps_mu << ',' << r.n_bound_mu << '\n';
  }
}

AblationOutcome cmd_ablation(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.output_dir / "ablation";
  fs::create_directories(dir);
  AblationOutcome out;
  for (const auto seed : cfg.ablation.seeds) {
    for (const auto& variant : cfg.ablation.variants) {
      AblationRun run = run_ablation_variant(cfg, variant, seed);
      write_text(dir / (variant + "_seed" + std::to_string(seed) + ".json"), to_json(run).dump(2) + "\n");
      out.runs.push_back(std::move(run));
    }
  }
  for (const auto& variant : cfg.ablation.variants) out.rows.push_back(summarize_ablation(variant, out.runs));
  std::ofstream csv(cfg.output_dir / "ablation_summary.csv");
  write_ablation_summary_csv(csv, out.rows);
  return out;
}

std::vector<HistogramBin> lap_histogram(const std::vector<double>& t, double width) {
  if (t.empty()) return {};
  const auto [lo_it, hi_it] = std::minmax_element(t.begin(), t.end());
  const auto first = static_cast<long long>(std::floor(*lo_it / width));
  const auto last = static_cast<long long>(std::floor(*hi_it / width));
  std::vector<HistogramBin> bins;
  for (long long k = first; k <= last; ++k) {
    bins.push_back({static_cast<double>(k) * width, static_cast<double>(k + 1) * width, 0});
  }
  for (double x : t) ++bins[static_cast<std::size_t>(static_cast<long long>(std::floor(x / width)) - first)].count;
  return bins;
}

TransferOutcome cmd_transfer(const ExperimentConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("experiment.checkpoint: transfer needs a source checkpoint");
  LoadedPolicy p = load_policy(cfg);
  const std::string target = cfg.transfer.target_track;
  const std::string source = p.meta.value("track", std::string{});
  const auto target_track = resolve_track(target, cfg);
  if (!source.empty() && source == target_track->name()) {
    throw RunError("checkpoint was trained on " + source + ", transfer needs a different target track");
  }
  json tags{{"transfer", cfg.transfer.shots}, {"source_track", source}, {"checkpoint", cfg.checkpoint.string()}};

  if (cfg.transfer.shots == "few") {
    const Scenario sc = make_scenario(cfg, target);
    RaceEnv env(sc.track, sc.params, training_env_config(cfg), sc.base);
    const int obs = env.observation_dim();
    if (p.actor.input_dim() != obs) throw RunError("checkpoint observation size does not match the target");
    SacLearner learner(obs, 2, cfg.sac, cfg.seed);
    learner.load(cfg.checkpoint);
    ReplayBuffer buffer(cfg.sac.buffer_capacity, obs, 2);
    TrainingOptions opts;
    opts.mode = cfg.run_mode == RunMode::train_sync ? RunMode::train_sync : RunMode::train_async;
    opts.budget_steps = cfg.transfer.few_shot_steps;
    opts.hdra_on = cfg.hdra_on;
    opts.seed = cfg.seed;
    const TrainingReport rep = run_training(env, learner, buffer, cfg.rates, opts);
    fs::create_directories(cfg.output_dir);
    learner.save(cfg.output_dir / "checkpoint");
    save_run_meta(cfg, cfg.output_dir / "checkpoint", env, sc.track->name());
    std::ofstream curve(cfg.output_dir / "lap_curve.csv");
    write_lap_curve_csv(curve, rep.laps, cfg.rates.control_hz);
    p.actor = learner.actor();
    p.alpha = env.alpha();
    tags["few_shot_steps"] = cfg.transfer.few_shot_steps;
  }

  TransferOutcome out;
  out.deployment = deploy_policy(cfg, target, &p.actor, p.alpha, tags);
  std::vector<double> times;
  for (const auto& l : out.deployment.report.laps) times.push_back(l.lap_time_s);
  out.histogram = lap_histogram(times, cfg.transfer.histogram_bin_s);
  std::ofstream h(cfg.output_dir / "lap_histogram.csv");
  h << "transfer,bin_lo_s,bin_hi_s,count\n";
  h.precision(17);
  for (const auto& b : out.histogram) h << cfg.transfer.shots << ',' << b.lo << ',' << b.hi << ',' << b.count << '\n';
  return out;
}

json track_info(const Track& track) {
  double k_max = 0.0;
  for (double k : track.curvature()) k_max = std::max(k_max, std::abs(k));
  double w_min = std::numeric_limits<double>::infinity();
  for (const auto& p : track.points()) w_min = std::min(w_min, p.w_left + p.w_right);
  json j{{"name", track.name()},
         {"points", track.size()},
         {"length_m", track.total_length()},
         {"max_abs_curvature", k_max},
         {"min_width_m", w_min},
         {"max_width_m", track.max_width()}};
  if (track.has_velocity_profile()) {
    const auto& v = track.velocity_profile();
    double t = 0.0;
    for (std::size_t i = 0; i < track.size(); ++i) {
      t += track.segment_length(i) / (0.5 * (v[i] + v[(i + 1) % v.size()]));
    }
    j["profile_v_min"] = *std::min_element(v.begin(), v.end());
    j["profile_v_max"] = *std::max_element(v.begin(), v.end());
    j["profile_lap_time_s"] = t;
  }
  return j;
}

json cmd_track_info(const ExperimentConfig& cfg) { return track_info(*resolve_track(cfg.track, cfg)); }

fs::path cmd_make_map_table(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  const fs::path path = cfg.output_dir / ("map_table_" + to_string(cfg.tire) + ".csv");
  build_map_table(cfg.vehicle).save_csv(path);
  return path;
}

}  // namespace racelab
