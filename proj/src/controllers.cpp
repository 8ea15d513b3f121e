#include "racelab/controllers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace racelab {

namespace {

ControlInput clamp_base(double delta, double v) {
  return {std::clamp(delta, -kBaseDeltaMax, kBaseDeltaMax), std::clamp(v, 0.0, kBaseSpeedMax)};
}

// Applied lateral force of an axle for slip angle alpha (opposes slip).
double axle_force(const PacejkaCoeffs& c, double mu, double alpha) { return -lateral_tire_force(c, mu, alpha); }

// Slip angle of the Magic Formula peak, searched on (0, pi/2).
double peak_slip(const PacejkaCoeffs& c) {
  double lo = 1e-6;
  double hi = 1.5;
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  for (int it = 0; it < 200; ++it) {
    const double a = hi - phi * (hi - lo);
    const double b = lo + phi * (hi - lo);
    if (lateral_tire_force(c, 1.0, a) < lateral_tire_force(c, 1.0, b)) {
      lo = a;
    } else {
      hi = b;
    }
  }
  return 0.5 * (lo + hi);
}

// Slip angle on the monotone branch producing Magic Formula value `value`.
double inverse_magic_formula(const PacejkaCoeffs& c, double mu, double value, double alpha_peak) {
  const double sign = value < 0.0 ? -1.0 : 1.0;
  const double target = std::abs(value);
  double lo = 0.0;
  double hi = alpha_peak;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (lateral_tire_force(c, mu, mid) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return sign * 0.5 * (lo + hi);
}

}  // namespace

double pursuit_lookahead(const PurePursuitConfig& cfg, double v_x) {
  return std::clamp(cfg.lookahead_base + cfg.lookahead_gain * v_x, cfg.lookahead_min, cfg.lookahead_max);
}

PursuitGeometry pursuit_geometry(const VehicleState& state, const Track& track,
                                 const PurePursuitConfig& cfg) {
  const double L = pursuit_lookahead(cfg, state.v_x);
  const GlobalPose car = frenet_to_global(track, {state.s, state.n, state.mu});
  const double s_target = track.wrap_s(state.s + L);
  const Vec2 target = track.position_at(s_target);
  const double dx = target.x - car.x;
  const double dy = target.y - car.y;
  const double c = std::cos(car.heading);
  const double s = std::sin(car.heading);
  const double bx = c * dx + s * dy;
  const double by = -s * dx + c * dy;
  return {std::atan2(by, bx), L, s_target};
}

ControlInput pure_pursuit(const VehicleState& state, const Track& track, const PurePursuitConfig& cfg) {
  const PursuitGeometry g = pursuit_geometry(state, track, cfg);
  const double delta = std::atan(2.0 * cfg.wheelbase * std::sin(g.eta) / g.lookahead);
  return clamp_base(delta, track.velocity_at(g.s_target));
}

int MapGridSpec::v_count() const { return static_cast<int>(std::lround((v_max - v_min) / v_step)) + 1; }

int MapGridSpec::kappa_count() const { return 2 * static_cast<int>(std::lround(kappa_max / kappa_step)) + 1; }

MapLookupTable::MapLookupTable(MapGridSpec spec, std::vector<double> delta, std::vector<char> saturated)
    : spec_(spec), delta_(std::move(delta)), saturated_(std::move(saturated)) {
  const auto cells = static_cast<std::size_t>(spec_.v_count()) * static_cast<std::size_t>(spec_.kappa_count());
  if (delta_.size() != cells || saturated_.size() != cells) {
    throw std::invalid_argument("MAP table size does not match its grid");
  }
}

MapLookupTable MapLookupTable::kinematic(double wheelbase, MapGridSpec spec) {
  const int nv = spec.v_count();
  const int nk = spec.kappa_count();
  std::vector<double> delta(static_cast<std::size_t>(nv * nk));
  for (int i = 0; i < nv; ++i) {
    for (int j = 0; j < nk; ++j) {
      delta[static_cast<std::size_t>(i * nk + j)] = std::atan(wheelbase * (j - nk / 2) * spec.kappa_step);
    }
  }
  std::vector<char> saturated(delta.size(), 0);
  return MapLookupTable(spec, std::move(delta), std::move(saturated));
}

double MapLookupTable::lookup(double v, double kappa) const {
  const int nv = spec_.v_count();
  const int nk = spec_.kappa_count();
  const double fi = std::clamp((v - spec_.v_min) / spec_.v_step, 0.0, static_cast<double>(nv - 1));
  const double fj = std::clamp(kappa / spec_.kappa_step + nk / 2, 0.0, static_cast<double>(nk - 1));
  const int i0 = std::min(static_cast<int>(fi), nv - 2);
  const int j0 = std::min(static_cast<int>(fj), nk - 2);
  const double ti = fi - i0;
  const double tj = fj - j0;
  const double d00 = delta(i0, j0);
  const double d01 = delta(i0, j0 + 1);
  const double d10 = delta(i0 + 1, j0);
  const double d11 = delta(i0 + 1, j0 + 1);
  return (1.0 - ti) * ((1.0 - tj) * d00 + tj * d01) + ti * ((1.0 - tj) * d10 + tj * d11);
}

void MapLookupTable::save_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "v_mps,kappa_1pm,delta_rad,saturated\n" << std::setprecision(17);
  for (int i = 0; i < spec_.v_count(); ++i) {
    for (int j = 0; j < spec_.kappa_count(); ++j) {
      out << v_at(i) << ',' << kappa_at(j) << ',' << delta(i, j) << ',' << (saturated(i, j) ? 1 : 0) << '\n';
    }
  }
}

MapLookupTable MapLookupTable::load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open MAP table " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("v_mps,kappa_1pm,delta_rad,saturated", 0) != 0) {
    throw std::runtime_error(path.string() + ": unexpected MAP table header");
  }
  std::vector<double> vs;
  std::vector<double> ks;
  std::vector<double> delta;
  std::vector<char> sat;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    double v = 0.0;
    double k = 0.0;
    double d = 0.0;
    int s = 0;
    char c1 = 0;
    char c2 = 0;
    char c3 = 0;
    if (!(ss >> v >> c1 >> k >> c2 >> d >> c3 >> s) || c1 != ',' || c2 != ',' || c3 != ',') {
      throw std::runtime_error(path.string() + ": malformed MAP row '" + line + "'");
    }
    vs.push_back(v);
    ks.push_back(k);
    delta.push_back(d);
    sat.push_back(static_cast<char>(s != 0));
  }
  if (vs.size() < 4) throw std::runtime_error(path.string() + ": MAP table too small");
  std::size_t nk = 1;
  while (nk < vs.size() && vs[nk] == vs[0]) ++nk;
  const std::size_t nv = vs.size() / nk;
  if (nk < 2 || nv < 2 || nv * nk != vs.size()) throw std::runtime_error(path.string() + ": MAP table is not a grid");
  MapGridSpec spec;
  spec.v_min = vs.front();
  spec.v_step = vs[nk] - vs[0];
  spec.v_max = vs.back();
  spec.kappa_max = -ks.front();
  spec.kappa_step = ks[1] - ks[0];
  return MapLookupTable(spec, std::move(delta), std::move(sat));
}

SteadyStateCorner solve_steady_state(const VehicleParams& p, double v_x, double kappa) {
  SteadyStateCorner out;
  if (kappa == 0.0) {
    out.feasible = true;
    return out;
  }
  const double wb = p.wheelbase();
  const double alpha_peak_f = peak_slip(p.pacejka_front);
  const double alpha_peak_r = peak_slip(p.pacejka_rear);
  const double peak_r = lateral_tire_force(p.pacejka_rear, p.mu_friction, alpha_peak_r);
  const double peak_f = lateral_tire_force(p.pacejka_front, p.mu_friction, alpha_peak_f);

  // Fixed point on v_y: yaw rate follows the path, rear slip follows the rear
  // force needed for yaw balance, and v_y follows the rear slip.
  double v_y = 0.0;
  double r = 0.0;
  for (int it = 0; it < 100; ++it) {
    r = kappa * std::hypot(v_x, v_y);
    const double f_rear = p.m * v_x * r * p.l_f / wb;
    if (std::abs(f_rear) >= peak_r) return out;
    const double alpha_r = -inverse_magic_formula(p.pacejka_rear, p.mu_friction, f_rear, alpha_peak_r);
    const double next = v_x * std::tan(alpha_r) + r * p.l_r;
    if (std::abs(next - v_y) < 1e-14) {
      v_y = next;
      break;
    }
    v_y = next;
  }
  r = kappa * std::hypot(v_x, v_y);

  const double f_front = p.m * v_x * r * p.l_r / wb;  // = F_yf cos(delta)
  const double beta_f = std::atan((v_y + r * p.l_f) / v_x);
  auto residual = [&](double delta) {
    return axle_force(p.pacejka_front, p.mu_friction, beta_f - delta) * std::cos(delta) - f_front;
  };
  // Over this bracket the front slip sweeps the monotone branch.
  double lo = beta_f - alpha_peak_f;
  double hi = beta_f + alpha_peak_f;
  double flo = residual(lo);
  const double fhi = residual(hi);
  if (std::abs(f_front) >= peak_f || (flo > 0.0) == (fhi > 0.0)) return out;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = residual(mid);
    if ((fm > 0.0) == (flo > 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  out.feasible = true;
  out.delta = 0.5 * (lo + hi);
  out.v_y = v_y;
  out.r = r;
  return out;
}

MapLookupTable build_map_table(const VehicleParams& params, const MapGridSpec& spec) {
  const int nv = spec.v_count();
  const int nk = spec.kappa_count();
  const int center = nk / 2;
  std::vector<double> delta(static_cast<std::size_t>(nv * nk), 0.0);
  std::vector<char> sat(delta.size(), 0);
  for (int i = 0; i < nv; ++i) {
    const double v = spec.v_min + i * spec.v_step;
    // Walk outwards from kappa = 0 so saturated cells inherit the boundary.
    for (int dir : {-1, 1}) {
      double boundary = 0.0;
      bool saturated = false;
      for (int j = center; j >= 0 && j < nk; j += dir) {
        const auto idx = static_cast<std::size_t>(i * nk + j);
        if (!saturated) {
          const SteadyStateCorner ss = solve_steady_state(params, v, (j - center) * spec.kappa_step);
          if (ss.feasible) {
            boundary = ss.delta;
          } else {
            saturated = true;
          }
        }
        delta[idx] = boundary;
        sat[idx] = static_cast<char>(saturated);
      }
    }
  }
  return MapLookupTable(spec, std::move(delta), std::move(sat));
}

ControlInput map_controller(const VehicleState& state, const Track& track, const MapLookupTable& table,
                            const PurePursuitConfig& cfg) {
  const PursuitGeometry g = pursuit_geometry(state, track, cfg);
  const double kappa_target = 2.0 * std::sin(g.eta) / g.lookahead;
  return clamp_base(table.lookup(state.v_x, kappa_target), track.velocity_at(g.s_target));
}

double ftg_ray_angle(const FtgConfig& cfg, int k) { return -0.5 * cfg.fov + cfg.fov * k / (cfg.n_rays - 1); }

GapChoice ftg_select(std::span<const double> ranges, const FtgConfig& cfg) {
  const int n = static_cast<int>(ranges.size());
  if (n != cfg.n_rays || n < 3) throw std::invalid_argument("scan size does not match FTG configuration");

  GapChoice out;
  const int nearest = static_cast<int>(std::min_element(ranges.begin(), ranges.end()) - ranges.begin());
  const double r_min = ranges[static_cast<std::size_t>(nearest)];
  const double half_angle = r_min > cfg.bubble_radius ? std::asin(cfg.bubble_radius / r_min) : 0.5 * std::numbers::pi;
  const double nearest_angle = ftg_ray_angle(cfg, nearest);

  std::vector<double> masked(ranges.begin(), ranges.end());
  out.bubble_begin = n;
  out.bubble_end = 0;
  for (int k = 0; k < n; ++k) {
    if (std::abs(ftg_ray_angle(cfg, k) - nearest_angle) <= half_angle) {
      masked[static_cast<std::size_t>(k)] = 0.0;
      out.bubble_begin = std::min(out.bubble_begin, k);
      out.bubble_end = std::max(out.bubble_end, k + 1);
    }
  }

  int k = 0;
  while (k < n) {
    if (masked[static_cast<std::size_t>(k)] > cfg.range_threshold) {
      int end = k;
      while (end < n && masked[static_cast<std::size_t>(end)] > cfg.range_threshold) ++end;
      if (end - k > out.gap_end - out.gap_begin) {
        out.gap_begin = k;
        out.gap_end = end;
        out.gap_found = true;
      }
      k = end;
    } else {
      ++k;
    }
  }

  if (!out.gap_found) {
    out.best = static_cast<int>(std::max_element(ranges.begin(), ranges.end()) - ranges.begin());
    return out;
  }
  // Deepest ray in the gap; ties go to the ray closest to straight ahead.
  out.best = out.gap_begin;
  for (int j = out.gap_begin; j < out.gap_end; ++j) {
    const double rj = masked[static_cast<std::size_t>(j)];
    const double rb = masked[static_cast<std::size_t>(out.best)];
    if (rj > rb || (rj == rb && std::abs(ftg_ray_angle(cfg, j)) < std::abs(ftg_ray_angle(cfg, out.best)))) {
      out.best = j;
    }
  }
  return out;
}

ControlInput follow_the_gap(std::span<const double> ranges, const FtgConfig& cfg, double /*v_x*/) {
  const GapChoice choice = ftg_select(ranges, cfg);
  const double delta = ftg_ray_angle(cfg, choice.best);
  if (!choice.gap_found) return clamp_base(delta, cfg.speed_min);
  const double clearance = ranges[ranges.size() / 2];
  const double v = std::clamp(cfg.speed_offset + cfg.speed_gain * clearance, cfg.speed_min, cfg.speed_max);
  return clamp_base(delta, v);
}

ControllerKind parse_controller_kind(const std::string& name) {
  if (name == "pp") return ControllerKind::pp;
  if (name == "map") return ControllerKind::map;
  if (name == "ftg") return ControllerKind::ftg;
  if (name == "none") return ControllerKind::none;
  throw std::invalid_argument("unknown controller '" + name + "' (expected pp, map, ftg or none)");
}

std::string to_string(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::pp:
      return "pp";
    case ControllerKind::map:
      return "map";
    case ControllerKind::ftg:
      return "ftg";
    case ControllerKind::none:
      return "none";
  }
  return "none";
}

BaseController BaseController::make_pure_pursuit(PurePursuitConfig cfg) { return BaseController(cfg); }

BaseController BaseController::make_map(PurePursuitConfig cfg, std::shared_ptr<const MapLookupTable> table) {
  if (!table) throw std::invalid_argument("MAP controller needs a lookup table");
  return BaseController(Map{cfg, std::move(table)});
}

BaseController BaseController::make_ftg(FtgConfig cfg) { return BaseController(cfg); }

ControllerKind BaseController::kind() const {
  if (std::holds_alternative<PurePursuitConfig>(impl_)) return ControllerKind::pp;
  if (std::holds_alternative<Map>(impl_)) return ControllerKind::map;
  return ControllerKind::ftg;
}

ControlInput BaseController::command(const VehicleState& state, const Track& track) const {
  if (const auto* pp = std::get_if<PurePursuitConfig>(&impl_)) return pure_pursuit(state, track, *pp);
  if (const auto* map = std::get_if<Map>(&impl_)) return map_controller(state, track, *map->table, map->pursuit);
  const auto& ftg = std::get<FtgConfig>(impl_);
  const GlobalPose pose = frenet_to_global(track, {state.s, state.n, state.mu});
  const auto ranges = cast_rays(track, pose.x, pose.y, pose.heading, ftg.fov, ftg.n_rays, ftg.max_range);
  return follow_the_gap(ranges, ftg, state.v_x);
}

}  // namespace racelab
