#include "racelab/vehicle.hpp"

#include <algorithm>
#include <cmath>

namespace racelab {

TirePreset parse_tire_preset(const std::string& name) {
  if (name == "turbo") return TirePreset::turbo;
  if (name == "tpu") return TirePreset::tpu;
  throw std::invalid_argument("unknown tire preset '" + name + "' (expected turbo or tpu)");
}

std::string to_string(TirePreset preset) { return preset == TirePreset::turbo ? "turbo" : "tpu"; }

double preset_friction(TirePreset preset) { return preset == TirePreset::turbo ? 1.01 : 0.75; }

void VehicleParams::set_static_loads() {
  const double wb = wheelbase();
  pacejka_front.F_z = m * g * l_r / wb;
  pacejka_rear.F_z = m * g * l_f / wb;
}

void VehicleParams::validate() const {
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0)) throw std::invalid_argument(std::string("vehicle parameter ") + what + " must be > 0");
  };
  positive(m, "m");
  positive(I_z, "I_z");
  positive(l_f, "l_f");
  positive(l_r, "l_r");
  positive(mu_friction, "mu_friction");
  positive(delta_max, "delta_max");
  positive(v_max, "v_max");
  positive(a_long_max, "a_long_max");
  positive(steer_rate_max, "steer_rate_max");
  positive(speed_tau, "speed_tau");
  for (const auto* c : {&pacejka_front, &pacejka_rear}) {
    positive(c->B, "pacejka.B");
    positive(c->C, "pacejka.C");
    positive(c->D, "pacejka.D");
    positive(c->F_z, "pacejka.F_z");
  }
  if (!(v_blend_high > v_blend_low)) throw std::invalid_argument("v_blend_high must exceed v_blend_low");
}

VehicleParams default_vehicle_params(TirePreset preset) {
  VehicleParams p;
  p.mu_friction = preset_friction(preset);
  p.set_static_loads();
  return p;
}

double lateral_tire_force(const PacejkaCoeffs& c, double mu_friction, double alpha) {
  const double ba = c.B * alpha;
  return mu_friction * c.F_z * c.D * std::sin(c.C * std::atan(ba - c.E * (ba - std::atan(ba))));
}

SlipAngles slip_angles(const VehicleState& st, const VehicleParams& p) {
  const double vx = std::max(st.v_x, p.v_blend_low);
  return {std::atan((st.v_y + st.r * p.l_f) / vx) - st.delta, std::atan((st.v_y - st.r * p.l_r) / vx)};
}

StateDerivative state_derivative(const VehicleState& st, double accel, double delta,
                                 const VehicleParams& p, double kappa_ref) {
  const double denom = 1.0 - kappa_ref * st.n;
  if (std::abs(denom) <= 0.05) {
    throw SingularityError("curvilinear singularity: |1 - kappa n| = " + std::to_string(std::abs(denom)));
  }

  StateDerivative d;
  const double cmu = std::cos(st.mu);
  const double smu = std::sin(st.mu);
  d.s = (st.v_x * cmu - st.v_y * smu) / denom;
  d.n = st.v_x * smu + st.v_y * cmu;
  d.mu = st.r - kappa_ref * d.s;

  const double w = std::clamp((st.v_x - p.v_blend_low) / (p.v_blend_high - p.v_blend_low), 0.0, 1.0);

  double dvx_dyn = 0.0;
  double dvy_dyn = 0.0;
  double dr_dyn = 0.0;
  if (w > 0.0) {
    VehicleState with_delta = st;
    with_delta.delta = delta;
    const SlipAngles alpha = slip_angles(with_delta, p);
    const double fyf = -lateral_tire_force(p.pacejka_front, p.mu_friction, alpha.front);
    const double fyr = -lateral_tire_force(p.pacejka_rear, p.mu_friction, alpha.rear);
    const double cd = std::cos(delta);
    const double sd = std::sin(delta);
    dvx_dyn = accel + (-fyf * sd + p.m * st.v_y * st.r) / p.m;
    dvy_dyn = (fyr + fyf * cd - p.m * st.v_x * st.r) / p.m;
    dr_dyn = (fyf * p.l_f * cd - fyr * p.l_r) / p.I_z;
  }

  double dvx_kin = 0.0;
  double dvy_kin = 0.0;
  double dr_kin = 0.0;
  if (w < 1.0) {
    const double r_kin = st.v_x * std::tan(delta) / p.wheelbase();
    dvx_kin = accel;
    dvy_kin = (r_kin * p.l_r - st.v_y) / p.kinematic_tau;
    dr_kin = (r_kin - st.r) / p.kinematic_tau;
  }

  d.v_x = w * dvx_dyn + (1.0 - w) * dvx_kin;
  d.v_y = w * dvy_dyn + (1.0 - w) * dvy_kin;
  d.r = w * dr_dyn + (1.0 - w) * dr_kin;
  return d;
}

namespace {

VehicleState advance(const VehicleState& st, const StateDerivative& d, double h) {
  VehicleState out = st;
  out.s += h * d.s;
  out.n += h * d.n;
  out.mu += h * d.mu;
  out.v_x += h * d.v_x;
  out.v_y += h * d.v_y;
  out.r += h * d.r;
  return out;
}

}  // namespace

VehicleState integrate_rk4(const VehicleState& st, double accel, double delta,
                           const VehicleParams& p, const Track& track, double dt) {
  auto f = [&](const VehicleState& x) {
    return state_derivative(x, accel, delta, p, track.curvature_at(x.s));
  };
  const StateDerivative k1 = f(st);
  const StateDerivative k2 = f(advance(st, k1, 0.5 * dt));
  const StateDerivative k3 = f(advance(st, k2, 0.5 * dt));
  const StateDerivative k4 = f(advance(st, k3, dt));

  StateDerivative sum;
  sum.s = k1.s + 2.0 * k2.s + 2.0 * k3.s + k4.s;
  sum.n = k1.n + 2.0 * k2.n + 2.0 * k3.n + k4.n;
  sum.mu = k1.mu + 2.0 * k2.mu + 2.0 * k3.mu + k4.mu;
  sum.v_x = k1.v_x + 2.0 * k2.v_x + 2.0 * k3.v_x + k4.v_x;
  sum.v_y = k1.v_y + 2.0 * k2.v_y + 2.0 * k3.v_y + k4.v_y;
  sum.r = k1.r + 2.0 * k2.r + 2.0 * k3.r + k4.r;
  VehicleState out = advance(st, sum, dt / 6.0);
  out.delta = delta;
  return out;
}

double speed_loop_acceleration(double v_cmd, double v_x, const VehicleParams& p) {
  const double target = std::clamp(v_cmd, 0.0, p.v_max);
  return std::clamp((target - v_x) / p.speed_tau, -p.a_long_max, p.a_long_max);
}

VehicleState step(const VehicleState& st, const ControlInput& cmd, const VehicleParams& p,
                  const Track& track, double dt) {
  if (!(dt > 0.0) || dt > 0.02) throw std::invalid_argument("physics dt must lie in (0, 0.02]");
  const double target = std::clamp(cmd.delta_cmd, -p.delta_max, p.delta_max);
  const double max_change = p.steer_rate_max * dt;
  VehicleState st2 = st;
  st2.delta = std::clamp(st.delta + std::clamp(target - st.delta, -max_change, max_change),
                         -p.delta_max, p.delta_max);
  const double accel = speed_loop_acceleration(cmd.v_cmd, st.v_x, p);

  VehicleState out = integrate_rk4(st2, accel, st2.delta, p, track, dt);
  out.v_x = std::max(out.v_x, 0.0);
  out.s = track.wrap_s(out.s);
  out.mu = wrap_angle(out.mu);
  return out;
}

}  // namespace racelab
