#pragma once

#include <stdexcept>
#include <string>

#include "racelab/track.hpp"

namespace racelab {

class SingularityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PacejkaCoeffs {
  double B{5.0};
  double C{1.5};
  double D{1.0};
  double E{0.5};
  double F_z{0.0};  // static vertical load on the lumped axle [N]
};

enum class TirePreset { turbo, tpu };

TirePreset parse_tire_preset(const std::string& name);
std::string to_string(TirePreset preset);
double preset_friction(TirePreset preset);

struct VehicleParams {
  double m{3.5};
  double I_z{0.05};
  double l_f{0.16};
  double l_r{0.16};
  double mu_friction{1.01};
  PacejkaCoeffs pacejka_front{3.5, 1.5, 1.0, 0.5, 0.0};
  PacejkaCoeffs pacejka_rear{};
  double delta_max{0.42};
  double v_max{10.0};
  double a_long_max{7.0};
  double steer_rate_max{3.2};
  double speed_tau{0.3};
  double g{9.81};
  // Below v_blend_high the lateral/yaw states blend towards a kinematic bicycle.
  double v_blend_low{0.1};
  double v_blend_high{0.3};
  double kinematic_tau{0.05};

  double wheelbase() const { return l_f + l_r; }

  // Fills the axle loads from the static weight distribution.
  void set_static_loads();
  void validate() const;
};

VehicleParams default_vehicle_params(TirePreset preset = TirePreset::turbo);

// Plant state. s, n, mu are curvilinear (mu is the heading relative to the
// reference tangent); v_x, v_y, r live in the body frame.
struct VehicleState {
  double s{};
  double n{};
  double mu{};
  double v_x{};
  double v_y{};
  double r{};
  double delta{};
};

struct ControlInput {
  double delta_cmd{};
  double v_cmd{};
};

struct StateDerivative {
  double s{};
  double n{};
  double mu{};
  double v_x{};
  double v_y{};
  double r{};
};

struct SlipAngles {
  double front{};
  double rear{};
};

// Magic Formula value mu * F_z * D * sin(C * atan(B a - E (B a - atan(B a)))).
double lateral_tire_force(const PacejkaCoeffs& coeffs, double mu_friction, double alpha);

SlipAngles slip_angles(const VehicleState& state, const VehicleParams& params);

// Time derivative of (s, n, mu, v_x, v_y, r) for longitudinal acceleration
// `accel` and steering angle `delta`. Slip angles are velocity angle minus
// wheel angle, so the tire force entering the dynamics is the negated Magic
// Formula value. Throws SingularityError when |1 - kappa n| <= 0.05.
StateDerivative state_derivative(const VehicleState& state, double accel, double delta,
                                 const VehicleParams& params, double kappa_ref);

// Classical RK4 with (accel, delta) held over dt; kappa is read from the track
// at each stage.
VehicleState integrate_rk4(const VehicleState& state, double accel, double delta,
                           const VehicleParams& params, const Track& track, double dt);

// Longitudinal acceleration realised by the first-order speed loop.
double speed_loop_acceleration(double v_cmd, double v_x, const VehicleParams& params);

// One physics step: steering rate limit, speed loop, RK4, s wrap.
VehicleState step(const VehicleState& state, const ControlInput& cmd, const VehicleParams& params,
                  const Track& track, double dt);

}  // namespace racelab
