#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "racelab/track.hpp"
#include "racelab/vehicle.hpp"

// Exact property checks shared by the unit tests and the acceptance run.
namespace props {

struct FrenetRoundTrip {
  int poses{};
  double max_s_err{};
  double max_n_err{};
  double max_mu_err{};
};
FrenetRoundTrip frenet_round_trip(const racelab::Track& track, int poses, std::uint64_t seed);

struct PacejkaCheck {
  double max_oddness_err{};
  double zero_slip_force{};
};
PacejkaCheck pacejka_check(const racelab::VehicleParams& params);

// Errors of RK4 at steps h and h/2 against a fine reference.
struct RichardsonCheck {
  double err_h{};
  double err_h2{};
  double ratio{};  // ~16 for a fourth-order method
};
RichardsonCheck rk4_richardson(double h);

struct NStepCheck {
  int steps{};
  int windows{};
  int terminals{};
  double max_err{};
  int flag_mismatches{};
};
// Records a random-action env run into a replay buffer and compares every
// n-step window against a direct sum over the recorded list.
NStepCheck nstep_bruteforce(int steps, int n, double gamma, std::uint64_t seed);

struct HdraCheck {
  int events{};
  int terminals{};
  int overwritten_terminals{};
  double max_err{};
};
// Random push / terminal stream through a small ring buffer against a plain
// event log with the redistribution applied by hand.
HdraCheck hdra_event_log(int events, std::size_t capacity, int N, double p, std::uint64_t seed);

struct GradCheck {
  std::string name;
  double rel_err{};
};
// Analytic gradients against central differences, norm-wise relative error.
std::vector<GradCheck> gradient_checks(std::uint64_t seed);

}  // namespace props
