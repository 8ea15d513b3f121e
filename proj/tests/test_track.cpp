#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "properties.hpp"
#include "racelab/track.hpp"
#include "racelab/track_library.hpp"

using namespace racelab;
using std::numbers::pi;

TEST_CASE("circle track length and curvature match the polygon") {
  const int n = 400;
  const double R = 3.0;
  const Track t = make_circle_track(R, n, 0.5, 0.5);
  CHECK(t.total_length() == doctest::Approx(2.0 * n * R * std::sin(pi / n)).epsilon(1e-12));
  for (double s : {0.0, 3.3, 10.1}) CHECK(t.curvature_at(s) == doctest::Approx(1.0 / R).epsilon(1e-3));
}

TEST_CASE("frenet round trip on the bundled layouts") {
  for (const Track& t : {make_c_like_track(), make_y_like_track()}) {
    const auto r = props::frenet_round_trip(t, 1000, 7);
    CHECK(r.max_s_err < 1e-3);
    CHECK(r.max_n_err < 1e-3);
    CHECK(r.max_mu_err < 1e-3);
  }
}

TEST_CASE("frenet_to_global on a straight piece is the plain offset") {
  const Track t = make_stadium_track(10.0, 2.0, 0.05, 0.6);
  // Start is the middle of the lower straight heading +x.
  const Vec2 p0 = t.position_at(0.0);
  const GlobalPose g = frenet_to_global(t, {1.0, 0.2, 0.1});
  CHECK(g.x == doctest::Approx(p0.x + 1.0).epsilon(1e-9));
  CHECK(g.y == doctest::Approx(p0.y + 0.2).epsilon(1e-9));
  CHECK(g.heading == doctest::Approx(0.1).epsilon(1e-9));
}

TEST_CASE("boundary violation is strict on each side") {
  const Track t = make_circle_track(4.0, 300, 0.4, 0.3);
  CHECK_FALSE(boundary_violation(t, {1.0, 0.39, 0.0}));
  CHECK(boundary_violation(t, {1.0, 0.41, 0.0}));
  CHECK_FALSE(boundary_violation(t, {1.0, -0.29, 0.0}));
  CHECK(boundary_violation(t, {1.0, -0.31, 0.0}));
}

TEST_CASE("progress delta wraps across the start line") {
  const Track t = make_circle_track(2.0, 200, 0.5, 0.5);
  const double L = t.total_length();
  CHECK(progress_delta(t, L - 0.1, 0.1) == doctest::Approx(0.2));
  CHECK(progress_delta(t, 0.1, L - 0.1) == doctest::Approx(-0.2));
  CHECK(progress_delta(t, 1.0, 1.5) == doctest::Approx(0.5));
}

TEST_CASE("ray cast hits a square wall at the analytic distance") {
  const std::vector<Vec2> square{{-1, -1}, {1, -1}, {1, 1}, {-1, 1}};
  CHECK(cast_ray(square, true, {0, 0}, 0.0, 10.0) == doctest::Approx(1.0));
  CHECK(cast_ray(square, true, {0, 0}, pi / 4, 10.0) == doctest::Approx(std::sqrt(2.0)));
  CHECK(cast_ray(square, true, {0.5, 0}, pi, 10.0) == doctest::Approx(1.5));
  CHECK(cast_ray(square, true, {0, 0}, 0.0, 0.5) == doctest::Approx(0.5));
}

TEST_CASE("velocity profile on a circle is the friction limit") {
  Track t = make_circle_track(2.0, 400, 0.5, 0.5);
  VelocityProfileParams p;
  p.mu_friction = 0.8;
  const auto v = generate_velocity_profile(t, p);
  for (double x : v) CHECK(x == doctest::Approx(std::sqrt(0.8 * 9.81 * 2.0)).epsilon(1e-3));
  p.v_cap = 2.0;
  for (double x : generate_velocity_profile(t, p)) CHECK(x <= 2.0 + 1e-12);
}

TEST_CASE("velocity profile respects the acceleration limit along the lap") {
  Track t = make_c_like_track();
  VelocityProfileParams p;
  p.mu_friction = 0.6;
  p.a_max = 3.0;
  const auto v = generate_velocity_profile(t, p);
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double dv2 = v[(i + 1) % n] * v[(i + 1) % n] - v[i] * v[i];
    CHECK(std::abs(dv2) <= 2.0 * p.a_max * t.segment_length(i) * (1.0 + 1e-6) + 1e-9);
  }
}

TEST_CASE("track csv round trip is exact") {
  const Track t = make_y_like_track();
  const auto path = std::filesystem::temp_directory_path() / "racelab_track_rt.csv";
  save_track_csv(t, path);
  const Track u = load_track(path);
  REQUIRE(u.size() == t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK(u.points()[i].x == t.points()[i].x);
    CHECK(u.points()[i].y == t.points()[i].y);
    CHECK(u.points()[i].w_left == t.points()[i].w_left);
  }
  CHECK(u.total_length() == t.total_length());
  std::filesystem::remove(path);
}

TEST_CASE("bundled layouts have the stated lengths") {
  CHECK(make_c_like_track().total_length() == doctest::Approx(41.0).epsilon(0.01));
  CHECK(make_y_like_track().total_length() == doctest::Approx(34.0).epsilon(0.01));
}
