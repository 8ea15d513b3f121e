#include "racelab/track_library.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace racelab {

namespace {

constexpr double kPi = std::numbers::pi;

// Samples a closed parametric curve at equal arc-length spacing and scales it
// to the requested length.
Track resample_closed_curve(const std::function<Vec2(double)>& curve, double target_length,
                            double spacing, double width, std::string name) {
  constexpr int kDense = 20000;
  std::vector<Vec2> dense(kDense);
  for (int i = 0; i < kDense; ++i) dense[i] = curve(2.0 * kPi * i / kDense);
  std::vector<double> cum(kDense + 1, 0.0);
  for (int i = 0; i < kDense; ++i) {
    const Vec2 a = dense[i];
    const Vec2 b = dense[(i + 1) % kDense];
    cum[i + 1] = cum[i] + std::hypot(b.x - a.x, b.y - a.y);
  }
  const double scale = target_length / cum.back();
  const int n = static_cast<int>(std::lround(target_length / spacing));
  std::vector<TrackPoint> pts;
  pts.reserve(n);
  int j = 0;
  for (int k = 0; k < n; ++k) {
    const double s = cum.back() * k / n;
    while (cum[j + 1] < s) ++j;
    const double t = (s - cum[j]) / (cum[j + 1] - cum[j]);
    const Vec2 a = dense[j];
    const Vec2 b = dense[(j + 1) % kDense];
    pts.push_back({scale * (a.x + t * (b.x - a.x)), scale * (a.y + t * (b.y - a.y)), width, width});
  }
  return Track(std::move(pts), std::move(name));
}

}  // namespace

Track make_circle_track(double radius, int n_points, double w_left, double w_right) {
  std::vector<TrackPoint> pts;
  pts.reserve(n_points);
  for (int i = 0; i < n_points; ++i) {
    const double a = 2.0 * kPi * i / n_points - 0.5 * kPi;
    pts.push_back({radius * std::cos(a), radius * std::sin(a), w_left, w_right});
  }
  return Track(std::move(pts), "circle");
}

Track make_stadium_track(double straight_length, double radius, double spacing, double width) {
  std::vector<TrackPoint> pts;
  const double half = 0.5 * straight_length;
  const double perimeter = 2.0 * straight_length + 2.0 * kPi * radius;
  const int n = static_cast<int>(std::lround(perimeter / spacing));
  for (int k = 0; k < n; ++k) {
    double s = perimeter * k / n;
    Vec2 p;
    if (s < half) {
      p = {s, -radius};
    } else if ((s -= half) < kPi * radius) {
      const double a = -0.5 * kPi + s / radius;
      p = {half + radius * std::cos(a), radius * std::sin(a)};
    } else if ((s -= kPi * radius) < straight_length) {
      p = {half - s, radius};
    } else if ((s -= straight_length) < kPi * radius) {
      const double a = 0.5 * kPi + s / radius;
      p = {-half + radius * std::cos(a), radius * std::sin(a)};
    } else {
      s -= kPi * radius;
      p = {-half + s, -radius};
    }
    pts.push_back({p.x, p.y, width, width});
  }
  return Track(std::move(pts), "stadium");
}

Track make_c_like_track(double width) {
  auto curve = [](double t) {
    const double d = std::remainder(t - kPi, 2.0 * kPi);
    const double r = 1.0 - 0.42 * std::exp(-d * d / (2.0 * 0.55 * 0.55));
    return Vec2{1.25 * r * std::cos(t), r * std::sin(t)};
  };
  return resample_closed_curve(curve, 41.0, 0.1, width, "c-like");
}

Track make_y_like_track(double width) {
  auto curve = [](double t) {
    const double r = 1.0 + 0.22 * std::cos(3.0 * t);
    return Vec2{r * std::cos(t), r * std::sin(t)};
  };
  return resample_closed_curve(curve, 34.0, 0.1, width, "y-like");
}

Track make_named_track(const std::string& name) {
  if (name == "c-like") return make_c_like_track();
  if (name == "y-like") return make_y_like_track();
  if (name == "circle") return make_circle_track(5.0, 300, 1.0, 1.0);
  if (name == "stadium") return make_stadium_track(10.0, 3.0, 0.1, 1.0);
  throw std::invalid_argument("unknown track layout '" + name + "'");
}

}  // namespace racelab
