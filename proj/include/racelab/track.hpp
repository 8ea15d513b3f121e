#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace racelab {

class TrackParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrackGeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ProjectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Vec2 {
  double x{};
  double y{};
};

struct TrackPoint {
  double x{};
  double y{};
  double w_left{};
  double w_right{};
};

// Curvilinear pose. n and curvature are left-positive throughout.
struct FrenetPose {
  double s{};
  double n{};
  double mu{};
};

struct GlobalPose {
  double x{};
  double y{};
  double heading{};
};

// Closed piecewise-linear reference line. Vertex headings are central
// differences of the adjacent segments and are linearly interpolated along
// each segment, so the (s, n) -> (x, y) map is continuous and invertible
// within the curvature radius.
class Track {
 public:
  explicit Track(std::vector<TrackPoint> points, std::string name = "track");

  const std::string& name() const { return name_; }
  std::size_t size() const { return points_.size(); }
  std::span<const TrackPoint> points() const { return points_; }
  std::span<const double> arc_length() const { return arc_length_; }
  double segment_length(std::size_t i) const { return segment_length_[i]; }
  std::span<const double> curvature() const { return curvature_; }
  std::span<const double> vertex_heading() const { return heading_; }
  double total_length() const { return total_length_; }

  double wrap_s(double s) const;
  double curvature_at(double s) const;
  double w_left_at(double s) const;
  double w_right_at(double s) const;
  double heading_at(double s) const;
  Vec2 position_at(double s) const;

  const std::vector<double>& velocity_profile() const { return velocity_profile_; }
  bool has_velocity_profile() const { return !velocity_profile_.empty(); }
  void set_velocity_profile(std::vector<double> v);
  double velocity_at(double s) const;

  // Boundary polylines (one vertex per reference point, closed).
  const std::vector<Vec2>& left_boundary() const { return left_boundary_; }
  const std::vector<Vec2>& right_boundary() const { return right_boundary_; }

  // Largest w_left + w_right on the track.
  double max_width() const { return max_width_; }

 private:
  struct Locator {
    std::size_t segment;
    double t;
  };
  Locator locate(double s) const;
  double interpolate(std::span<const double> values, double s) const;

  std::string name_;
  std::vector<TrackPoint> points_;
  std::vector<double> arc_length_;
  std::vector<double> segment_length_;
  std::vector<double> curvature_;
  std::vector<double> heading_;
  std::vector<double> w_left_;
  std::vector<double> w_right_;
  std::vector<double> velocity_profile_;
  std::vector<Vec2> left_boundary_;
  std::vector<Vec2> right_boundary_;
  double total_length_{};
  double max_width_{};
};

double wrap_angle(double a);

Track load_track(const std::filesystem::path& path);
void save_track_csv(const Track& track, const std::filesystem::path& path);

// Reads `s_m,v_mps` rows and resamples them onto the track points.
std::vector<double> load_raceline(const Track& track, const std::filesystem::path& path);

// Local search in a +-window around hint_s, with global fallback when no
// foot point is found there. Throws ProjectionError when the point is beyond
// the search margin of every segment.
FrenetPose global_to_frenet(const Track& track, double x, double y, double heading,
                            std::optional<double> hint_s = std::nullopt);

GlobalPose frenet_to_global(const Track& track, const FrenetPose& pose);

bool boundary_violation(const Track& track, const FrenetPose& pose);

// Shortest signed wrapped difference s_now - s_prev.
double progress_delta(const Track& track, double s_prev, double s_now);

std::vector<double> cast_rays(const Track& track, double x, double y, double heading,
                              double fov, int n_rays, double max_range);

// Single ray against an explicit segment soup; exposed for oracle tests.
double cast_ray(std::span<const Vec2> polyline, bool closed, Vec2 origin, double angle,
                double max_range);

struct VelocityProfileParams {
  double mu_friction{1.0};
  double g{9.81};
  double a_max{3.0};
  double v_cap{10.0};
  double kappa_min{1e-4};
};

std::vector<double> generate_velocity_profile(const Track& track,
                                              const VelocityProfileParams& params);

}  // namespace racelab
