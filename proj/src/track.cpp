#include "racelab/track.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

namespace racelab {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kWindow = 2.0;

Vec2 left_normal(double heading) { return {-std::sin(heading), std::cos(heading)}; }

double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }

double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  return out;
}

double parse_number(const std::string& field, const std::filesystem::path& path, int line_no) {
  if (field.empty()) {
    throw TrackParseError(path.string() + ":" + std::to_string(line_no) + ": empty field");
  }
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (end != field.c_str() + field.size() || !std::isfinite(v)) {
    throw TrackParseError(path.string() + ":" + std::to_string(line_no) + ": malformed number '" +
                          field + "'");
  }
  return v;
}

}  // namespace

double wrap_angle(double a) {
  if (a > -kPi && a <= kPi) return a;
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a <= 0.0) a += 2.0 * kPi;
  return a - kPi;
}

Track::Track(std::vector<TrackPoint> points, std::string name)
    : name_(std::move(name)), points_(std::move(points)) {
  const std::size_t n = points_.size();
  if (n < 4) throw TrackGeometryError("track needs at least 4 points, got " + std::to_string(n));

  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = points_[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw TrackGeometryError("non-finite coordinate at point " + std::to_string(i));
    }
    if (!(p.w_left > 0.0) || !(p.w_right > 0.0)) {
      throw TrackGeometryError("non-positive width at point " + std::to_string(i));
    }
  }

  segment_length_.resize(n);
  std::vector<double> seg_heading(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = points_[i];
    const auto& b = points_[(i + 1) % n];
    segment_length_[i] = std::hypot(b.x - a.x, b.y - a.y);
    if (!(segment_length_[i] > 1e-9)) {
      throw TrackGeometryError("arc length not strictly increasing at point " +
                               std::to_string((i + 1) % n) + " (duplicate point)");
    }
    seg_heading[i] = std::atan2(b.y - a.y, b.x - a.x);
  }
  const double longest_open =
      *std::max_element(segment_length_.begin(), segment_length_.end() - 1);
  if (segment_length_.back() > longest_open + 0.01) {
    throw TrackGeometryError("loop not closed: closing gap " +
                             std::to_string(segment_length_.back()) +
                             " m exceeds the longest segment");
  }

  arc_length_.resize(n);
  arc_length_[0] = 0.0;
  for (std::size_t i = 1; i < n; ++i) arc_length_[i] = arc_length_[i - 1] + segment_length_[i - 1];
  total_length_ = arc_length_.back() + segment_length_.back();

  heading_.resize(n);
  curvature_.resize(n);
  double turning = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t prev = (i + n - 1) % n;
    const auto& a = points_[prev];
    const auto& b = points_[(i + 1) % n];
    heading_[i] = std::atan2(b.y - a.y, b.x - a.x);
    const double dtheta = wrap_angle(seg_heading[i] - seg_heading[prev]);
    curvature_[i] = dtheta / (0.5 * (segment_length_[prev] + segment_length_[i]));
    turning += dtheta;
  }
  if (std::abs(std::abs(turning) - 2.0 * kPi) > 0.02 * kPi) {
    throw TrackGeometryError("reference line is not a simple closed curve (total turning " +
                             std::to_string(turning) + " rad)");
  }

  w_left_.resize(n);
  w_right_.resize(n);
  left_boundary_.resize(n);
  right_boundary_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = points_[i];
    w_left_[i] = p.w_left;
    w_right_[i] = p.w_right;
    const Vec2 nrm = left_normal(heading_[i]);
    left_boundary_[i] = {p.x + p.w_left * nrm.x, p.y + p.w_left * nrm.y};
    right_boundary_[i] = {p.x - p.w_right * nrm.x, p.y - p.w_right * nrm.y};
    max_width_ = std::max(max_width_, p.w_left + p.w_right);
  }
}

double Track::wrap_s(double s) const {
  double w = std::fmod(s, total_length_);
  if (w < 0.0) w += total_length_;
  if (w >= total_length_) w = 0.0;
  return w;
}

Track::Locator Track::locate(double s) const {
  const double w = wrap_s(s);
  auto it = std::upper_bound(arc_length_.begin(), arc_length_.end(), w);
  const std::size_t seg = static_cast<std::size_t>(std::distance(arc_length_.begin(), it)) - 1;
  const double t = (w - arc_length_[seg]) / segment_length_[seg];
  return {seg, std::clamp(t, 0.0, 1.0)};
}

double Track::interpolate(std::span<const double> values, double s) const {
  const auto [seg, t] = locate(s);
  const double a = values[seg];
  const double b = values[(seg + 1) % values.size()];
  return a + t * (b - a);
}

double Track::curvature_at(double s) const { return interpolate(curvature_, s); }
double Track::w_left_at(double s) const { return interpolate(w_left_, s); }
double Track::w_right_at(double s) const { return interpolate(w_right_, s); }

double Track::heading_at(double s) const {
  const auto [seg, t] = locate(s);
  const double a = heading_[seg];
  const double b = heading_[(seg + 1) % heading_.size()];
  return a + t * wrap_angle(b - a);
}

Vec2 Track::position_at(double s) const {
  const auto [seg, t] = locate(s);
  const auto& a = points_[seg];
  const auto& b = points_[(seg + 1) % points_.size()];
  return {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
}

void Track::set_velocity_profile(std::vector<double> v) {
  if (v.size() != points_.size()) {
    throw std::invalid_argument("velocity profile size does not match track points");
  }
  velocity_profile_ = std::move(v);
}

double Track::velocity_at(double s) const {
  if (velocity_profile_.empty()) throw std::logic_error("track has no velocity profile");
  return interpolate(velocity_profile_, s);
}

Track load_track(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TrackParseError("cannot open track file " + path.string());

  std::string line;
  int line_no = 0;
  bool header_seen = false;
  std::vector<TrackPoint> points;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (!header_seen) {
      if (t != "x_m,y_m,w_left_m,w_right_m") {
        throw TrackParseError(path.string() + ":" + std::to_string(line_no) +
                              ": expected header x_m,y_m,w_left_m,w_right_m");
      }
      header_seen = true;
      continue;
    }
    const auto fields = split_csv(t);
    if (fields.size() != 4) {
      throw TrackParseError(path.string() + ":" + std::to_string(line_no) + ": expected 4 fields, got " +
                            std::to_string(fields.size()));
    }
    points.push_back({parse_number(fields[0], path, line_no), parse_number(fields[1], path, line_no),
                      parse_number(fields[2], path, line_no), parse_number(fields[3], path, line_no)});
  }
  if (!header_seen) throw TrackParseError(path.string() + ": empty track file");

  Track track(std::move(points), path.stem().string());
  if (track.size() < 10) {
    throw TrackGeometryError(path.string() + ": at least 10 rows required, got " +
                             std::to_string(track.size()));
  }

  const auto raceline = path.parent_path() / (path.stem().string() + "_raceline.csv");
  if (std::filesystem::exists(raceline)) track.set_velocity_profile(load_raceline(track, raceline));
  return track;
}

void save_track_csv(const Track& track, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "x_m,y_m,w_left_m,w_right_m\n" << std::setprecision(17);
  for (const auto& p : track.points()) {
    out << p.x << ',' << p.y << ',' << p.w_left << ',' << p.w_right << '\n';
  }
}

std::vector<double> load_raceline(const Track& track, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TrackParseError("cannot open raceline file " + path.string());
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  std::vector<std::pair<double, double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (!header_seen) {
      if (t != "s_m,v_mps") {
        throw TrackParseError(path.string() + ":" + std::to_string(line_no) +
                              ": expected header s_m,v_mps");
      }
      header_seen = true;
      continue;
    }
    const auto fields = split_csv(t);
    if (fields.size() != 2) {
      throw TrackParseError(path.string() + ":" + std::to_string(line_no) + ": expected 2 fields");
    }
    rows.emplace_back(track.wrap_s(parse_number(fields[0], path, line_no)),
                      parse_number(fields[1], path, line_no));
  }
  if (rows.empty()) throw TrackParseError(path.string() + ": no raceline rows");
  std::sort(rows.begin(), rows.end());

  const double L = track.total_length();
  std::vector<double> v(track.size());
  for (std::size_t i = 0; i < track.size(); ++i) {
    const double s = track.arc_length()[i];
    auto hi = std::lower_bound(rows.begin(), rows.end(), std::make_pair(s, -1e300));
    const auto& b = hi == rows.end() ? rows.front() : *hi;
    const auto& a = hi == rows.begin() ? rows.back() : *(hi - 1);
    double sa = a.first;
    double sb = b.first;
    if (sb < s) sb += L;
    if (sa > s) sa -= L;
    const double span = sb - sa;
    v[i] = span > 1e-12 ? a.second + (s - sa) / span * (b.second - a.second) : a.second;
  }
  return v;
}

GlobalPose frenet_to_global(const Track& track, const FrenetPose& pose) {
  const Vec2 p = track.position_at(pose.s);
  const double h = track.heading_at(pose.s);
  const Vec2 nrm = left_normal(h);
  return {p.x + pose.n * nrm.x, p.y + pose.n * nrm.y, wrap_angle(h + pose.mu)};
}

FrenetPose global_to_frenet(const Track& track, double x, double y, double heading,
                            std::optional<double> hint_s) {
  const auto pts = track.points();
  const auto arc = track.arc_length();
  const std::size_t n = track.size();
  const Vec2 q{x, y};
  const double margin = 2.0 * track.max_width();

  // Signed tangential residual of q against the foot point at parameter t.
  auto residual = [&](std::size_t seg, double t, double& n_out, double& h_out) {
    const auto& a = pts[seg];
    const auto& b = pts[(seg + 1) % n];
    const Vec2 p{a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
    const double ha = track.vertex_heading()[seg];
    const double hb = track.vertex_heading()[(seg + 1) % n];
    const double h = ha + t * wrap_angle(hb - ha);
    const Vec2 d{q.x - p.x, q.y - p.y};
    n_out = dot(d, left_normal(h));
    h_out = h;
    return dot(d, Vec2{std::cos(h), std::sin(h)});
  };

  struct Best {
    bool found{false};
    double s{};
    double n{std::numeric_limits<double>::infinity()};
    double h{};
  };

  auto search = [&](std::size_t first, std::size_t count) {
    Best best;
    double n0 = 0.0;
    double h0 = 0.0;
    double f0 = residual(first, 0.0, n0, h0);
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t seg = (first + k) % n;
      double n1 = 0.0;
      double h1 = 0.0;
      const double f1 = residual(seg, 1.0, n1, h1);
      if (f0 == 0.0 || (f0 > 0.0) != (f1 > 0.0)) {
        double lo = 0.0;
        double hi = 1.0;
        double flo = f0;
        double t = 0.0;
        double nn = n0;
        double hh = h0;
        if (f0 != 0.0) {
          for (int it = 0; it < 60; ++it) {
            t = 0.5 * (lo + hi);
            const double fm = residual(seg, t, nn, hh);
            if (fm == 0.0) break;
            if ((fm > 0.0) == (flo > 0.0)) {
              lo = t;
              flo = fm;
            } else {
              hi = t;
            }
          }
          t = 0.5 * (lo + hi);
          residual(seg, t, nn, hh);
        }
        if (std::abs(nn) < std::abs(best.n)) {
          best.found = true;
          best.n = nn;
          best.h = hh;
          best.s = arc[seg] + t * track.segment_length(seg);
        }
      }
      f0 = f1;
      n0 = n1;
      h0 = h1;
    }
    return best;
  };

  Best best;
  if (hint_s) {
    const double lo_s = track.wrap_s(*hint_s - kWindow);
    auto it = std::upper_bound(arc.begin(), arc.end(), lo_s);
    const std::size_t first = static_cast<std::size_t>(std::distance(arc.begin(), it)) - 1;
    std::size_t count = 0;
    double covered = 0.0;
    while (count < n && covered < 2.0 * kWindow + (lo_s - arc[first])) {
      covered += track.segment_length((first + count) % n);
      ++count;
    }
    best = search(first, count + 1 <= n ? count + 1 : n);
  }
  if (!best.found || std::abs(best.n) > margin) best = search(0, n);
  if (!best.found || std::abs(best.n) > margin) {
    throw ProjectionError("point (" + std::to_string(x) + ", " + std::to_string(y) +
                          ") is beyond the search margin of the reference line");
  }
  return {track.wrap_s(best.s), best.n, wrap_angle(heading - best.h)};
}

bool boundary_violation(const Track& track, const FrenetPose& pose) {
  return pose.n > track.w_left_at(pose.s) || pose.n < -track.w_right_at(pose.s);
}

double progress_delta(const Track& track, double s_prev, double s_now) {
  const double L = track.total_length();
  double d = std::fmod(s_now - s_prev, L);
  if (d > 0.5 * L) d -= L;
  if (d < -0.5 * L) d += L;
  return d;
}

double cast_ray(std::span<const Vec2> polyline, bool closed, Vec2 origin, double angle,
                double max_range) {
  const Vec2 dir{std::cos(angle), std::sin(angle)};
  double best = max_range;
  const std::size_t n = polyline.size();
  const std::size_t segs = closed ? n : n - 1;
  for (std::size_t i = 0; i < segs; ++i) {
    const Vec2 a = polyline[i];
    const Vec2 b = polyline[(i + 1) % n];
    const Vec2 e{b.x - a.x, b.y - a.y};
    const double denom = cross(dir, e);
    if (std::abs(denom) < 1e-15) continue;
    const Vec2 ao{a.x - origin.x, a.y - origin.y};
    const double t = cross(ao, e) / denom;
    const double u = cross(ao, dir) / denom;
    if (t >= 0.0 && u >= 0.0 && u <= 1.0 && t < best) best = t;
  }
  return best;
}

std::vector<double> cast_rays(const Track& track, double x, double y, double heading, double fov,
                              int n_rays, double max_range) {
  if (n_rays < 3) throw std::invalid_argument("cast_rays needs at least 3 rays");
  std::vector<double> ranges(static_cast<std::size_t>(n_rays));
  const Vec2 origin{x, y};
  for (int k = 0; k < n_rays; ++k) {
    const double angle = heading - 0.5 * fov + fov * k / (n_rays - 1);
    const double l = cast_ray(track.left_boundary(), true, origin, angle, max_range);
    const double r = cast_ray(track.right_boundary(), true, origin, angle, max_range);
    ranges[static_cast<std::size_t>(k)] = std::min(l, r);
  }
  return ranges;
}

std::vector<double> generate_velocity_profile(const Track& track,
                                              const VelocityProfileParams& params) {
  if (!(params.mu_friction > 0.0)) throw std::invalid_argument("mu_friction must be positive");
  const std::size_t n = track.size();
  const auto kappa = track.curvature();
  std::vector<double> ds(n);
  for (std::size_t i = 0; i < n; ++i) ds[i] = track.segment_length(i);

  std::vector<double> v2(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double k = std::max(std::abs(kappa[i]), params.kappa_min);
    const double v = std::min(params.v_cap, std::sqrt(params.mu_friction * params.g / k));
    v2[i] = v * v;
  }

  // Forward (acceleration) and backward (braking) sweeps around the loop until
  // neither changes anything.
  const double two_a = 2.0 * params.a_max;
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = (i + 1) % n;
      const double limit = v2[i] + two_a * ds[i];
      if (v2[j] > limit) {
        v2[j] = limit;
        changed = true;
      }
    }
    for (std::size_t k = n; k-- > 0;) {
      const std::size_t j = (k + 1) % n;
      const double limit = v2[j] + two_a * ds[k];
      if (v2[k] > limit) {
        v2[k] = limit;
        changed = true;
      }
    }
  }

  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = std::sqrt(v2[i]);
  return v;
}

}  // namespace racelab
