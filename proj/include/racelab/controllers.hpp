#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "racelab/track.hpp"
#include "racelab/vehicle.hpp"

namespace racelab {

// Output ranges shared by every base controller.
inline constexpr double kBaseDeltaMax = 0.42;
inline constexpr double kBaseSpeedMax = 10.0;

struct PurePursuitConfig {
  double lookahead_base{0.5};
  double lookahead_gain{0.2};  // [s]
  double lookahead_min{0.5};
  double lookahead_max{3.0};
  double wheelbase{0.32};
};

double pursuit_lookahead(const PurePursuitConfig& cfg, double v_x);

struct PursuitGeometry {
  double eta{};        // bearing of the lookahead point in the body frame
  double lookahead{};  // arc distance used [m]
  double s_target{};
};

PursuitGeometry pursuit_geometry(const VehicleState& state, const Track& track,
                                 const PurePursuitConfig& cfg);

ControlInput pure_pursuit(const VehicleState& state, const Track& track, const PurePursuitConfig& cfg);

struct MapGridSpec {
  double v_min{0.5};
  double v_max{10.0};
  double v_step{0.25};
  double kappa_max{1.5};
  double kappa_step{0.01};

  int v_count() const;
  int kappa_count() const;
};

// (v_x, target curvature) -> steering, from the plant's steady-state cornering
// solution. Saturated cells hold the steering of the feasible boundary.
class MapLookupTable {
 public:
  MapLookupTable(MapGridSpec spec, std::vector<double> delta, std::vector<char> saturated);

  // No-slip table: delta = atan(wheelbase * kappa).
  static MapLookupTable kinematic(double wheelbase, MapGridSpec spec = {});

  const MapGridSpec& spec() const { return spec_; }
  double v_at(int i) const { return spec_.v_min + i * spec_.v_step; }
  double kappa_at(int j) const { return (j - spec_.kappa_count() / 2) * spec_.kappa_step; }
  double delta(int i, int j) const { return delta_[index(i, j)]; }
  bool saturated(int i, int j) const { return saturated_[index(i, j)] != 0; }

  // Bilinear interpolation; queries outside the grid are clamped to its edge.
  double lookup(double v, double kappa) const;

  void save_csv(const std::filesystem::path& path) const;
  static MapLookupTable load_csv(const std::filesystem::path& path);

 private:
  std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(spec_.kappa_count()) +
           static_cast<std::size_t>(j);
  }

  MapGridSpec spec_;
  std::vector<double> delta_;
  std::vector<char> saturated_;
};

struct SteadyStateCorner {
  bool feasible{false};
  double delta{};
  double v_y{};
  double r{};
};

// Steady cornering on constant curvature at longitudinal speed v_x.
SteadyStateCorner solve_steady_state(const VehicleParams& params, double v_x, double kappa);

MapLookupTable build_map_table(const VehicleParams& params, const MapGridSpec& spec = {});

ControlInput map_controller(const VehicleState& state, const Track& track, const MapLookupTable& table,
                            const PurePursuitConfig& cfg);

struct FtgConfig {
  int n_rays{61};
  double fov{3.141592653589793};
  double max_range{10.0};
  double bubble_radius{0.3};
  double range_threshold{1.0};
  // v = clamp(speed_offset + speed_gain * clearance, speed_min, speed_max)
  double speed_offset{1.0};
  double speed_gain{0.8};
  double speed_min{1.0};
  double speed_max{6.0};
};

struct GapChoice {
  bool gap_found{false};
  int gap_begin{-1};  // inclusive
  int gap_end{-1};    // exclusive
  int best{-1};
  int bubble_begin{-1};
  int bubble_end{-1};
};

double ftg_ray_angle(const FtgConfig& cfg, int k);
GapChoice ftg_select(std::span<const double> ranges, const FtgConfig& cfg);
ControlInput follow_the_gap(std::span<const double> ranges, const FtgConfig& cfg, double v_x);

enum class ControllerKind { pp, map, ftg, none };

ControllerKind parse_controller_kind(const std::string& name);
std::string to_string(ControllerKind kind);

// Type-erased base controller evaluated on the plant state.
class BaseController {
 public:
  static BaseController make_pure_pursuit(PurePursuitConfig cfg);
  static BaseController make_map(PurePursuitConfig cfg, std::shared_ptr<const MapLookupTable> table);
  static BaseController make_ftg(FtgConfig cfg);

  ControllerKind kind() const;
  ControlInput command(const VehicleState& state, const Track& track) const;

 private:
  struct Map {
    PurePursuitConfig pursuit;
    std::shared_ptr<const MapLookupTable> table;
  };
  explicit BaseController(std::variant<PurePursuitConfig, Map, FtgConfig> impl) : impl_(std::move(impl)) {}

  std::variant<PurePursuitConfig, Map, FtgConfig> impl_;
};

}  // namespace racelab
