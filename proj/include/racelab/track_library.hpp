#pragma once

#include <string>

#include "racelab/track.hpp"

namespace racelab {

// Analytic and synthetic layouts used by tests and the bundled data files.
Track make_circle_track(double radius, int n_points, double w_left, double w_right);

// Two straights joined by half circles; starts at the middle of the lower
// straight heading +x.
Track make_stadium_track(double straight_length, double radius, double spacing, double width);

// ~41 m closed loop with a concave pocket (C-shaped), 0.1 m spacing.
Track make_c_like_track(double width = 0.7);

// ~34 m three-lobed loop, 0.1 m spacing.
Track make_y_like_track(double width = 0.7);

// "c-like" / "y-like" / "circle" / "stadium".
Track make_named_track(const std::string& name);

}  // namespace racelab
