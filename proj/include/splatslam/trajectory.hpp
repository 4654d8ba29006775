#pragma once

#include <string>
#include <vector>

#include "splatslam/geometry.hpp"

namespace splat {

struct TrajectoryEntry {
  double timestamp = 0.0;
  Pose pose;  // T_wc
};

// TUM trajectory format: "timestamp tx ty tz qx qy qz qw" per line, '#'
// comments skipped. Throws std::runtime_error naming the line on malformed
// input. write followed by read reproduces poses to 9 significant digits.
std::vector<TrajectoryEntry> read_trajectory(const std::string& path);
void write_trajectory(const std::string& path,
                      const std::vector<TrajectoryEntry>& traj);

}  // namespace splat
