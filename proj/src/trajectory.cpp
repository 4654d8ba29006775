#include "splatslam/trajectory.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace splat {

std::vector<TrajectoryEntry> read_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trajectory file: " + path);
  std::vector<TrajectoryEntry> traj;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    TrajectoryEntry e;
    double qx, qy, qz, qw;
    if (!(ss >> e.timestamp >> e.pose.t.x() >> e.pose.t.y() >> e.pose.t.z() >>
          qx >> qy >> qz >> qw))
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": malformed trajectory line");
    std::string extra;
    if (ss >> extra)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": trailing fields on trajectory line");
    e.pose.q = Eigen::Quaterniond(qw, qx, qy, qz);
    if (e.pose.q.norm() < 1e-9)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": zero quaternion");
    e.pose.normalize();
    traj.push_back(e);
  }
  return traj;
}

void write_trajectory(const std::string& path,
                      const std::vector<TrajectoryEntry>& traj) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trajectory file: " + path);
  char buf[256];
  for (const TrajectoryEntry& e : traj) {
    std::snprintf(buf, sizeof(buf),
                  "%.6f %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n",
                  e.timestamp,
                  e.pose.t.x(), e.pose.t.y(), e.pose.t.z(), e.pose.q.x(),
                  e.pose.q.y(), e.pose.q.z(), e.pose.q.w());
    out << buf;
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace splat
