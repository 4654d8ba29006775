#pragma once

#include <string>
#include <vector>

#include "splatslam/gaussian_map.hpp"
#include "splatslam/trajectory.hpp"

namespace splat {

struct AteReport {
  double rmse = 0;  // meters
  double stddev = 0;
  std::vector<double> errors;  // per associated frame
  Pose alignment;              // applied to the estimate
};

struct ReconReport {
  double accuracy_cm = 0;
  double completion_cm = 0;
  double completion_ratio_pct = 0;  // % of GT points within threshold
  size_t n_recon = 0, n_gt = 0;
};

// Closed-form rigid alignment (rotation + translation, no scale) of the
// estimated trajectory's translations onto the ground truth, associating
// entries by nearest timestamp within `tolerance`. Throws
// std::runtime_error with fewer than 3 associated pairs.
Pose horn_align(const std::vector<TrajectoryEntry>& est,
                const std::vector<TrajectoryEntry>& gt,
                double tolerance = 0.02);

AteReport ate(const std::vector<TrajectoryEntry>& est,
              const std::vector<TrajectoryEntry>& gt,
              double tolerance = 0.02);

// accuracy = mean NN distance recon->gt, completion = gt->recon, ratio = %
// of GT points with NN distance <= threshold. Sets larger than n_samples
// are subsampled without replacement (deterministic for a given seed).
ReconReport recon_metrics(const std::vector<Vec3>& recon,
                          const std::vector<Vec3>& gt,
                          double threshold = 0.05, size_t n_samples = 200000,
                          unsigned seed = 0);

// Reconstructed surface proxy: centers of gaussians with opacity > cutoff.
std::vector<Vec3> map_points(const GaussianMap& map, double cutoff = 0.5);

std::string format_report(const AteReport& a);
std::string format_report(const ReconReport& r);

}  // namespace splat
