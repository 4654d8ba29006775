#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "splatslam/dataset.hpp"
#include "splatslam/motion_mask.hpp"
#include "splatslam/synthetic.hpp"

using namespace splat;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small, fast scene for I/O tests.
SyntheticConfig tiny_config() {
  SyntheticConfig cfg;
  cfg.n_frames = 3;
  cfg.room_gaussians = 600;
  cfg.intrinsics.fx = 80;
  cfg.intrinsics.fy = 80;
  cfg.intrinsics.cx = 39.5;
  cfg.intrinsics.cy = 29.5;
  cfg.intrinsics.width = 80;
  cfg.intrinsics.height = 60;
  return cfg;
}

}  // namespace

TEST_CASE("identity pose serializes to the canonical line") {
  const fs::path dir = fresh_dir("splat_traj");
  write_trajectory((dir / "t.txt").string(), {{0.0, Pose::Identity()}});
  std::ifstream in(dir / "t.txt");
  std::string line;
  std::getline(in, line);
  CHECK(line == "0.000000 0 0 0 0 0 0 1");
}

TEST_CASE("trajectory round trip preserves 1000 random poses") {
  const fs::path dir = fresh_dir("splat_traj_rt");
  std::mt19937 rng(83);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<TrajectoryEntry> traj;
  for (int i = 0; i < 1000; ++i) {
    Tangent6 d;
    for (int k = 0; k < 6; ++k) d[k] = u(rng);
    traj.push_back({i * 0.1, exp_se3(d)});
  }
  const std::string path = (dir / "t.txt").string();
  write_trajectory(path, traj);
  const auto back = read_trajectory(path);
  REQUIRE(back.size() == traj.size());
  for (size_t i = 0; i < traj.size(); ++i) {
    CHECK(back[i].timestamp == doctest::Approx(traj[i].timestamp));
    CHECK((back[i].pose.t - traj[i].pose.t).norm() < 1e-9);
    CHECK(back[i].pose.q.angularDistance(traj[i].pose.q) < 1e-9);
  }
}

TEST_CASE("malformed trajectory line reports its line number") {
  const fs::path dir = fresh_dir("splat_traj_bad");
  {
    std::ofstream out(dir / "t.txt");
    out << "# comment\n0 0 0 0 0 0 0 1\n1.0 0.1 0.2 0.3 0 0 0\n";
  }
  try {
    read_trajectory((dir / "t.txt").string());
    FAIL("expected parse error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find(":3") != std::string::npos);
  }
}

TEST_CASE("loader errors on a missing index file") {
  const fs::path dir = fresh_dir("splat_ds_missing");
  CHECK_THROWS_AS(load_tum_sequence(dir.string()), std::runtime_error);
}

TEST_CASE("zero association tolerance on offset timestamps is an error") {
  const fs::path dir = fresh_dir("splat_ds_tol");
  const SyntheticScene scene = generate_synthetic(tiny_config());
  save_tum_sequence(dir.string(), scene.frames, scene.trajectory);
  // Shift every depth timestamp so nothing associates at tolerance 0.
  std::ifstream in(dir / "depth.txt");
  std::ostringstream rewritten;
  double t;
  std::string file;
  while (in >> t >> file) rewritten << t + 0.005 << ' ' << file << '\n';
  in.close();
  std::ofstream(dir / "depth.txt") << rewritten.str();
  LoadConfig cfg;
  cfg.assoc_tolerance = 0.0;
  CHECK_THROWS_AS(load_tum_sequence(dir.string(), cfg), std::runtime_error);
  cfg.assoc_tolerance = 0.02;
  CHECK(load_tum_sequence(dir.string(), cfg).frames.size() == 3);
}

TEST_CASE("depth raw values scale to meters") {
  const fs::path dir = fresh_dir("splat_ds_scale");
  SyntheticConfig sc = tiny_config();
  SyntheticScene scene = generate_synthetic(sc);
  scene.frames[0].depth.at(5, 5) = 2.0;  // raw 10000 at scale 5000
  save_tum_sequence(dir.string(), scene.frames, scene.trajectory);
  const Sequence seq = load_tum_sequence(dir.string());
  CHECK(seq.frames[0].depth.at(5, 5) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("exported sequence loads and re-exports byte-identically") {
  const fs::path a = fresh_dir("splat_ds_a"), b = fresh_dir("splat_ds_b");
  SyntheticConfig sc = tiny_config();
  SyntheticScene scene = generate_synthetic(sc);
  // Attach a semantic mask to exercise the masks/ path.
  scene.frames[1].semantic_mask = scene.dynamic_footprints[1];
  scene.frames[1].semantic_mask->source = MaskSource::Semantic;
  save_tum_sequence(a.string(), scene.frames, scene.trajectory);
  const Sequence seq = load_tum_sequence(a.string());
  REQUIRE(seq.frames.size() == scene.frames.size());
  CHECK(seq.frames[1].semantic_mask.has_value());
  save_tum_sequence(b.string(), seq.frames, seq.groundtruth);
  int compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), a);
    CHECK(slurp(entry.path()) == slurp(b / rel));
    ++compared;
  }
  CHECK(compared >= 8);  // indices, calib, groundtruth, images
}

TEST_CASE("loader yields only dimension-consistent frames") {
  const fs::path dir = fresh_dir("splat_ds_dims");
  const SyntheticScene scene = generate_synthetic(tiny_config());
  save_tum_sequence(dir.string(), scene.frames, scene.trajectory);
  const Sequence seq = load_tum_sequence(dir.string());
  for (const Frame& f : seq.frames) CHECK(f.dims_ok());
  CHECK(seq.groundtruth.size() == scene.trajectory.size());
}

TEST_CASE("synthetic generation is deterministic for a fixed seed") {
  SyntheticConfig cfg = tiny_config();
  cfg.depth_noise_sigma = 0.01;
  cfg.rgb_noise_sigma = 0.01;
  const SyntheticScene a = generate_synthetic(cfg);
  const SyntheticScene b = generate_synthetic(cfg);
  REQUIRE(a.frames.size() == b.frames.size());
  for (size_t k = 0; k < a.frames.size(); ++k) {
    CHECK(a.frames[k].rgb.data == b.frames[k].rgb.data);
    CHECK(a.frames[k].depth.data == b.frames[k].depth.data);
    CHECK(a.dynamic_footprints[k].data == b.dynamic_footprints[k].data);
  }
  cfg.seed = 2;
  const SyntheticScene c = generate_synthetic(cfg);
  CHECK(a.frames[0].rgb.data != c.frames[0].rgb.data);
}

TEST_CASE("sphere footprint diameter follows pinhole geometry") {
  Intrinsics K;
  K.fx = 300;
  K.fy = 300;
  K.cx = 159.5;
  K.cy = 119.5;
  K.width = 320;
  K.height = 240;
  const MaskImage fp =
      sphere_footprint_mask(Vec3(0, 0, 1.5), 0.2, Pose::Identity(), K, nullptr);
  int min_x = K.width, max_x = -1;
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x)
      if (fp.at(x, y) == 0) {
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
      }
  const int diameter = max_x - min_x + 1;
  CHECK(diameter >= 78);
  CHECK(diameter <= 83);
}

TEST_CASE("zero noise and zero object motion warp consistently") {
  SyntheticConfig cfg = tiny_config();
  cfg.n_frames = 4;
  cfg.sphere_step = Vec3::Zero();
  const SyntheticScene scene = generate_synthetic(cfg);
  WarpConfig wc;  // e_th = 0.6
  for (size_t i = 0; i + 1 < scene.frames.size(); ++i) {
    const Pose T_ji = scene.trajectory[i + 1].pose.inverse() *
                      scene.trajectory[i].pose;
    const MaskImage m =
        warp_mask_pair(scene.frames[i].depth, scene.frames[i + 1].depth, T_ji,
                       cfg.intrinsics, wc);
    CHECK(m.count_static() == m.data.size());
  }
}

TEST_CASE("degenerate trajectory is rejected") {
  SyntheticConfig cfg = tiny_config();
  cfg.cam_motion = 0.0;
  CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
}
