#include "splatslam/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace splat {

namespace {

struct IndexEntry {
  double timestamp;
  std::string file;
};

std::vector<IndexEntry> read_index(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing index file: " + path);
  std::vector<IndexEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    const size_t first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    IndexEntry e;
    if (!(ss >> e.timestamp >> e.file))
      throw std::runtime_error("malformed index line in " + path);
    entries.push_back(e);
  }
  std::sort(entries.begin(), entries.end(),
            [](const IndexEntry& a, const IndexEntry& b) {
              return a.timestamp < b.timestamp;
            });
  return entries;
}

// Nearest entry by timestamp (index is sorted).
int nearest_entry(const std::vector<IndexEntry>& v, double t) {
  const auto it = std::lower_bound(
      v.begin(), v.end(), t,
      [](const IndexEntry& e, double ts) { return e.timestamp < ts; });
  int best = -1;
  double best_dt = std::numeric_limits<double>::infinity();
  for (const auto* cand : {it == v.end() ? nullptr : &*it,
                           it == v.begin() ? nullptr : &*(it - 1)}) {
    if (!cand) continue;
    const double dt = std::abs(cand->timestamp - t);
    if (dt < best_dt) {
      best_dt = dt;
      best = static_cast<int>(cand - v.data());
    }
  }
  return best;
}

bool load_rgb(const std::string& path, ColorImage& out) {
  const cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);
  if (img.empty()) return false;
  out = ColorImage(img.cols, img.rows);
  for (int y = 0; y < img.rows; ++y) {
    const cv::Vec3b* row = img.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.cols; ++x)
      out.set_pixel(x, y,
                    Vec3(row[x][2], row[x][1], row[x][0]) / 255.0);  // BGR
  }
  return true;
}

bool load_depth(const std::string& path, double depth_scale, GrayImage& out) {
  const cv::Mat img = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (img.empty() || img.type() != CV_16UC1) return false;
  out = GrayImage(img.cols, img.rows);
  for (int y = 0; y < img.rows; ++y) {
    const uint16_t* row = img.ptr<uint16_t>(y);
    for (int x = 0; x < img.cols; ++x) out.at(x, y) = row[x] / depth_scale;
  }
  return true;
}

bool load_mask(const std::string& path, MaskImage& out) {
  const cv::Mat img = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (img.empty()) return false;
  out = MaskImage(img.cols, img.rows, 1, MaskSource::Semantic);
  for (int y = 0; y < img.rows; ++y) {
    const uint8_t* row = img.ptr<uint8_t>(y);
    for (int x = 0; x < img.cols; ++x)
      out.at(x, y) = row[x] == 0 ? 1 : 0;  // nonzero file pixel = dynamic
  }
  return true;
}

Intrinsics read_calib(const std::string& dir, const Intrinsics& fallback) {
  std::ifstream in(dir + "/calib.txt");
  if (!in) return fallback;
  Intrinsics K = fallback;
  if (!(in >> K.fx >> K.fy >> K.cx >> K.cy))
    throw std::runtime_error("malformed calib.txt in " + dir);
  double scale;
  if (in >> scale) K.depth_scale = scale;
  return K;
}

}  // namespace

Sequence load_tum_sequence(const std::string& dir, const LoadConfig& cfg) {
  const auto rgb_index = read_index(dir + "/rgb.txt");
  const auto depth_index = read_index(dir + "/depth.txt");
  Intrinsics K = read_calib(dir, cfg.fallback_intrinsics);

  Sequence seq;
  for (const IndexEntry& re : rgb_index) {
    if (cfg.max_frames >= 0 &&
        static_cast<int>(seq.frames.size()) >= cfg.max_frames)
      break;
    const int di = nearest_entry(depth_index, re.timestamp);
    if (di < 0 ||
        std::abs(depth_index[di].timestamp - re.timestamp) >
            cfg.assoc_tolerance) {
      ++seq.diag.unmatched_rgb;
      continue;
    }
    Frame f;
    f.timestamp = re.timestamp;
    if (!load_rgb(dir + "/" + re.file, f.rgb) ||
        !load_depth(dir + "/" + depth_index[di].file, K.depth_scale,
                    f.depth)) {
      ++seq.diag.skipped_files;
      continue;
    }
    K.width = f.rgb.width;
    K.height = f.rgb.height;
    f.intrinsics = K;
    const std::string mask_path =
        dir + "/masks/" + fs::path(re.file).filename().string();
    if (fs::exists(mask_path)) {
      MaskImage m;
      if (load_mask(mask_path, m)) f.semantic_mask = std::move(m);
    }
    if (!f.dims_ok()) {
      ++seq.diag.skipped_files;
      continue;
    }
    seq.frames.push_back(std::move(f));
  }
  if (seq.frames.empty())
    throw std::runtime_error("no associated rgb/depth pairs in " + dir);

  if (fs::exists(dir + "/groundtruth.txt"))
    seq.groundtruth = read_trajectory(dir + "/groundtruth.txt");
  return seq;
}

void save_tum_sequence(const std::string& dir, const std::vector<Frame>& frames,
                       const std::vector<TrajectoryEntry>& groundtruth) {
  if (frames.empty()) throw std::invalid_argument("save_tum_sequence: empty");
  fs::create_directories(dir + "/rgb");
  fs::create_directories(dir + "/depth");
  bool any_mask = false;
  for (const Frame& f : frames) any_mask |= f.semantic_mask.has_value();
  if (any_mask) fs::create_directories(dir + "/masks");

  std::ofstream rgb_txt(dir + "/rgb.txt"), depth_txt(dir + "/depth.txt");
  const Intrinsics& K = frames.front().intrinsics;
  {
    std::ofstream calib(dir + "/calib.txt");
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %.9g %.9g\n", K.fx, K.fy,
                  K.cx, K.cy, K.depth_scale);
    calib << buf;
  }

  const std::vector<int> png_params = {cv::IMWRITE_PNG_COMPRESSION, 3};
  char name[64], ts[32];
  for (const Frame& f : frames) {
    std::snprintf(ts, sizeof(ts), "%.6f", f.timestamp);
    std::snprintf(name, sizeof(name), "%.6f.png", f.timestamp);
    cv::Mat rgb(f.rgb.height, f.rgb.width, CV_8UC3);
    for (int y = 0; y < f.rgb.height; ++y) {
      cv::Vec3b* row = rgb.ptr<cv::Vec3b>(y);
      for (int x = 0; x < f.rgb.width; ++x) {
        const Vec3 c = f.rgb.pixel(x, y);
        for (int ch = 0; ch < 3; ++ch)
          row[x][2 - ch] = static_cast<uint8_t>(
              std::lround(std::clamp(c[ch], 0.0, 1.0) * 255.0));
      }
    }
    cv::imwrite(dir + "/rgb/" + name, rgb, png_params);
    rgb_txt << ts << " rgb/" << name << '\n';
    cv::Mat depth(f.depth.height, f.depth.width, CV_16UC1);
    for (int y = 0; y < f.depth.height; ++y) {
      uint16_t* row = depth.ptr<uint16_t>(y);
      for (int x = 0; x < f.depth.width; ++x)
        row[x] = static_cast<uint16_t>(std::clamp(
            std::lround(f.depth.at(x, y) * f.intrinsics.depth_scale), 0l,
            65535l));
    }
    cv::imwrite(dir + "/depth/" + name, depth, png_params);
    depth_txt << ts << " depth/" << name << '\n';
    if (f.semantic_mask) {
      cv::Mat m(f.semantic_mask->height, f.semantic_mask->width, CV_8UC1);
      for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x)
          m.at<uint8_t>(y, x) = f.semantic_mask->at(x, y) == 0 ? 255 : 0;
      cv::imwrite(dir + "/masks/" + name, m, png_params);
    }
  }
  if (!groundtruth.empty())
    write_trajectory(dir + "/groundtruth.txt", groundtruth);
}

}  // namespace splat
