#pragma once

#include <optional>

#include "splatslam/geometry.hpp"
#include "splatslam/image.hpp"

namespace splat {

// One RGB-D observation. Depth is metric meters with 0 = invalid.
struct Frame {
  double timestamp = 0.0;
  ColorImage rgb;
  GrayImage depth;
  Intrinsics intrinsics;
  std::optional<MaskImage> semantic_mask;

  bool dims_ok() const {
    return rgb.width == depth.width && rgb.height == depth.height &&
           rgb.width == intrinsics.width && rgb.height == intrinsics.height &&
           (!semantic_mask || (semantic_mask->width == rgb.width &&
                               semantic_mask->height == rgb.height));
  }
};

}  // namespace splat
