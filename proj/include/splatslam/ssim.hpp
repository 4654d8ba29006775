#pragma once

#include "splatslam/image.hpp"

namespace splat {

// Mean SSIM between two RGB images (11x11 Gaussian window, sigma 1.5,
// K1=0.01, K2=0.03, dynamic range 1). Evaluated where the full window fits;
// throws std::invalid_argument on mismatched or too-small images.
// When grad_x is non-null it receives d(mean SSIM)/dx.
double ssim(const ColorImage& x, const ColorImage& y,
            ColorImage* grad_x = nullptr);

}  // namespace splat
