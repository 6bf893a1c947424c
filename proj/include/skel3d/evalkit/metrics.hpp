#pragma once

#include <vector>

#include "skel3d/core/image.hpp"

namespace skel3d::evalkit {

inline constexpr double kPsnrCap = 99.0;

double metric_l1(const Image& a, const Image& b);
// 10 log10(1 / MSE) for values in [0, 1]; identical images give `cap`.
double metric_psnr(const Image& a, const Image& b, double cap = kPsnrCap);
// Single-scale SSIM on luma, 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
// K2 = 0.03, averaged over fully contained windows.
double metric_ssim(const Image& a, const Image& b);

// Luma (0.299, 0.587, 0.114), row-major H x W.
std::vector<double> to_luma(const Image& img);
// Normalized 11x11 Gaussian window, row-major.
std::vector<double> ssim_window();

}  // namespace skel3d::evalkit
