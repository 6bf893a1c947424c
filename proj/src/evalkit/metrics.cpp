#include "skel3d/evalkit/metrics.hpp"

#include <array>
#include <cmath>

#include "skel3d/core/error.hpp"

namespace skel3d::evalkit {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

void require_same(const Image& a, const Image& b, const char* what) {
  if (!a.same_size(b) || a.empty()) throw InputError(std::string(what) + ": images must be non-empty and equal in size");
}

}  // namespace

double metric_l1(const Image& a, const Image& b) {
  require_same(a, b, "metric_l1");
  double s = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) s += std::abs(a.values()[i] - b.values()[i]);
  return s / static_cast<double>(a.values().size());
}

double metric_psnr(const Image& a, const Image& b, double cap) {
  require_same(a, b, "metric_psnr");
  double s = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    const double d = a.values()[i] - b.values()[i];
    s += d * d;
  }
  const double mse = s / static_cast<double>(a.values().size());
  if (mse <= 0.0) return cap;
  return std::min(cap, 10.0 * std::log10(1.0 / mse));
}

std::vector<double> to_luma(const Image& img) {
  std::vector<double> y(static_cast<std::size_t>(img.height()) * img.width());
  for (int r = 0; r < img.height(); ++r)
    for (int c = 0; c < img.width(); ++c)
      y[static_cast<std::size_t>(r) * img.width() + c] =
          0.299 * img.at(r, c, 0) + 0.587 * img.at(r, c, 1) + 0.114 * img.at(r, c, 2);
  return y;
}

std::vector<double> ssim_window() {
  std::vector<double> g(kWindow);
  double s = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    s += g[static_cast<std::size_t>(i)];
  }
  std::vector<double> w(kWindow * kWindow);
  for (int i = 0; i < kWindow; ++i)
    for (int j = 0; j < kWindow; ++j)
      w[static_cast<std::size_t>(i * kWindow + j)] = g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(j)] / (s * s);
  return w;
}

double metric_ssim(const Image& a, const Image& b) {
  require_same(a, b, "metric_ssim");
  if (a.height() < kWindow || a.width() < kWindow) throw InputError("metric_ssim: image smaller than the 11x11 window");
  const int h = a.height(), w = a.width();
  const auto x = to_luma(a), y = to_luma(b);
  const auto win = ssim_window();

  // Separable weighted sums of x, y, x^2, y^2, xy along rows, then columns.
  const int oh = h - kWindow + 1, ow = w - kWindow + 1;
  std::vector<double> g(kWindow);
  for (int i = 0; i < kWindow; ++i) g[static_cast<std::size_t>(i)] = std::sqrt(win[static_cast<std::size_t>(i * kWindow + i)]);
  std::vector<std::array<double, 5>> rows(static_cast<std::size_t>(h) * ow);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < ow; ++c) {
      std::array<double, 5> acc{};
      for (int k = 0; k < kWindow; ++k) {
        const std::size_t idx = static_cast<std::size_t>(r) * w + c + k;
        const double gk = g[static_cast<std::size_t>(k)];
        acc[0] += gk * x[idx];
        acc[1] += gk * y[idx];
        acc[2] += gk * x[idx] * x[idx];
        acc[3] += gk * y[idx] * y[idx];
        acc[4] += gk * x[idx] * y[idx];
      }
      rows[static_cast<std::size_t>(r) * ow + c] = acc;
    }
  }
  double total = 0.0;
  for (int r = 0; r < oh; ++r) {
    for (int c = 0; c < ow; ++c) {
      std::array<double, 5> acc{};
      for (int k = 0; k < kWindow; ++k) {
        const auto& v = rows[static_cast<std::size_t>(r + k) * ow + c];
        for (int m = 0; m < 5; ++m) acc[static_cast<std::size_t>(m)] += g[static_cast<std::size_t>(k)] * v[static_cast<std::size_t>(m)];
      }
      const double mx = acc[0], my = acc[1];
      const double vx = acc[2] - mx * mx, vy = acc[3] - my * my, cxy = acc[4] - mx * my;
      total += ((2.0 * mx * my + kC1) * (2.0 * cxy + kC2)) / ((mx * mx + my * my + kC1) * (vx + vy + kC2));
    }
  }
  return total / (static_cast<double>(oh) * ow);
}

}  // namespace skel3d::evalkit
