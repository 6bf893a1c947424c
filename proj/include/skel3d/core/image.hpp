#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "skel3d/core/tensor.hpp"

namespace skel3d {

struct Rgb {
  double r = 1.0, g = 1.0, b = 1.0;
};

// H x W x 3 image, interleaved, values in [0, 1]. White (1, 1, 1) is background.
class Image {
 public:
  Image() = default;
  Image(int height, int width, Rgb fill = {});

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  bool empty() const noexcept { return pixels_.empty(); }

  double& at(int y, int x, int c) { return pixels_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }
  double at(int y, int x, int c) const { return pixels_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }
  std::span<double> values() noexcept { return pixels_; }
  std::span<const double> values() const noexcept { return pixels_; }

  bool same_size(const Image& other) const noexcept { return height_ == other.height_ && width_ == other.width_; }

  // Rounds every value to the nearest multiple of 1/255 (what an 8-bit PNG stores).
  Image quantized() const;
  Image clamped() const;
  Image flipped_horizontal() const;

  // [3, H, W] tensor and back.
  Tensor to_chw() const;
  static Image from_chw(const Tensor& chw);

  friend bool operator==(const Image& a, const Image& b) {
    return a.height_ == b.height_ && a.width_ == b.width_ && a.pixels_ == b.pixels_;
  }

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> pixels_;
};

// 8-bit RGB PNG.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

// Horizontal concatenation, used for sample panels.
Image hconcat(std::span<const Image> images);
// Vertical concatenation, used for sample grids.
Image vconcat(std::span<const Image> images);

}  // namespace skel3d
