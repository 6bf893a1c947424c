#include "skel3d/core/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "skel3d/core/error.hpp"

namespace skel3d {
namespace {

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image::Image(int height, int width, Rgb fill) : height_(height), width_(width) {
  if (height < 0 || width < 0) throw InputError("negative image size");
  pixels_.resize(static_cast<std::size_t>(height) * width * 3);
  for (std::size_t i = 0; i < pixels_.size(); i += 3) {
    pixels_[i] = fill.r;
    pixels_[i + 1] = fill.g;
    pixels_[i + 2] = fill.b;
  }
}

Image Image::quantized() const {
  Image out = *this;
  for (double& v : out.pixels_) v = to_byte(v) / 255.0;
  return out;
}

Image Image::clamped() const {
  Image out = *this;
  for (double& v : out.pixels_) v = std::clamp(v, 0.0, 1.0);
  return out;
}

Image Image::flipped_horizontal() const {
  Image out(height_, width_);
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, width_ - 1 - x, c) = at(y, x, c);
  return out;
}

Tensor Image::to_chw() const {
  Tensor t({3, height_, width_});
  const std::size_t plane = static_cast<std::size_t>(height_) * width_;
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x)
      for (int c = 0; c < 3; ++c) t[c * plane + static_cast<std::size_t>(y) * width_ + x] = at(y, x, c);
  return t;
}

Image Image::from_chw(const Tensor& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3) throw InputError("expected [3, H, W] tensor, got " + shape_str(chw.shape()));
  Image img(chw.dim(1), chw.dim(2));
  const std::size_t plane = static_cast<std::size_t>(img.height_) * img.width_;
  for (int y = 0; y < img.height_; ++y)
    for (int x = 0; x < img.width_; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = chw[c * plane + static_cast<std::size_t>(y) * img.width_ + x];
  return img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot open " + path.string() + " for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("png_create_info_struct failed");
  }
  std::vector<unsigned char> row(static_cast<std::size_t>(image.width()) * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng error while writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width()), static_cast<png_uint_32>(image.height()), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x)
      for (int c = 0; c < 3; ++c) row[static_cast<std::size_t>(x) * 3 + c] = to_byte(image.at(y, x, c));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("png_create_info_struct failed");
  }
  Image img;
  std::vector<unsigned char> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng error while reading " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const auto width = static_cast<int>(png_get_image_width(png, info));
  const auto height = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img = Image(height, width);
  row.resize(png_get_rowbytes(png, info));
  for (int y = 0; y < height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = row[static_cast<std::size_t>(x) * 3 + c] / 255.0;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

Image hconcat(std::span<const Image> images) {
  if (images.empty()) return {};
  const int h = images.front().height();
  int w = 0;
  for (const Image& im : images) {
    if (im.height() != h) throw InputError("hconcat height mismatch");
    w += im.width();
  }
  Image out(h, w);
  int x0 = 0;
  for (const Image& im : images) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < im.width(); ++x)
        for (int c = 0; c < 3; ++c) out.at(y, x0 + x, c) = im.at(y, x, c);
    x0 += im.width();
  }
  return out;
}

Image vconcat(std::span<const Image> images) {
  if (images.empty()) return {};
  const int w = images.front().width();
  int h = 0;
  for (const Image& im : images) {
    if (im.width() != w) throw InputError("vconcat width mismatch");
    h += im.height();
  }
  Image out(h, w);
  int y0 = 0;
  for (const Image& im : images) {
    std::copy(im.values().begin(), im.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(y0) * w * 3);
    y0 += im.height();
  }
  return out;
}

}  // namespace skel3d
