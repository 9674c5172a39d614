// Copyright 2026 The tensorpose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace tensorpose {

/// Interleaved floating-point image, row-major, channels innermost.
/// Pixel (x, y) is column x, row y.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<double> data;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c = 3, double fill = 0.0)
      : width(w), height(h), channels(c), data(w * h * c, fill) {}

  double& at(std::size_t x, std::size_t y, std::size_t c) {
    return data[(y * width + x) * channels + c];
  }
  double at(std::size_t x, std::size_t y, std::size_t c) const {
    return data[(y * width + x) * channels + c];
  }
  std::size_t pixel_count() const { return width * height; }
  bool empty() const { return data.empty(); }
};

/// Axis interpolation weights for a coordinate in grid-index space
/// [0, dim-1]. Coordinates outside are clamped to the border and report a
/// zero derivative.
struct AxisLerp {
  std::size_t i0 = 0;
  std::size_t i1 = 0;
  double f = 0.0;
  double dslope = 0.0;  // d(interpolant)/dx multiplier: 1 inside, 0 when clamped
};

inline AxisLerp axis_lerp(double x, std::size_t dim) {
  AxisLerp a;
  if (dim <= 1) return a;
  const double hi = static_cast<double>(dim - 1);
  const bool inside = x >= 0.0 && x <= hi;
  const double xc = std::clamp(x, 0.0, hi);
  auto i0 = static_cast<std::size_t>(std::floor(xc));
  if (i0 > dim - 2) i0 = dim - 2;
  a.i0 = i0;
  a.i1 = i0 + 1;
  a.f = xc - static_cast<double>(i0);
  a.dslope = inside ? 1.0 : 0.0;
  return a;
}

/// Bilinear sample of every channel at continuous (x, y); clamp-to-border.
/// Optionally returns d/dx and d/dy per channel.
inline void sample_bilinear(const Image& img, double x, double y, double* out,
                            double* ddx = nullptr, double* ddy = nullptr) {
  const AxisLerp ax = axis_lerp(x, img.width);
  const AxisLerp ay = axis_lerp(y, img.height);
  for (std::size_t c = 0; c < img.channels; ++c) {
    const double v00 = img.at(ax.i0, ay.i0, c);
    const double v10 = img.at(ax.i1, ay.i0, c);
    const double v01 = img.at(ax.i0, ay.i1, c);
    const double v11 = img.at(ax.i1, ay.i1, c);
    const double top = v00 + ax.f * (v10 - v00);
    const double bot = v01 + ax.f * (v11 - v01);
    out[c] = top + ay.f * (bot - top);
    if (ddx) ddx[c] = ax.dslope * ((1.0 - ay.f) * (v10 - v00) + ay.f * (v11 - v01));
    if (ddy) ddy[c] = ay.dslope * (bot - top);
  }
}

/// Adjoint of sample_bilinear: scatters per-channel gradients into grad.
inline void scatter_bilinear(Image& grad, double x, double y, const double* g) {
  const AxisLerp ax = axis_lerp(x, grad.width);
  const AxisLerp ay = axis_lerp(y, grad.height);
  const double w00 = (1.0 - ax.f) * (1.0 - ay.f);
  const double w10 = ax.f * (1.0 - ay.f);
  const double w01 = (1.0 - ax.f) * ay.f;
  const double w11 = ax.f * ay.f;
  for (std::size_t c = 0; c < grad.channels; ++c) {
    grad.at(ax.i0, ay.i0, c) += w00 * g[c];
    grad.at(ax.i1, ay.i0, c) += w10 * g[c];
    grad.at(ax.i0, ay.i1, c) += w01 * g[c];
    grad.at(ax.i1, ay.i1, c) += w11 * g[c];
  }
}

inline double mse(const Image& a, const Image& b) {
  if (a.data.size() != b.data.size()) throw std::invalid_argument("mse: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return a.data.empty() ? 0.0 : s / static_cast<double>(a.data.size());
}

/// PSNR for signals in [0, 1], capped at 99 dB.
inline double psnr_from_mse(double m) {
  if (m <= 0.0) return 99.0;
  return std::min(99.0, -10.0 * std::log10(m));
}

inline double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse(a, b)); }

/// Mean SSIM over channels with an 11x11 Gaussian window (sigma 1.5).
inline double ssim(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw std::invalid_argument("ssim: shape mismatch");
  constexpr int kHalf = 5;
  std::array<double, 2 * kHalf + 1> win{};
  double wsum = 0.0;
  for (int i = -kHalf; i <= kHalf; ++i) {
    win[i + kHalf] = std::exp(-(i * i) / (2.0 * 1.5 * 1.5));
    wsum += win[i + kHalf];
  }
  for (double& w : win) w /= wsum;
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const long w = static_cast<long>(a.width), h = static_cast<long>(a.height);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < a.channels; ++c) {
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0, norm = 0;
        for (int dy = -kHalf; dy <= kHalf; ++dy) {
          const long yy = y + dy;
          if (yy < 0 || yy >= h) continue;
          for (int dx = -kHalf; dx <= kHalf; ++dx) {
            const long xx = x + dx;
            if (xx < 0 || xx >= w) continue;
            const double wt = win[dy + kHalf] * win[dx + kHalf];
            const double va = a.at(static_cast<std::size_t>(xx), static_cast<std::size_t>(yy), c);
            const double vb = b.at(static_cast<std::size_t>(xx), static_cast<std::size_t>(yy), c);
            norm += wt;
            mx += wt * va;
            my += wt * vb;
            sxx += wt * va * va;
            syy += wt * vb * vb;
            sxy += wt * va * vb;
          }
        }
        mx /= norm;
        my /= norm;
        const double vx = sxx / norm - mx * mx;
        const double vy = syy / norm - my * my;
        const double cxy = sxy / norm - mx * my;
        total += ((2 * mx * my + c1) * (2 * cxy + c2)) /
                 ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    }
  }
  return count ? total / static_cast<double>(count) : 1.0;
}

// ---------------------------------------------------------------------------
// PNG I/O. Values are treated as linear in [0, 1]; no gamma is applied.

namespace detail {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

inline void write_png(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("write_png: only 1 or 3 channel images");
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng init failed");
  }
  std::vector<png_byte> row(img.width * img.channels);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t i = 0; i < img.width * img.channels; ++i) {
      const double v = std::clamp(img.data[y * img.width * img.channels + i], 0.0, 1.0);
      row[i] = static_cast<png_byte>(std::lround(v * 255.0));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Reads any 8/16-bit PNG into a 3-channel image in [0, 1].
inline Image read_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng init failed");
  }
  Image img;
  std::vector<png_byte> buf;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng read failed: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const auto w = png_get_image_width(png, info);
  const auto h = png_get_image_height(png, info);
  const auto stride = png_get_rowbytes(png, info);
  buf.resize(stride * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = buf.data() + y * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  img = Image(w, h, 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(x, y, c) = rows[y][x * 3 + c] / 255.0;
  return img;
}

}  // namespace tensorpose
