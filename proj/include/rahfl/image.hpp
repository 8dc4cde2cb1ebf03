#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "rahfl/tensor.hpp"

namespace rahfl {

/// Grayscale or RGB raster with pixels in [0,1], row-major HWC.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t ch, double fill = 0.0)
      : height(h), width(w), channels(ch), pixels(h * w * ch, fill) {
    if (h == 0 || w == 0 || (ch != 1 && ch != 3)) {
      throw std::invalid_argument("Image: bad dimensions");
    }
  }

  double& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return pixels[(y * width + x) * channels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }

  std::size_t size() const { return pixels.size(); }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  bool operator==(const Image& o) const { return same_shape(o) && pixels == o.pixels; }
};

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

inline void clamp01(Image& img) {
  for (auto& p : img.pixels) p = clamp01(p);
}

inline double image_mean(const Image& img) {
  double s = 0.0;
  for (double p : img.pixels) s += p;
  return s / static_cast<double>(img.size());
}

inline double l1_distance(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("l1_distance: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) s += std::abs(a.pixels[i] - b.pixels[i]);
  return s;
}

/// Bilinear sample with edge replication (coordinates clamped to the raster).
inline double bilinear_sample(const Image& img, double y, double x, std::size_t c) {
  const double maxy = static_cast<double>(img.height - 1);
  const double maxx = static_cast<double>(img.width - 1);
  y = std::min(std::max(y, 0.0), maxy);
  x = std::min(std::max(x, 0.0), maxx);
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, img.height - 1);
  const std::size_t x1 = std::min(x0 + 1, img.width - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  const double top = img.at(y0, x0, c) * (1.0 - fx) + img.at(y0, x1, c) * fx;
  const double bot = img.at(y1, x0, c) * (1.0 - fx) + img.at(y1, x1, c) * fx;
  return top * (1.0 - fy) + bot * fy;
}

/// Bilinear resize; an identity mapping reproduces the input exactly.
inline Image resize_bilinear(const Image& src, std::size_t out_h, std::size_t out_w) {
  Image out(out_h, out_w, src.channels);
  const double sy = static_cast<double>(src.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(src.width) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      const double srcy = (static_cast<double>(y) + 0.5) * sy - 0.5;
      const double srcx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      for (std::size_t c = 0; c < src.channels; ++c) {
        out.at(y, x, c) = bilinear_sample(src, srcy, srcx, c);
      }
    }
  }
  return out;
}

inline Image crop(const Image& src, std::size_t top, std::size_t left, std::size_t h,
                  std::size_t w) {
  if (top + h > src.height || left + w > src.width) {
    throw std::invalid_argument("crop: region out of bounds");
  }
  Image out(h, w, src.channels);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < src.channels; ++c) out.at(y, x, c) = src.at(top + y, left + x, c);
  return out;
}

inline Image flip_horizontal(const Image& src) {
  Image out(src.height, src.width, src.channels);
  for (std::size_t y = 0; y < src.height; ++y)
    for (std::size_t x = 0; x < src.width; ++x)
      for (std::size_t c = 0; c < src.channels; ++c)
        out.at(y, x, c) = src.at(y, src.width - 1 - x, c);
  return out;
}

/// One pass of a k x k box filter (k odd), edge replicated.
inline Image box_blur_pass(const Image& src, std::size_t k) {
  const long r = static_cast<long>(k) / 2;
  Image out(src.height, src.width, src.channels);
  const double inv = 1.0 / static_cast<double>(k * k);
  for (long y = 0; y < static_cast<long>(src.height); ++y) {
    for (long x = 0; x < static_cast<long>(src.width); ++x) {
      for (std::size_t c = 0; c < src.channels; ++c) {
        double s = 0.0;
        for (long dy = -r; dy <= r; ++dy) {
          for (long dx = -r; dx <= r; ++dx) {
            const long yy = std::clamp(y + dy, 0L, static_cast<long>(src.height) - 1);
            const long xx = std::clamp(x + dx, 0L, static_cast<long>(src.width) - 1);
            s += src.at(yy, xx, c);
          }
        }
        out.at(y, x, c) = s * inv;
      }
    }
  }
  return out;
}

/// 3x3 binomial blur ([1 2 1] x [1 2 1] / 16), edge replicated.
inline Image gaussian_blur3(const Image& src) {
  static const double kW[3] = {0.25, 0.5, 0.25};
  Image tmp(src.height, src.width, src.channels);
  for (long y = 0; y < static_cast<long>(src.height); ++y)
    for (long x = 0; x < static_cast<long>(src.width); ++x)
      for (std::size_t c = 0; c < src.channels; ++c) {
        double s = 0.0;
        for (long dx = -1; dx <= 1; ++dx) {
          const long xx = std::clamp(x + dx, 0L, static_cast<long>(src.width) - 1);
          s += kW[dx + 1] * src.at(y, xx, c);
        }
        tmp.at(y, x, c) = s;
      }
  Image out(src.height, src.width, src.channels);
  for (long y = 0; y < static_cast<long>(src.height); ++y)
    for (long x = 0; x < static_cast<long>(src.width); ++x)
      for (std::size_t c = 0; c < src.channels; ++c) {
        double s = 0.0;
        for (long dy = -1; dy <= 1; ++dy) {
          const long yy = std::clamp(y + dy, 0L, static_cast<long>(src.height) - 1);
          s += kW[dy + 1] * tmp.at(yy, x, c);
        }
        out.at(y, x, c) = s;
      }
  return out;
}

/// Flatten to a length H*W*C tensor row (the model's input format).
inline void write_image_row(const Image& img, Tensor& batch, std::size_t row) {
  if (batch.cols() != img.size()) throw std::invalid_argument("write_image_row: width mismatch");
  for (std::size_t i = 0; i < img.size(); ++i) batch.at(row, i) = img.pixels[i];
}

}  // namespace rahfl
