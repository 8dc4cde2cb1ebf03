#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "rahfl/image.hpp"
#include "rahfl/rng.hpp"

namespace rahfl {

/// Augmentation operation set. Deliberately disjoint from the corruption set:
/// these are the clean transforms the mixer stacks, not the damage model.
enum class AugKind {
  autocontrast,
  equalize,
  rotate,
  posterize,
  solarize,
  shear_x,
  shear_y,
  translate_x,
  translate_y,
};

constexpr std::array<std::string_view, 9> kAugKindNames = {
    "autocontrast", "equalize", "rotate",      "posterize",  "solarize",
    "shear_x",      "shear_y",  "translate_x", "translate_y"};

constexpr std::size_t kNumAugKinds = kAugKindNames.size();

struct AugOp {
  AugKind kind;
  double magnitude = 0.0;  // in [0,1]
};

/// One to three stacked operations (Seq of the mixer).
struct AugChain {
  std::vector<AugOp> ops;
};

struct MixConfig {
  std::size_t num_sequences = 3;  // S
  double alpha = 1.0;

  void validate() const {
    if (num_sequences < 1) throw std::invalid_argument("MixConfig: num_sequences must be >= 1");
    if (alpha <= 0.0) throw std::invalid_argument("MixConfig: alpha must be positive");
  }
};

namespace detail {

/// Inverse-map affine warp: out(y, x) = bilinear(src, A * (p - center) + center).
template <typename MapFn>
Image warp(const Image& src, MapFn&& map) {
  Image out(src.height, src.width, src.channels);
  const double cy = (static_cast<double>(src.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(src.width) - 1.0) / 2.0;
  for (std::size_t y = 0; y < src.height; ++y) {
    for (std::size_t x = 0; x < src.width; ++x) {
      auto [sy, sx] = map(static_cast<double>(y) - cy, static_cast<double>(x) - cx);
      for (std::size_t c = 0; c < src.channels; ++c) {
        out.at(y, x, c) = bilinear_sample(src, sy + cy, sx + cx, c);
      }
    }
  }
  return out;
}

inline Image autocontrast(const Image& src) {
  double lo = src.pixels[0], hi = src.pixels[0];
  for (double p : src.pixels) {
    lo = std::min(lo, p);
    hi = std::max(hi, p);
  }
  if (hi - lo < 1e-6) return src;
  Image out = src;
  const double inv = 1.0 / (hi - lo);
  for (auto& p : out.pixels) p = (p - lo) * inv;
  return out;
}

inline Image equalize(const Image& src) {
  constexpr std::size_t kBins = 256;
  std::array<std::size_t, kBins> hist{};
  for (double p : src.pixels) {
    auto b = static_cast<std::size_t>(clamp01(p) * (kBins - 1) + 0.5);
    ++hist[b];
  }
  std::array<double, kBins> cdf{};
  std::size_t acc = 0;
  std::size_t cdf_min = 0;
  bool found_min = false;
  for (std::size_t b = 0; b < kBins; ++b) {
    acc += hist[b];
    cdf[b] = static_cast<double>(acc);
    if (!found_min && hist[b] > 0) {
      cdf_min = acc;
      found_min = true;
    }
  }
  const double denom = static_cast<double>(src.size()) - static_cast<double>(cdf_min);
  if (denom <= 0.0) return src;  // constant image
  Image out = src;
  for (auto& p : out.pixels) {
    auto b = static_cast<std::size_t>(clamp01(p) * (kBins - 1) + 0.5);
    p = (cdf[b] - static_cast<double>(cdf_min)) / denom;
  }
  return out;
}

}  // namespace detail

/// Deterministic pixel transform for one operation; shape preserved, output
/// clamped to [0,1]. Geometric ops replicate edges so no occlusion-like
/// artifacts enter the augmentation set.
inline Image apply_op(const Image& image, const AugOp& op) {
  Image out;
  switch (op.kind) {
    case AugKind::autocontrast:
      out = detail::autocontrast(image);
      break;
    case AugKind::equalize:
      out = detail::equalize(image);
      break;
    case AugKind::rotate: {
      const double theta = op.magnitude * 30.0 * M_PI / 180.0;
      const double c = std::cos(theta), s = std::sin(theta);
      out = detail::warp(image, [c, s](double y, double x) {
        return std::pair<double, double>{c * y - s * x, s * y + c * x};
      });
      break;
    }
    case AugKind::posterize: {
      const auto levels = static_cast<long>(std::lround(8.0 - 6.0 * op.magnitude));
      const double steps = static_cast<double>(std::clamp(levels, 2L, 8L) - 1);
      out = image;
      for (auto& p : out.pixels) p = std::round(clamp01(p) * steps) / steps;
      break;
    }
    case AugKind::solarize: {
      const double threshold = 1.0 - op.magnitude;
      out = image;
      for (auto& p : out.pixels) {
        if (p > threshold) p = 1.0 - p;
      }
      break;
    }
    case AugKind::shear_x: {
      const double f = op.magnitude * 0.3;
      out = detail::warp(image, [f](double y, double x) {
        return std::pair<double, double>{y, x - f * y};
      });
      break;
    }
    case AugKind::shear_y: {
      const double f = op.magnitude * 0.3;
      out = detail::warp(image, [f](double y, double x) {
        return std::pair<double, double>{y - f * x, x};
      });
      break;
    }
    case AugKind::translate_x: {
      const double shift = op.magnitude * 0.25 * static_cast<double>(image.width);
      out = detail::warp(image, [shift](double y, double x) {
        return std::pair<double, double>{y, x - shift};
      });
      break;
    }
    case AugKind::translate_y: {
      const double shift = op.magnitude * 0.25 * static_cast<double>(image.height);
      out = detail::warp(image, [shift](double y, double x) {
        return std::pair<double, double>{y - shift, x};
      });
      break;
    }
    default:
      throw std::invalid_argument("apply_op: unknown augmentation kind");
  }
  clamp01(out);
  return out;
}

inline Image apply_chain(const Image& image, const AugChain& chain) {
  Image out = image;
  for (const auto& op : chain.ops) out = apply_op(out, op);
  return out;
}

/// Depth uniform in {1,2,3}; kinds i.i.d. uniform over the 9 ops; magnitudes
/// uniform in [0,1].
inline AugChain sample_chain(Rng& rng) {
  AugChain chain;
  const long depth = rng.uniform_int(1, 3);
  for (long i = 0; i < depth; ++i) {
    AugOp op;
    op.kind = static_cast<AugKind>(rng.uniform_int(0, static_cast<long>(kNumAugKinds) - 1));
    op.magnitude = rng.next_double();
    chain.ops.push_back(op);
  }
  return chain;
}

/// Mixing core with all stochastic choices made explicit, so the sampling
/// policy and the blend can be tested separately.
inline Image augmix_with(const Image& image, const std::vector<AugChain>& chains,
                         const std::vector<double>& weights, double eta) {
  if (chains.size() != weights.size() || chains.empty()) {
    throw std::invalid_argument("augmix_with: chains/weights mismatch");
  }
  Image mixed(image.height, image.width, image.channels, 0.0);
  for (std::size_t s = 0; s < chains.size(); ++s) {
    const Image seq = apply_chain(image, chains[s]);
    for (std::size_t i = 0; i < mixed.pixels.size(); ++i) {
      mixed.pixels[i] += weights[s] * seq.pixels[i];
    }
  }
  Image out = image;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = eta * image.pixels[i] + (1.0 - eta) * mixed.pixels[i];
  }
  clamp01(out);
  return out;
}

/// x' = eta * x + (1 - eta) * sum_s w_s * Seq_s(x), with w ~ Dirichlet(alpha)
/// and eta ~ Beta(alpha, alpha).
inline Image augmix(const Image& image, const MixConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<AugChain> chains(cfg.num_sequences);
  for (auto& c : chains) c = sample_chain(rng);
  const std::vector<double> weights = rng.dirichlet(cfg.alpha, cfg.num_sequences);
  const double eta = rng.beta(cfg.alpha, cfg.alpha);
  return augmix_with(image, chains, weights, eta);
}

/// Fully resolved draw of the simple-augmentation pipeline.
struct SimpleAugPlan {
  double crop_area = 1.0;
  std::size_t crop_top = 0;
  std::size_t crop_left = 0;
  bool jitter = false;
  double gain = 1.0;
  double offset = 0.0;
  bool grayscale = false;
  bool blur = false;
  bool flip = false;
};

/// All random numbers are drawn here, in a fixed order, regardless of which
/// stages end up active.
inline SimpleAugPlan sample_simple_plan(Rng& rng, std::size_t height, std::size_t width) {
  SimpleAugPlan plan;
  plan.crop_area = rng.uniform(0.6, 1.0);
  const double side_frac = std::sqrt(plan.crop_area);
  const auto crop_h = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(side_frac * static_cast<double>(height))));
  const auto crop_w = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(side_frac * static_cast<double>(width))));
  plan.crop_top = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(height - std::min(crop_h, height))));
  plan.crop_left = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(width - std::min(crop_w, width))));
  plan.jitter = rng.bernoulli(0.8);
  plan.gain = rng.uniform(0.8, 1.2);
  plan.offset = rng.uniform(-0.1, 0.1);
  plan.grayscale = rng.bernoulli(0.2);
  plan.blur = rng.bernoulli(0.5);
  plan.flip = rng.bernoulli(0.5);
  return plan;
}

inline Image simple_augment_with(const Image& image, const SimpleAugPlan& plan) {
  const double side_frac = std::sqrt(plan.crop_area);
  const auto crop_h = std::min(image.height, std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(
                                                  side_frac * static_cast<double>(image.height)))));
  const auto crop_w = std::min(image.width, std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(
                                                 side_frac * static_cast<double>(image.width)))));
  Image out = crop(image, std::min(plan.crop_top, image.height - crop_h),
                   std::min(plan.crop_left, image.width - crop_w), crop_h, crop_w);
  if (crop_h != image.height || crop_w != image.width) {
    out = resize_bilinear(out, image.height, image.width);
  }
  if (plan.jitter) {
    for (auto& p : out.pixels) p = plan.gain * p + plan.offset;
  }
  if (plan.grayscale && out.channels == 3) {
    for (std::size_t y = 0; y < out.height; ++y) {
      for (std::size_t x = 0; x < out.width; ++x) {
        const double g = (out.at(y, x, 0) + out.at(y, x, 1) + out.at(y, x, 2)) / 3.0;
        out.at(y, x, 0) = out.at(y, x, 1) = out.at(y, x, 2) = g;
      }
    }
  }
  if (plan.blur) out = gaussian_blur3(out);
  if (plan.flip) out = flip_horizontal(out);
  clamp01(out);
  return out;
}

/// Crop / jitter / grayscale / blur / flip pipeline used as the contrastive
/// intermediary view.
inline Image simple_augment(const Image& image, Rng& rng) {
  return simple_augment_with(image, sample_simple_plan(rng, image.height, image.width));
}

}  // namespace rahfl
