#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rahfl/augment.hpp"
#include "rahfl/image.hpp"
#include "rahfl/rng.hpp"

namespace rahfl {

struct LabeledExample {
  Image image;
  int label = 0;
  bool corrupted = false;  // bookkeeping only, never visible to training
};

struct Dataset {
  std::vector<LabeledExample> examples;
  std::size_t num_classes = 0;
  bool has_labels = true;

  std::size_t size() const { return examples.size(); }
  const Image& image(std::size_t i) const { return examples[i].image; }

  int label(std::size_t i) const {
    if (!has_labels) throw std::logic_error("Dataset: labels requested from unlabeled dataset");
    return examples[i].label;
  }

  void validate() const {
    if (examples.empty()) throw std::invalid_argument("Dataset: empty");
    for (const auto& e : examples) {
      if (!e.image.same_shape(examples.front().image)) {
        throw std::invalid_argument("Dataset: mixed image shapes");
      }
      if (has_labels && (e.label < 0 || static_cast<std::size_t>(e.label) >= num_classes)) {
        throw std::invalid_argument("Dataset: label out of range");
      }
    }
  }

  Dataset without_labels() const {
    Dataset d = *this;
    d.has_labels = false;
    return d;
  }
};

inline std::uint64_t checksum(const Dataset& d) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& e : d.examples) {
    h = fnv1a_bytes(e.image.pixels.data(), e.image.pixels.size() * sizeof(double), h);
    if (d.has_labels) h = fnv1a_bytes(&e.label, sizeof(e.label), h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Corruption operators
// ---------------------------------------------------------------------------

enum class CorruptKind {
  gaussian_noise,
  shot_noise,
  impulse_noise,
  box_blur,
  brightness,
  contrast,
  pixelate,
  occlusion,
};

constexpr std::array<std::string_view, 8> kCorruptKindNames = {
    "gaussian_noise", "shot_noise", "impulse_noise", "box_blur",
    "brightness",     "contrast",   "pixelate",      "occlusion"};

constexpr std::size_t kNumCorruptKinds = kCorruptKindNames.size();

// The augmentation set must not overlap the corruption set.
constexpr bool aug_and_corrupt_kinds_disjoint() {
  for (auto a : kAugKindNames) {
    for (auto c : kCorruptKindNames) {
      if (a == c) return false;
    }
  }
  return true;
}
static_assert(aug_and_corrupt_kinds_disjoint(),
              "augmentation ops must stay disjoint from corruption kinds");

struct CorruptionSpec {
  CorruptKind kind;
  int severity = 1;  // 1..5

  void validate() const {
    if (severity < 1 || severity > 5) {
      throw std::invalid_argument("CorruptionSpec: severity must be in [1,5]");
    }
  }
};

namespace severity_tables {
constexpr std::array<double, 5> gaussian_sigma = {0.04, 0.08, 0.12, 0.16, 0.20};
constexpr std::array<double, 5> shot_photons = {500, 250, 100, 60, 30};
constexpr std::array<double, 5> impulse_prob = {0.01, 0.03, 0.06, 0.10, 0.17};
constexpr std::array<std::size_t, 5> blur_kernel = {3, 3, 5, 5, 7};
constexpr std::array<std::size_t, 5> blur_passes = {1, 2, 1, 2, 3};
constexpr std::array<double, 5> brightness_offset = {0.1, 0.15, 0.2, 0.25, 0.3};
constexpr std::array<double, 5> contrast_factor = {0.75, 0.6, 0.45, 0.3, 0.2};
constexpr std::array<double, 5> pixelate_factor = {0.8, 0.65, 0.5, 0.4, 0.3};
constexpr std::array<double, 5> occlusion_frac = {0.1, 0.15, 0.2, 0.25, 0.3};
}  // namespace severity_tables

/// Apply one corruption. Output clamped to [0,1], shape preserved,
/// deterministic given the rng state.
inline Image apply_corruption(const Image& image, const CorruptionSpec& spec, Rng& rng) {
  spec.validate();
  namespace tbl = severity_tables;
  const std::size_t s = static_cast<std::size_t>(spec.severity) - 1;
  Image out = image;
  switch (spec.kind) {
    case CorruptKind::gaussian_noise: {
      const double sigma = tbl::gaussian_sigma[s];
      for (auto& p : out.pixels) p += rng.normal(0.0, sigma);
      break;
    }
    case CorruptKind::shot_noise: {
      const double photons = tbl::shot_photons[s];
      for (auto& p : out.pixels) {
        p = static_cast<double>(rng.poisson(clamp01(p) * photons)) / photons;
      }
      break;
    }
    case CorruptKind::impulse_noise: {
      const double prob = tbl::impulse_prob[s];
      for (auto& p : out.pixels) {
        if (rng.bernoulli(prob)) p = rng.bernoulli(0.5) ? 1.0 : 0.0;
      }
      break;
    }
    case CorruptKind::box_blur: {
      for (std::size_t pass = 0; pass < tbl::blur_passes[s]; ++pass) {
        out = box_blur_pass(out, tbl::blur_kernel[s]);
      }
      break;
    }
    case CorruptKind::brightness: {
      for (auto& p : out.pixels) p += tbl::brightness_offset[s];
      break;
    }
    case CorruptKind::contrast: {
      const double mean = image_mean(out);
      for (auto& p : out.pixels) p = mean + tbl::contrast_factor[s] * (p - mean);
      break;
    }
    case CorruptKind::pixelate: {
      // Block-average pooling to an h x w grid, nearest-neighbor fill back.
      // Pooling and fill share the same index map, so there is no shift.
      const double f = tbl::pixelate_factor[s];
      const auto h = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::lround(f * static_cast<double>(out.height))));
      const auto w = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::lround(f * static_cast<double>(out.width))));
      Image small(h, w, out.channels, 0.0);
      Image weight(h, w, 1, 0.0);
      for (std::size_t y = 0; y < out.height; ++y) {
        const std::size_t by = std::min(h - 1, y * h / out.height);
        for (std::size_t x = 0; x < out.width; ++x) {
          const std::size_t bx = std::min(w - 1, x * w / out.width);
          for (std::size_t c = 0; c < out.channels; ++c) small.at(by, bx, c) += out.at(y, x, c);
          weight.at(by, bx) += 1.0;
        }
      }
      for (std::size_t y = 0; y < out.height; ++y) {
        const std::size_t by = std::min(h - 1, y * h / out.height);
        for (std::size_t x = 0; x < out.width; ++x) {
          const std::size_t bx = std::min(w - 1, x * w / out.width);
          for (std::size_t c = 0; c < out.channels; ++c) {
            out.at(y, x, c) = small.at(by, bx, c) / weight.at(by, bx);
          }
        }
      }
      break;
    }
    case CorruptKind::occlusion: {
      const double frac = tbl::occlusion_frac[s];
      const auto side = std::max<std::size_t>(
          1, static_cast<std::size_t>(
                 std::lround(frac * static_cast<double>(std::min(out.height, out.width)))));
      const auto top = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<long>(out.height - std::min(side, out.height))));
      const auto left = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<long>(out.width - std::min(side, out.width))));
      for (std::size_t y = top; y < std::min(top + side, out.height); ++y) {
        for (std::size_t x = left; x < std::min(left + side, out.width); ++x) {
          for (std::size_t c = 0; c < out.channels; ++c) out.at(y, x, c) = 0.5;
        }
      }
      break;
    }
    default:
      throw std::invalid_argument("apply_corruption: unknown corruption kind");
  }
  clamp01(out);
  return out;
}

/// Independently corrupt each example with probability xi; kind and severity
/// drawn uniformly.
inline Dataset corrupt_dataset(const Dataset& d, double xi, Rng rng) {
  if (xi < 0.0 || xi > 1.0) throw std::invalid_argument("corrupt_dataset: xi must be in [0,1]");
  Dataset out = d;
  for (auto& e : out.examples) {
    if (rng.next_double() < xi) {
      CorruptionSpec spec;
      spec.kind = static_cast<CorruptKind>(rng.uniform_int(0, static_cast<long>(kNumCorruptKinds) - 1));
      spec.severity = static_cast<int>(rng.uniform_int(1, 5));
      e.image = apply_corruption(e.image, spec, rng);
      e.corrupted = true;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

namespace detail {

inline double smooth_edge(double signed_dist) { return clamp01(signed_dist + 0.5); }

inline Image synth_pattern(int pattern, std::size_t side, Rng& rng) {
  Image img(side, side, 1);
  const double sd = static_cast<double>(side);
  const double cy = sd / 2.0 + rng.uniform(-0.22, 0.22) * sd;
  const double cx = sd / 2.0 + rng.uniform(-0.22, 0.22) * sd;
  // Overlapping intensity bands with a thin contrast margin: class identity
  // is carried by shape, so corruption has to be survived, not shrugged off.
  const double bg = rng.uniform(0.05, 0.40);
  const double fg = std::min(0.95, bg + rng.uniform(0.12, 0.50));
  switch (pattern) {
    case 0: {  // filled disc
      const double r = rng.uniform(0.14, 0.30) * sd;
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          const double d = std::hypot(static_cast<double>(y) - cy, static_cast<double>(x) - cx);
          img.at(y, x) = bg + (fg - bg) * smooth_edge(r - d);
        }
      break;
    }
    case 1: {  // ring
      const double r = rng.uniform(0.22, 0.38) * sd;
      const double t = rng.uniform(0.05, 0.12) * sd;
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          const double d = std::hypot(static_cast<double>(y) - cy, static_cast<double>(x) - cx);
          img.at(y, x) = bg + (fg - bg) * smooth_edge(t - std::abs(d - r));
        }
      break;
    }
    case 2: {  // cross
      const double wy = rng.uniform(0.04, 0.11) * sd;
      const double wx = rng.uniform(0.04, 0.11) * sd;
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          const double dy = std::abs(static_cast<double>(y) - cy);
          const double dx = std::abs(static_cast<double>(x) - cx);
          img.at(y, x) = bg + (fg - bg) * std::max(smooth_edge(wy - dy), smooth_edge(wx - dx));
        }
      break;
    }
    case 3: {  // checker
      const auto cell = static_cast<std::size_t>(rng.uniform_int(2, 4));
      const auto py = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(cell) - 1));
      const auto px = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(cell) - 1));
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          const bool on = (((y + py) / cell) + ((x + px) / cell)) % 2 == 0;
          img.at(y, x) = on ? fg : bg;
        }
      break;
    }
    case 4:    // horizontal stripes
    case 5: {  // vertical stripes
      const auto period = static_cast<std::size_t>(rng.uniform_int(3, 5));
      const auto phase = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(period) - 1));
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          const std::size_t coord = pattern == 4 ? y : x;
          img.at(y, x) = ((coord + phase) % period) * 2 < period ? fg : bg;
        }
      break;
    }
    case 6: {  // corner blob
      const double by = rng.uniform(0.10, 0.30) * sd;
      const double bx = rng.uniform(0.10, 0.30) * sd;
      const double sigma = rng.uniform(0.18, 0.25) * sd;
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          const double d2 = std::pow(static_cast<double>(y) - by, 2) +
                            std::pow(static_cast<double>(x) - bx, 2);
          img.at(y, x) = bg + (fg - bg) * std::exp(-d2 / (2.0 * sigma * sigma));
        }
      break;
    }
    case 7: {  // horizontal gradient
      const double lo = rng.uniform(0.0, 0.2);
      const double hi = rng.uniform(0.7, 1.0);
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          img.at(y, x) = lo + (hi - lo) * static_cast<double>(x) / (sd - 1.0);
        }
      break;
    }
    default:
      throw std::logic_error("synth_pattern: bad pattern index");
  }
  // Snap to the byte grid so manifest round trips are lossless.
  for (auto& p : img.pixels) p = std::round(clamp01(p) * 255.0) / 255.0;
  return img;
}

}  // namespace detail

/// n labeled side x side grayscale images; class c draws from pattern family
/// (c mod 8) with seeded jitter. Labels cycle, so counts balance within 1.
inline Dataset make_synthetic_dataset(std::size_t n, std::size_t num_classes, std::size_t side,
                                      Rng rng) {
  if (num_classes == 0 || n < num_classes) {
    throw std::invalid_argument("make_synthetic_dataset: need n >= num_classes >= 1");
  }
  if (side < 8) throw std::invalid_argument("make_synthetic_dataset: side must be >= 8");
  Dataset d;
  d.num_classes = num_classes;
  d.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % num_classes);
    Rng ex_rng = rng.split(i);
    LabeledExample e;
    e.label = label;
    e.image = detail::synth_pattern(label % 8, side, ex_rng);
    d.examples.push_back(std::move(e));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Manifest I/O
// ---------------------------------------------------------------------------
//
// <name>.json       {"height":H,"width":W,"channels":Ch,"count":N,
//                    "num_classes":C,"pixels":"rel","labels":"rel"|null}
// pixels file       N*H*W*Ch bytes, row-major, one byte per pixel
// labels file       N bytes, one label per example

inline void save_manifest_dataset(const Dataset& d, const std::filesystem::path& manifest_path) {
  d.validate();
  const auto dir = manifest_path.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  const std::string stem = manifest_path.stem().string();
  const std::string pixels_name = stem + ".pixels.bin";
  const std::string labels_name = stem + ".labels.bin";

  const Image& first = d.examples.front().image;
  nlohmann::json j;
  j["height"] = first.height;
  j["width"] = first.width;
  j["channels"] = first.channels;
  j["count"] = d.size();
  j["num_classes"] = d.num_classes;
  j["pixels"] = pixels_name;
  j["labels"] = d.has_labels ? nlohmann::json(labels_name) : nlohmann::json(nullptr);

  {
    std::ofstream out(dir / pixels_name, std::ios::binary);
    if (!out) throw std::runtime_error("save_manifest_dataset: cannot write pixel file");
    for (const auto& e : d.examples) {
      for (double p : e.image.pixels) {
        const auto b = static_cast<unsigned char>(std::lround(clamp01(p) * 255.0));
        out.put(static_cast<char>(b));
      }
    }
  }
  if (d.has_labels) {
    std::ofstream out(dir / labels_name, std::ios::binary);
    if (!out) throw std::runtime_error("save_manifest_dataset: cannot write label file");
    for (const auto& e : d.examples) out.put(static_cast<char>(e.label));
  }
  std::ofstream out(manifest_path);
  if (!out) throw std::runtime_error("save_manifest_dataset: cannot write manifest");
  out << j.dump(2) << "\n";
}

inline Dataset load_manifest_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) {
    throw std::runtime_error("load_manifest_dataset: missing manifest file " +
                             manifest_path.string());
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("load_manifest_dataset: malformed manifest: ") + e.what());
  }
  for (const char* key : {"height", "width", "channels", "count", "num_classes", "pixels", "labels"}) {
    if (!j.contains(key)) {
      throw std::runtime_error(std::string("load_manifest_dataset: manifest missing key ") + key);
    }
  }
  const auto height = j.at("height").get<std::size_t>();
  const auto width = j.at("width").get<std::size_t>();
  const auto channels = j.at("channels").get<std::size_t>();
  const auto count = j.at("count").get<std::size_t>();
  const auto num_classes = j.at("num_classes").get<std::size_t>();
  if (height == 0 || width == 0 || (channels != 1 && channels != 3) || count == 0 ||
      num_classes == 0) {
    throw std::runtime_error("load_manifest_dataset: invalid dimensions in manifest");
  }

  const auto dir = manifest_path.parent_path();
  const auto pixels_path = dir / j.at("pixels").get<std::string>();
  std::ifstream pin(pixels_path, std::ios::binary);
  if (!pin) {
    throw std::runtime_error("load_manifest_dataset: missing pixel file " + pixels_path.string());
  }
  std::vector<char> bytes((std::istreambuf_iterator<char>(pin)), std::istreambuf_iterator<char>());
  const std::size_t expected = count * height * width * channels;
  if (bytes.size() != expected) {
    throw std::runtime_error("load_manifest_dataset: pixel file size " +
                             std::to_string(bytes.size()) + " does not match manifest record count (expected " +
                             std::to_string(expected) + " bytes)");
  }

  Dataset d;
  d.num_classes = num_classes;
  d.has_labels = !j.at("labels").is_null();
  std::vector<char> label_bytes;
  if (d.has_labels) {
    const auto labels_path = dir / j.at("labels").get<std::string>();
    std::ifstream lin(labels_path, std::ios::binary);
    if (!lin) {
      throw std::runtime_error("load_manifest_dataset: missing label file " + labels_path.string());
    }
    label_bytes.assign((std::istreambuf_iterator<char>(lin)), std::istreambuf_iterator<char>());
    if (label_bytes.size() != count) {
      throw std::runtime_error("load_manifest_dataset: label file size does not match record count");
    }
  }

  d.examples.reserve(count);
  std::size_t off = 0;
  for (std::size_t i = 0; i < count; ++i) {
    LabeledExample e;
    e.image = Image(height, width, channels);
    for (auto& p : e.image.pixels) {
      p = static_cast<double>(static_cast<unsigned char>(bytes[off++])) / 255.0;
    }
    if (d.has_labels) {
      e.label = static_cast<unsigned char>(label_bytes[i]);
      if (static_cast<std::size_t>(e.label) >= num_classes) {
        throw std::runtime_error("load_manifest_dataset: label " + std::to_string(e.label) +
                                 " out of range for " + std::to_string(num_classes) + " classes");
      }
    }
    d.examples.push_back(std::move(e));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Partitioning
// ---------------------------------------------------------------------------

enum class PartitionScheme { iid, dirichlet };

struct PartitionPlan {
  PartitionScheme scheme = PartitionScheme::iid;
  double beta = 1.0;  // Dirichlet concentration
  std::vector<std::size_t> client_sizes;

  void validate() const {
    if (client_sizes.empty()) throw std::invalid_argument("PartitionPlan: no clients");
    if (scheme == PartitionScheme::dirichlet && beta <= 0.0) {
      throw std::invalid_argument("PartitionPlan: beta must be positive");
    }
  }
};

namespace detail {

/// Integer targets summing to total, proportional to weights
/// (largest-remainder rounding).
inline std::vector<std::size_t> largest_remainder(const std::vector<double>& weights,
                                                  std::size_t total) {
  const std::size_t n = weights.size();
  std::vector<std::size_t> out(n, 0);
  std::vector<std::pair<double, std::size_t>> rema(n);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double exact = weights[i] * static_cast<double>(total);
    out[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += out[i];
    rema[i] = {exact - std::floor(exact), i};
  }
  std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t r = 0; assigned < total; ++r, ++assigned) out[rema[r % n].second] += 1;
  return out;
}

}  // namespace detail

/// Split a dataset into disjoint per-client datasets. iid draws uniformly
/// without replacement; dirichlet draws per-client class proportions from
/// Dirichlet(beta,...) and fills from per-class pools, spilling to the
/// largest remaining pool when a class runs dry.
inline std::vector<Dataset> partition(const Dataset& d, const PartitionPlan& plan, Rng rng) {
  plan.validate();
  std::size_t total = 0;
  for (auto s : plan.client_sizes) total += s;
  if (total > d.size()) {
    throw std::invalid_argument("partition: requested " + std::to_string(total) +
                                " examples from a dataset of " + std::to_string(d.size()));
  }

  std::vector<Dataset> out(plan.client_sizes.size());
  for (auto& c : out) {
    c.num_classes = d.num_classes;
    c.has_labels = d.has_labels;
  }

  if (plan.scheme == PartitionScheme::iid) {
    std::vector<std::size_t> idx(d.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < plan.client_sizes.size(); ++k) {
      for (std::size_t i = 0; i < plan.client_sizes[k]; ++i) {
        out[k].examples.push_back(d.examples[idx[cursor++]]);
      }
    }
    return out;
  }

  // dirichlet
  const std::size_t C = d.num_classes;
  std::vector<std::vector<std::size_t>> pools(C);
  for (std::size_t i = 0; i < d.size(); ++i) pools[static_cast<std::size_t>(d.label(i))].push_back(i);
  for (auto& pool : pools) rng.shuffle(pool);

  for (std::size_t k = 0; k < plan.client_sizes.size(); ++k) {
    const std::vector<double> props = rng.dirichlet(plan.beta, C);
    std::vector<std::size_t> want = detail::largest_remainder(props, plan.client_sizes[k]);
    std::size_t short_by = 0;
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t take = std::min(want[c], pools[c].size());
      short_by += want[c] - take;
      for (std::size_t i = 0; i < take; ++i) {
        out[k].examples.push_back(d.examples[pools[c].back()]);
        pools[c].pop_back();
      }
    }
    while (short_by > 0) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < C; ++c) {
        if (pools[c].size() > pools[best].size()) best = c;
      }
      if (pools[best].empty()) throw std::logic_error("partition: exhausted all pools");
      out[k].examples.push_back(d.examples[pools[best].back()]);
      pools[best].pop_back();
      --short_by;
    }
  }
  return out;
}

}  // namespace rahfl
