#pragma once

// Procedural toy datasets: a coloured object (disc or blob) with a
// class-specific hue range, texture and size on a neutral background, plus
// optional class-correlated confounds (vignette, scalebar, background tint).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ictd/rng.hpp"
#include "ictd/tensor.hpp"

namespace ictd::data {

enum class Texture { smooth, speckled, striped };
enum class ShapeKind { disc, blob };

struct ClassSpec {
  std::string name;
  double hue_lo = 0, hue_hi = 20;  // degrees; hue_hi may exceed 360 to wrap
  Texture texture = Texture::smooth;
  ShapeKind shape = ShapeKind::disc;
  double size_lo = 0.4, size_hi = 0.6;  // object diameter as a fraction of the image side
  double sat_lo = 0.72, sat_hi = 0.78;  // HSV saturation and value of the object colour
  double val_lo = 0.78, val_hi = 0.82;

  double hue_center() const { return std::fmod(0.5 * (hue_lo + hue_hi), 360.0); }
};

struct ArtifactSpec {
  std::vector<double> probability;  // per class; empty = never injected
  double intensity_lo = 0.5, intensity_hi = 0.8;
  double hue = 0;  // tint colour (background_tint only)

  double probability_for(int label) const {
    return probability.empty() ? 0.0 : probability[static_cast<std::size_t>(label)];
  }
};

struct ArtifactConfig {
  ArtifactSpec vignette;
  ArtifactSpec scalebar;
  ArtifactSpec background_tint;
};

struct DatasetConfig {
  std::vector<ClassSpec> classes;
  ArtifactConfig artifacts;
  std::vector<std::size_t> n_per_class;
  std::size_t image_size = 32;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;

  std::size_t n_classes() const { return classes.size(); }
  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : n_per_class) n += c;
    return n;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("dataset config: " + m); };
    if (classes.size() < 2) fail("at least two classes required");
    if (n_per_class.size() != classes.size()) fail("n_per_class must list one count per class");
    for (auto c : n_per_class)
      if (c == 0) fail("every class needs at least one image");
    if (image_size < 8) fail("image_size must be at least 8");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) fail("test_fraction must be in [0,1)");
    for (const auto& c : classes) {
      if (!(c.hue_lo <= c.hue_hi)) fail("class " + c.name + ": hue range reversed");
      if (!(c.size_lo > 0 && c.size_lo <= c.size_hi && c.size_hi <= 0.9))
        fail("class " + c.name + ": size range must satisfy 0 < lo <= hi <= 0.9");
      if (!(c.sat_lo >= 0 && c.sat_lo <= c.sat_hi && c.sat_hi <= 1 && c.val_lo >= 0 &&
            c.val_lo <= c.val_hi && c.val_hi <= 1))
        fail("class " + c.name + ": saturation/value ranges must lie in [0,1]");
    }
    for (const auto* a : {&artifacts.vignette, &artifacts.scalebar, &artifacts.background_tint}) {
      if (!a->probability.empty() && a->probability.size() != classes.size())
        fail("artifact probabilities must list one value per class");
      for (double p : a->probability)
        if (!(p >= 0.0 && p <= 1.0)) fail("artifact probabilities must be in [0,1]");
      if (!(a->intensity_lo >= 0.0 && a->intensity_lo <= a->intensity_hi && a->intensity_hi <= 1.0))
        fail("artifact intensity range must satisfy 0 <= lo <= hi <= 1");
    }
  }
};

/// Splits a total into per-class counts proportional to ratios (largest
/// remainder, ties to the lowest class).
inline std::vector<std::size_t> counts_from_ratio(std::size_t total, std::span<const double> ratios) {
  double sum = 0;
  for (double r : ratios) {
    if (!(r > 0)) throw std::invalid_argument("class ratios must be positive");
    sum += r;
  }
  std::vector<std::size_t> out(ratios.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    const double exact = static_cast<double>(total) * ratios[i] / sum;
    out[i] = static_cast<std::size_t>(std::floor(exact));
    used += out[i];
    rem.push_back({-(exact - std::floor(exact)), i});
  }
  std::sort(rem.begin(), rem.end());
  for (std::size_t k = 0; used < total; ++k, ++used) ++out[rem[k % rem.size()].second];
  return out;
}

enum class Split { train, test };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

struct ImageMeta {
  std::size_t id = 0;
  int label = 0;
  Split split = Split::train;
  bool vignette = false, scalebar = false, tint = false;
  float vignette_intensity = 0, scalebar_intensity = 0, tint_intensity = 0;
};

/// Images are stored contiguously as N x 3 x H x W floats in [-1, 1].
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::size_t image_size, std::size_t n_classes, std::vector<ImageMeta> meta,
          std::vector<float> pixels)
      : size_(image_size), k_(n_classes), meta_(std::move(meta)), px_(std::move(pixels)) {
    if (px_.size() != meta_.size() * image_numel())
      throw dimension_error("dataset: pixel buffer does not match image count");
  }

  std::size_t size() const { return meta_.size(); }
  std::size_t image_size() const { return size_; }
  std::size_t n_classes() const { return k_; }
  std::size_t image_numel() const { return 3 * size_ * size_; }
  const std::vector<ImageMeta>& meta() const { return meta_; }
  const ImageMeta& meta(std::size_t i) const { return meta_.at(i); }
  const std::vector<float>& pixels() const { return px_; }

  std::span<const float> pixels(std::size_t i) const {
    if (i >= size()) throw std::out_of_range("dataset: image index out of range");
    return {px_.data() + i * image_numel(), image_numel()};
  }

  Tensor image(std::size_t i) const {
    auto p = pixels(i);
    return Tensor({1, 3, size_, size_}, std::vector<float>(p.begin(), p.end()));
  }

  Tensor batch(std::span<const std::size_t> idx) const {
    std::vector<float> out;
    out.reserve(idx.size() * image_numel());
    for (auto i : idx) {
      auto p = pixels(i);
      out.insert(out.end(), p.begin(), p.end());
    }
    return Tensor({idx.size(), 3, size_, size_}, std::move(out));
  }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (const auto& m : meta_)
      if (m.split == s) out.push_back(m.id);
    return out;
  }

  std::vector<std::size_t> indices(Split s, int label) const {
    std::vector<std::size_t> out;
    for (const auto& m : meta_)
      if (m.split == s && m.label == label) out.push_back(m.id);
    return out;
  }

  std::vector<int> labels(std::span<const std::size_t> idx) const {
    std::vector<int> out;
    for (auto i : idx) out.push_back(meta_.at(i).label);
    return out;
  }

  std::vector<std::size_t> class_counts(Split s) const {
    std::vector<std::size_t> c(k_, 0);
    for (const auto& m : meta_)
      if (m.split == s) ++c[static_cast<std::size_t>(m.label)];
    return c;
  }

 private:
  std::size_t size_ = 0, k_ = 0;
  std::vector<ImageMeta> meta_;
  std::vector<float> px_;
};

namespace detail {

// Width in pixels of the anti-aliased ramp at object boundaries.
inline constexpr double kEdgeWidth = 2.5;

inline std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(h, 360.0);
  if (h < 0) h += 360.0;
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  double r = 0, g = 0, b = 0;
  if (hp < 1) r = c, g = x;
  else if (hp < 2) r = x, g = c;
  else if (hp < 3) g = c, b = x;
  else if (hp < 4) g = x, b = c;
  else if (hp < 5) r = x, b = c;
  else r = c, b = x;
  const double m = v - c;
  return {r + m, g + m, b + m};
}

// Returns (hue degrees, saturation) of an RGB triple in [0,1].
inline std::pair<double, double> rgb_to_hs(double r, double g, double b) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  if (mx <= 0 || d <= 0) return {0.0, 0.0};
  double h;
  if (mx == r) h = 60.0 * std::fmod((g - b) / d, 6.0);
  else if (mx == g) h = 60.0 * ((b - r) / d + 2.0);
  else h = 60.0 * ((r - g) / d + 4.0);
  if (h < 0) h += 360.0;
  return {h, d / mx};
}

inline void check_image(std::span<const float> img, std::size_t h, std::size_t w) {
  if (img.size() != 3 * h * w) throw dimension_error("image buffer must hold 3 x H x W values");
}

inline double luminance(std::span<const float> img, std::size_t hw, std::size_t p) {
  return (static_cast<double>(img[p]) + img[hw + p] + img[2 * hw + p]) / 3.0;
}

// Tick template along the bottom edge: three rows above the last one, one
// tick every four columns across the right half. Each tick is compared with
// the gap column two pixels to its right.
struct TickTemplate {
  std::vector<std::size_t> rows, cols;
};

inline TickTemplate tick_template(std::size_t h, std::size_t w) {
  TickTemplate t;
  for (std::size_t r = h - 4; r < h - 1; ++r) t.rows.push_back(r);
  for (std::size_t c = w / 2 + 1; c + 2 < w - 1; c += 4) t.cols.push_back(c);
  return t;
}

}  // namespace detail

/// Renders image `id` of class `spec`. The per-image generator is seeded
/// from (seed, id) only, so generation order does not matter.
inline std::vector<float> render_image(const ClassSpec& spec, int label, const ArtifactConfig& art,
                                       std::size_t size, std::uint64_t seed, std::size_t id,
                                       ImageMeta& meta) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(id)));
  const std::size_t H = size, W = size, HW = H * W;
  std::vector<double> rgb(3 * HW);  // working buffer in [0,1]

  // Background: near-neutral mid grey with faint noise.
  const double bg = rng.uniform(0.49, 0.51);
  const std::array<double, 3> bg_rgb{bg, bg * rng.uniform(0.98, 0.99), bg * rng.uniform(0.95, 0.97)};
  // Artifact draws happen in a fixed order regardless of which are enabled.
  meta.vignette = rng.bernoulli(art.vignette.probability_for(label));
  const double vig_i = rng.uniform(art.vignette.intensity_lo, art.vignette.intensity_hi);
  meta.scalebar = rng.bernoulli(art.scalebar.probability_for(label));
  const double bar_i = rng.uniform(art.scalebar.intensity_lo, art.scalebar.intensity_hi);
  meta.tint = rng.bernoulli(art.background_tint.probability_for(label));
  const double tint_i = rng.uniform(art.background_tint.intensity_lo, art.background_tint.intensity_hi);
  meta.vignette_intensity = meta.vignette ? static_cast<float>(vig_i) : 0.0f;
  meta.scalebar_intensity = meta.scalebar ? static_cast<float>(bar_i) : 0.0f;
  meta.tint_intensity = meta.tint ? static_cast<float>(tint_i) : 0.0f;

  std::array<double, 3> back = bg_rgb;
  if (meta.tint) {
    const auto t = detail::hsv_to_rgb(art.background_tint.hue, 0.5, bg);
    for (int c = 0; c < 3; ++c) back[c] = (1 - tint_i) * back[c] + tint_i * t[c];
  }
  for (std::size_t p = 0; p < HW; ++p) {
    const double n = rng.normal(0, 0.004);
    for (int c = 0; c < 3; ++c) rgb[c * HW + p] = back[c] + n;
  }

  // Object.
  const double radius = 0.5 * rng.uniform(spec.size_lo, spec.size_hi) * static_cast<double>(size);
  const double margin = radius + 1.0;
  const double bottom_limit = static_cast<double>(H) - 5.0 - radius * 1.2;
  const double cx = rng.uniform(std::min(margin, W * 0.5), std::max(W - margin, W * 0.5));
  double cy = rng.uniform(std::min(margin, H * 0.5), std::max(H - margin, H * 0.5));
  cy = std::min(cy, std::max(bottom_limit, radius * 0.8));
  const double hue = rng.uniform(spec.hue_lo, spec.hue_hi);
  const double sat = rng.uniform(spec.sat_lo, spec.sat_hi);
  const double val = rng.uniform(spec.val_lo, spec.val_hi);
  std::array<double, 3> wobble_amp{0, 0, 0}, wobble_phase{0, 0, 0};
  if (spec.shape == ShapeKind::blob) {
    for (int k = 0; k < 3; ++k) {
      wobble_amp[k] = rng.uniform(0.06, 0.16) / (k + 1);
      wobble_phase[k] = rng.uniform(0, 2 * std::numbers::pi);
    }
  }
  const double stripe_angle = rng.uniform(0, std::numbers::pi);
  const double stripe_period = rng.uniform(5.0, 7.0);
  std::array<std::array<double, 3>, 10> spots{};  // x, y, radius
  for (auto& sp : spots) {
    const double a = rng.uniform(0, 2 * std::numbers::pi), rr = radius * std::sqrt(rng.uniform()) * 0.85;
    sp = {cx + rr * std::cos(a), cy + rr * std::sin(a), rng.uniform(1.0, 2.0)};
  }
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double dist = std::hypot(dx, dy);
      double r_eff = radius;
      if (spec.shape == ShapeKind::blob) {
        const double th = std::atan2(dy, dx);
        double f = 1.0;
        for (int k = 0; k < 3; ++k) f += wobble_amp[k] * std::sin((k + 2) * th + wobble_phase[k]);
        r_eff *= f;
      }
      const double alpha = std::clamp((r_eff - dist) / detail::kEdgeWidth + 0.5, 0.0, 1.0);
      if (alpha <= 0) continue;
      double v = val * (1.0 - 0.15 * std::min(dist / radius, 1.0));
      switch (spec.texture) {
        case Texture::smooth:
          break;
        case Texture::speckled:
          for (const auto& sp : spots)
            if (std::hypot(x + 0.5 - sp[0], y + 0.5 - sp[1]) <= sp[2]) {
              v *= 0.8;
              break;
            }
          break;
        case Texture::striped: {
          const double u = dx * std::cos(stripe_angle) + dy * std::sin(stripe_angle);
          v *= 0.88 + 0.12 * std::sin(2 * std::numbers::pi * u / stripe_period);
          break;
        }
      }
      const auto col = detail::hsv_to_rgb(hue, sat, v);
      const std::size_t p = y * W + x;
      for (int c = 0; c < 3; ++c) rgb[c * HW + p] = (1 - alpha) * rgb[c * HW + p] + alpha * col[c];
    }
  }

  std::vector<float> out(3 * HW);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>(std::clamp(2.0 * rgb[i] - 1.0, -1.0, 1.0));

  if (meta.vignette) {
    // Darkens toward -1 with a radial ramp that starts at 35% of the half
    // diagonal.
    const double half_diag = 0.5 * std::hypot(static_cast<double>(H), static_cast<double>(W));
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const double d = std::hypot(x + 0.5 - 0.5 * W, y + 0.5 - 0.5 * H) / half_diag;
        const double f = std::pow(std::clamp((d - 0.35) / 0.65, 0.0, 1.0), 1.5);
        for (int c = 0; c < 3; ++c) {
          float& v = out[c * HW + y * W + x];
          v = static_cast<float>(v - vig_i * f * (v + 1.0));
        }
      }
    }
  }

  if (meta.scalebar) {
    const auto t = detail::tick_template(H, W);
    for (auto r : t.rows) {
      for (auto c : t.cols) {
        const std::size_t p = r * W + c;
        const double lum = detail::luminance(out, HW, p);
        const float v = static_cast<float>(lum < 0 ? bar_i : -bar_i);
        for (int ch = 0; ch < 3; ++ch) out[ch * HW + p] = v;
      }
    }
  }
  return out;
}

inline Dataset generate_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  const std::size_t K = cfg.n_classes(), N = cfg.total(), S = cfg.image_size;
  std::vector<ImageMeta> meta(N);
  std::vector<float> px(N * 3 * S * S);
  std::size_t id = 0;
  for (std::size_t k = 0; k < K; ++k) {
    // Stratified split: a seeded permutation of this class's images, the
    // first round(test_fraction * n) of which go to the test split.
    std::vector<std::size_t> order(cfg.n_per_class[k]);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng split_rng(derive_seed(derive_seed(cfg.seed, "split"), static_cast<std::uint64_t>(k)));
    std::shuffle(order.begin(), order.end(), split_rng.engine());
    const auto n_test = static_cast<std::size_t>(std::llround(cfg.test_fraction * order.size()));
    std::vector<bool> is_test(order.size(), false);
    for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;

    for (std::size_t i = 0; i < cfg.n_per_class[k]; ++i, ++id) {
      auto& m = meta[id];
      m.id = id;
      m.label = static_cast<int>(k);
      m.split = is_test[i] ? Split::test : Split::train;
      auto img = render_image(cfg.classes[k], m.label, cfg.artifacts, S, derive_seed(cfg.seed, "data"),
                              id, m);
      std::copy(img.begin(), img.end(), px.begin() + static_cast<std::ptrdiff_t>(id * img.size()));
    }
  }
  return Dataset(S, K, std::move(meta), std::move(px));
}

// ---- augmentation ----------------------------------------------------------

struct AugmentConfig {
  bool hflip = true;
  bool vflip = true;
  double brightness = 0.1;  // additive shift drawn from [-b, b]
  double contrast = 0.1;    // factor drawn from [1-c, 1+c] around the image mean
};

inline void hflip(std::span<float> img, std::size_t h, std::size_t w) {
  detail::check_image(img, h, w);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y) {
      float* row = img.data() + (c * h + y) * w;
      std::reverse(row, row + w);
    }
}

inline void vflip(std::span<float> img, std::size_t h, std::size_t w) {
  detail::check_image(img, h, w);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h / 2; ++y)
      std::swap_ranges(img.data() + (c * h + y) * w, img.data() + (c * h + y + 1) * w,
                       img.data() + (c * h + h - 1 - y) * w);
}

inline void adjust_brightness(std::span<float> img, double delta) {
  for (auto& v : img) v = static_cast<float>(std::clamp(v + delta, -1.0, 1.0));
}

inline void adjust_contrast(std::span<float> img, double factor) {
  double mean = 0;
  for (float v : img) mean += v;
  mean /= static_cast<double>(img.size());
  for (auto& v : img) v = static_cast<float>(std::clamp(mean + factor * (v - mean), -1.0, 1.0));
}

/// Label-preserving random transform; four draws are made in a fixed order
/// whatever the configuration.
inline std::vector<float> augment(std::span<const float> img, std::size_t h, std::size_t w, Rng& rng,
                                  const AugmentConfig& cfg) {
  detail::check_image(img, h, w);
  std::vector<float> out(img.begin(), img.end());
  const bool fh = rng.bernoulli(0.5), fv = rng.bernoulli(0.5);
  const double b = rng.uniform(-1.0, 1.0) * cfg.brightness;
  const double c = 1.0 + rng.uniform(-1.0, 1.0) * cfg.contrast;
  if (cfg.hflip && fh) hflip(out, h, w);
  if (cfg.vflip && fv) vflip(out, h, w);
  if (b != 0.0) adjust_brightness(out, b);
  if (c != 1.0) adjust_contrast(out, c);
  return out;
}

// ---- artifact metrics ------------------------------------------------------

/// Mean luminance of the central disc (radius H/4) minus that of the four
/// corner quarter-discs of the same radius.
inline double vignette_metric(std::span<const float> img, std::size_t h, std::size_t w) {
  detail::check_image(img, h, w);
  if (h < 8 || w < 8) throw std::invalid_argument("vignette_metric: image must be at least 8x8");
  const double R = 0.25 * static_cast<double>(h);
  const double corners[4][2] = {{0, 0}, {double(w), 0}, {0, double(h)}, {double(w), double(h)}};
  double cs = 0, es = 0;
  std::size_t cn = 0, en = 0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double lum = detail::luminance(img, h * w, y * w + x);
      if (std::hypot(px - 0.5 * w, py - 0.5 * h) <= R) {
        cs += lum;
        ++cn;
      }
      for (const auto& c : corners) {
        if (std::hypot(px - c[0], py - c[1]) <= R) {
          es += lum;
          ++en;
          break;
        }
      }
    }
  }
  return cs / static_cast<double>(cn) - es / static_cast<double>(en);
}

/// Mean absolute luminance contrast between the scalebar tick positions and
/// the gap pixels beside them.
inline double scalebar_metric(std::span<const float> img, std::size_t h, std::size_t w) {
  detail::check_image(img, h, w);
  if (h < 8 || w < 8) throw std::invalid_argument("scalebar_metric: image must be at least 8x8");
  const auto t = detail::tick_template(h, w);
  double s = 0;
  std::size_t n = 0;
  for (auto r : t.rows)
    for (auto c : t.cols) {
      s += std::abs(detail::luminance(img, h * w, r * w + c) - detail::luminance(img, h * w, r * w + c + 2));
      ++n;
    }
  return n ? s / static_cast<double>(n) : 0.0;
}

/// Circular mean hue of the saturated pixels, mapped to the class with the
/// nearest hue-range centre. Used as a sanity oracle on the toy task.
inline int hue_oracle(std::span<const float> img, std::size_t h, std::size_t w,
                      std::span<const ClassSpec> classes) {
  detail::check_image(img, h, w);
  const std::size_t hw = h * w;
  double sx = 0, sy = 0;
  for (std::size_t p = 0; p < hw; ++p) {
    const auto [hue, s] = detail::rgb_to_hs(0.5 * (img[p] + 1.0), 0.5 * (img[hw + p] + 1.0),
                                            0.5 * (img[2 * hw + p] + 1.0));
    if (s < 0.3) continue;
    const double a = hue * std::numbers::pi / 180.0;
    sx += std::cos(a);
    sy += std::sin(a);
  }
  const double mean_hue = std::atan2(sy, sx) * 180.0 / std::numbers::pi;
  int best = 0;
  double best_d = 1e9;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    double d = std::abs(std::fmod(mean_hue - classes[k].hue_center() + 720.0, 360.0));
    d = std::min(d, 360.0 - d);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

}  // namespace ictd::data
