#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ictd/nn.hpp"
#include "ictd/ops.hpp"
#include "ictd/rng.hpp"

namespace ictd::gan {

class config_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct GeneratorConfig {
  std::size_t image_size = 32;
  std::size_t base_channels = 32;
  std::size_t n_residual_blocks = 3;
  double dropout_rate = 0.5;
  bool use_dropout = true;
  // 1 for a CycleGAN generator; K >= 2 for a label-conditioned StarGAN one.
  std::size_t n_classes = 1;

  std::size_t input_channels() const { return 3 + (n_classes > 1 ? n_classes : 0); }

  void validate() const {
    if (image_size == 0 || image_size % 4 != 0)
      throw config_error("generator image_size must be a positive multiple of 4");
    if (n_residual_blocks < 1) throw config_error("generator needs at least one residual block");
    if (base_channels < 1) throw config_error("generator base_channels must be positive");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw config_error("dropout_rate must be in [0,1)");
    if (n_classes < 1) throw config_error("n_classes must be at least 1");
  }
};

struct DiscriminatorConfig {
  std::size_t image_size = 32;
  std::size_t base_channels = 32;
  std::size_t n_downsamples = 3;
  bool with_class_head = false;
  std::size_t n_classes = 2;

  std::size_t patch_size() const { return image_size >> n_downsamples; }

  void validate() const {
    if (n_downsamples < 1) throw config_error("discriminator needs at least one downsample");
    if (image_size == 0 || image_size % (std::size_t{1} << n_downsamples) != 0)
      throw config_error("discriminator image_size must be divisible by 2^n_downsamples");
    if (base_channels < 1) throw config_error("discriminator base_channels must be positive");
    if (with_class_head && n_classes < 2) throw config_error("class head needs n_classes >= 2");
  }
};

/// Appends K constant planes to an (N,3,H,W) batch, one-hot at each sample's
/// target label.
inline Tensor condition(Tape& tape, const Tensor& images, std::span<const int> labels,
                        std::size_t n_classes) {
  if (images.rank() != 4) throw dimension_error("condition: images must be NCHW");
  const std::size_t N = images.dim(0), H = images.dim(2), W = images.dim(3);
  if (labels.size() != N) throw dimension_error("condition: one label per image required");
  std::vector<float> planes(N * n_classes * H * W, 0.0f);
  for (std::size_t n = 0; n < N; ++n) {
    const int l = labels[n];
    if (l < 0 || static_cast<std::size_t>(l) >= n_classes)
      throw std::out_of_range("condition: label " + std::to_string(l) + " outside [0," +
                              std::to_string(n_classes) + ")");
    std::fill_n(planes.begin() + static_cast<std::ptrdiff_t>((n * n_classes + l) * H * W), H * W,
                1.0f);
  }
  return concat_channels(tape, images, Tensor({N, n_classes, H, W}, std::move(planes)));
}

inline Tensor condition(Tape& tape, const Tensor& images, int label, std::size_t n_classes) {
  std::vector<int> labels(images.rank() == 4 ? images.dim(0) : 0, label);
  return condition(tape, images, labels, n_classes);
}

/// Encoder -> residual blocks -> decoder with a tanh head. Convolutions that
/// feed an instance norm carry no bias.
class Generator {
 public:
  Generator() = default;

  Generator(const GeneratorConfig& cfg, std::uint64_t seed, const std::string& prefix = "")
      : cfg_(cfg) {
    cfg.validate();
    Rng rng(seed);
    const std::size_t b = cfg.base_channels;
    stem_ = conv_no_bias(prefix + "stem", cfg.input_channels(), b, 7, 1, 3, rng);
    stem_norm_ = InstanceNormLayer<float>(params_, prefix + "stem_norm", b);
    down1_ = conv_no_bias(prefix + "down1", b, 2 * b, 3, 2, 1, rng);
    down1_norm_ = InstanceNormLayer<float>(params_, prefix + "down1_norm", 2 * b);
    down2_ = conv_no_bias(prefix + "down2", 2 * b, 4 * b, 3, 2, 1, rng);
    down2_norm_ = InstanceNormLayer<float>(params_, prefix + "down2_norm", 4 * b);
    for (std::size_t i = 0; i < cfg.n_residual_blocks; ++i) {
      const std::string p = prefix + "res" + std::to_string(i);
      ResBlock r;
      r.conv1 = conv_no_bias(p + ".conv1", 4 * b, 4 * b, 3, 1, 1, rng);
      r.norm1 = InstanceNormLayer<float>(params_, p + ".norm1", 4 * b);
      r.conv2 = conv_no_bias(p + ".conv2", 4 * b, 4 * b, 3, 1, 1, rng);
      r.norm2 = InstanceNormLayer<float>(params_, p + ".norm2", 4 * b);
      res_.push_back(r);
    }
    up1_ = convt_no_bias(prefix + "up1", 4 * b, 2 * b, rng);
    up1_norm_ = InstanceNormLayer<float>(params_, prefix + "up1_norm", 2 * b);
    up2_ = convt_no_bias(prefix + "up2", 2 * b, b, rng);
    up2_norm_ = InstanceNormLayer<float>(params_, prefix + "up2_norm", b);
    head_ = Conv2dLayer<float>(params_, prefix + "head", b, 3, 7, 1, 3, rng);
  }

  const GeneratorConfig& config() const { return cfg_; }
  ParameterSet<float>& params() { return params_; }
  const ParameterSet<float>& params() const { return params_; }

  /// x must already carry the conditioning planes for a StarGAN generator.
  Tensor forward(Tape& tape, const Tensor& x, bool training, Rng* rng) const {
    if (x.rank() != 4 || x.dim(1) != cfg_.input_channels())
      throw dimension_error("generator expects " + std::to_string(cfg_.input_channels()) +
                            " input channels, got " + shape_str(x.shape()));
    Tensor h = relu(tape, stem_norm_(tape, stem_(tape, x)));
    h = relu(tape, down1_norm_(tape, down1_(tape, h)));
    h = relu(tape, down2_norm_(tape, down2_(tape, h)));
    const double rate = cfg_.use_dropout ? cfg_.dropout_rate : 0.0;
    for (const auto& r : res_) {
      Tensor y = relu(tape, r.norm1(tape, r.conv1(tape, h)));
      y = dropout(tape, y, rate, training, rng);
      y = r.norm2(tape, r.conv2(tape, y));
      h = add(tape, h, y);
    }
    h = relu(tape, up1_norm_(tape, up1_(tape, h)));
    h = relu(tape, up2_norm_(tape, up2_(tape, h)));
    return tanh(tape, head_(tape, h));
  }

  /// Label-conditioned translation (StarGAN generators only).
  Tensor forward(Tape& tape, const Tensor& images, std::span<const int> labels, bool training,
                 Rng* rng) const {
    if (cfg_.n_classes < 2) throw contract_error("generator is not label-conditioned");
    return forward(tape, condition(tape, images, labels, cfg_.n_classes), training, rng);
  }

 private:
  struct ResBlock {
    Conv2dLayer<float> conv1, conv2;
    InstanceNormLayer<float> norm1, norm2;
  };

  Conv2dLayer<float> conv_no_bias(const std::string& name, std::size_t cin, std::size_t cout,
                                  std::size_t k, std::size_t stride, std::size_t pad, Rng& rng) {
    Conv2dLayer<float> l;
    l.stride = stride;
    l.pad = pad;
    l.weight = params_.add(name + ".weight", normal_init<float>({cout, cin, k, k}, rng, kInitStd));
    return l;
  }

  ConvTranspose2dLayer<float> convt_no_bias(const std::string& name, std::size_t cin,
                                            std::size_t cout, Rng& rng) {
    ConvTranspose2dLayer<float> l;
    l.stride = 2;
    l.pad = 1;
    l.weight = params_.add(name + ".weight", normal_init<float>({cin, cout, 4, 4}, rng, kInitStd));
    return l;
  }

  GeneratorConfig cfg_;
  ParameterSet<float> params_;
  Conv2dLayer<float> stem_, down1_, down2_, head_;
  InstanceNormLayer<float> stem_norm_, down1_norm_, down2_norm_, up1_norm_, up2_norm_;
  std::vector<ResBlock> res_;
  ConvTranspose2dLayer<float> up1_, up2_;
};

struct DiscriminatorOutput {
  Tensor patch;   // (N,1,P,P) real/fake scores
  Tensor logits;  // (N,K) when the class head is present
};

/// PatchGAN discriminator with an optional domain-classification head.
class Discriminator {
 public:
  Discriminator() = default;

  Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed, const std::string& prefix = "")
      : cfg_(cfg) {
    cfg.validate();
    Rng rng(seed);
    std::size_t ch = cfg.base_channels;
    first_ = Conv2dLayer<float>(params_, prefix + "conv0", 3, ch, 4, 2, 1, rng);
    for (std::size_t i = 1; i < cfg.n_downsamples; ++i) {
      Stage s;
      s.conv.stride = 2;
      s.conv.pad = 1;
      s.conv.weight = params_.add(prefix + "conv" + std::to_string(i) + ".weight",
                                  normal_init<float>({2 * ch, ch, 4, 4}, rng, kInitStd));
      s.norm = InstanceNormLayer<float>(params_, prefix + "norm" + std::to_string(i), 2 * ch);
      stages_.push_back(s);
      ch *= 2;
    }
    patch_ = Conv2dLayer<float>(params_, prefix + "patch", ch, 1, 3, 1, 1, rng);
    if (cfg.with_class_head) {
      cls_ = Conv2dLayer<float>(params_, prefix + "cls", ch, cfg.n_classes, cfg.patch_size(), 1, 0,
                                rng);
    }
  }

  const DiscriminatorConfig& config() const { return cfg_; }
  ParameterSet<float>& params() { return params_; }
  const ParameterSet<float>& params() const { return params_; }

  DiscriminatorOutput forward(Tape& tape, const Tensor& images) const {
    if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != cfg_.image_size)
      throw dimension_error("discriminator expects (N,3," + std::to_string(cfg_.image_size) + "," +
                            std::to_string(cfg_.image_size) + "), got " + shape_str(images.shape()));
    Tensor h = leaky_relu(tape, first_(tape, images), 0.2f);
    for (const auto& s : stages_) h = leaky_relu(tape, s.norm(tape, s.conv(tape, h)), 0.2f);
    DiscriminatorOutput out;
    out.patch = patch_(tape, h);
    if (cfg_.with_class_head) {
      out.logits = reshape(tape, cls_(tape, h), Shape{images.dim(0), cfg_.n_classes});
    }
    return out;
  }

 private:
  struct Stage {
    Conv2dLayer<float> conv;
    InstanceNormLayer<float> norm;
  };

  DiscriminatorConfig cfg_;
  ParameterSet<float> params_;
  Conv2dLayer<float> first_, patch_, cls_;
  std::vector<Stage> stages_;
};

struct CycleGan {
  Generator g_ab;  // translates class A images into class B
  Generator g_ba;
  Discriminator d_a;
  Discriminator d_b;
};

struct StarGan {
  Generator g;
  Discriminator d;
};

inline CycleGan build_cyclegan(GeneratorConfig gcfg, DiscriminatorConfig dcfg, std::uint64_t seed) {
  if (gcfg.n_classes != 1) throw config_error("CycleGAN generators are unconditioned (n_classes = 1)");
  dcfg.with_class_head = false;
  return CycleGan{Generator(gcfg, derive_seed(seed, "g_ab"), "g_ab."),
                  Generator(gcfg, derive_seed(seed, "g_ba"), "g_ba."),
                  Discriminator(dcfg, derive_seed(seed, "d_a"), "d_a."),
                  Discriminator(dcfg, derive_seed(seed, "d_b"), "d_b.")};
}

inline StarGan build_stargan(GeneratorConfig gcfg, DiscriminatorConfig dcfg, std::uint64_t seed) {
  if (gcfg.n_classes < 2) throw config_error("StarGAN needs n_classes >= 2");
  dcfg.with_class_head = true;
  dcfg.n_classes = gcfg.n_classes;
  return StarGan{Generator(gcfg, derive_seed(seed, "g"), "g."),
                 Discriminator(dcfg, derive_seed(seed, "d"), "d.")};
}

}  // namespace ictd::gan
