#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <string>

#include "ictd/ops.hpp"

namespace ictd::gan {

struct LossWeights {
  double lambda_adv = 1.0;
  double lambda_identity = 5.0;
  double lambda_cycle = 10.0;
  double lambda_cls = 1.0;
  Reduction reduction = Reduction::sum;

  void validate() const {
    if (lambda_adv < 0 || lambda_identity < 0 || lambda_cycle < 0 || lambda_cls < 0)
      throw std::invalid_argument("loss weights must be non-negative");
  }

  // Reference CycleGAN defaults: lambda_I = 5, lambda_cycle = 10, summed L1.
  static LossWeights cyclegan_defaults() { return {1.0, 5.0, 10.0, 1.0, Reduction::sum}; }
  // StarGAN with an identity term: lambda_I = 0.001, reconstruction 10,
  // classification 1, mean L1.
  static LossWeights stargan_defaults() { return {1.0, 0.001, 10.0, 1.0, Reduction::mean}; }
};

enum class Target { fake = 0, real = 1 };

/// Least-squares adversarial loss: mean((score - target)^2).
inline Tensor adversarial_loss(Tape& tape, const Tensor& patch_scores, Target target) {
  const float t = target == Target::real ? 1.0f : 0.0f;
  return mean(tape, square(tape, add_scalar(tape, patch_scores, -t)));
}

namespace detail {

inline Tensor weighted_l1(Tape& tape, const Tensor& a, const Tensor& b, double lambda,
                          Reduction reduction, const char* what) {
  if (a.shape() != b.shape())
    throw dimension_error(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  return scalar_mul(tape, reduce(tape, abs(tape, sub(tape, a, b)), reduction),
                    static_cast<float>(lambda));
}

}  // namespace detail

/// lambda_I * reduce(|x - G(x, own class)|).
inline Tensor identity_loss(Tape& tape, const Tensor& x, const Tensor& g_own_x,
                            const LossWeights& w) {
  return detail::weighted_l1(tape, x, g_own_x, w.lambda_identity, w.reduction, "identity_loss");
}

/// lambda_cycle * reduce(|x - reconstruction|). The reconstruction is built
/// lazily: with lambda_cycle == 0 it is never computed and the loss is an
/// exact constant zero.
inline Tensor cycle_loss(Tape& tape, const Tensor& x, const std::function<Tensor()>& reconstruct,
                         const LossWeights& w) {
  if (w.lambda_cycle == 0.0) return Tensor::scalar(0.0f);
  return detail::weighted_l1(tape, x, reconstruct(), w.lambda_cycle, w.reduction, "cycle_loss");
}

inline Tensor cycle_loss(Tape& tape, const Tensor& x, const Tensor& reconstructed,
                         const LossWeights& w) {
  return cycle_loss(tape, x, [&] { return reconstructed; }, w);
}

/// Softmax cross-entropy of the discriminator's class logits.
inline Tensor classification_loss(Tape& tape, const Tensor& logits, std::span<const int> labels) {
  return softmax_cross_entropy(tape, logits, labels);
}

}  // namespace ictd::gan
