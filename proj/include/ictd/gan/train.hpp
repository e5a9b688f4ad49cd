#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "ictd/adam.hpp"
#include "ictd/gan/losses.hpp"
#include "ictd/gan/models.hpp"

namespace ictd::gan {

/// Named loss components of one training iteration (ordered by key).
using LossRecord = std::map<std::string, double>;

struct OptimizerPair {
  AdamState<float> generator;
  AdamState<float> discriminator;

  OptimizerPair() = default;
  explicit OptimizerPair(AdamHyper h) : generator(h), discriminator(h) {}
};

namespace detail {

inline std::vector<Tensor> concat_params(std::initializer_list<ParameterSet<float>*> sets) {
  std::vector<Tensor> out;
  for (auto* s : sets)
    for (auto& t : s->tensors()) out.push_back(t);
  return out;
}

inline void step(std::vector<Tensor> params, AdamState<float>& st) {
  adam_step(std::span<Tensor>(params), st);
  for (auto& p : params) p.zero_grad();
}

inline Tensor accumulate(Tape& tape, Tensor total, const Tensor& term, double weight) {
  if (weight == 0.0) return total;
  Tensor t = weight == 1.0 ? term : scalar_mul(tape, term, static_cast<float>(weight));
  return total.defined() ? add(tape, total, t) : t;
}

inline double value(const Tensor& t) { return t.defined() ? static_cast<double>(t.item()) : 0.0; }

// RAII freeze of a network's weights so that gradients only flow through it.
class Frozen {
 public:
  explicit Frozen(std::initializer_list<ParameterSet<float>*> sets) : sets_(sets) {
    for (auto* s : sets_) s->set_requires_grad(false);
  }
  ~Frozen() {
    for (auto* s : sets_) s->set_requires_grad(true);
  }
  Frozen(const Frozen&) = delete;
  Frozen& operator=(const Frozen&) = delete;

 private:
  std::vector<ParameterSet<float>*> sets_;
};

}  // namespace detail

/// One CycleGAN iteration: a joint update of both generators followed by an
/// update of both discriminators on the (detached) fakes just produced.
inline LossRecord train_step_cyclegan(const Tensor& batch_a, const Tensor& batch_b, CycleGan& m,
                                      OptimizerPair& opt, const LossWeights& w, Rng& rng) {
  w.validate();
  if (batch_a.shape() != batch_b.shape())
    throw dimension_error("train_step_cyclegan: batches must have equal shape");
  LossRecord rec;
  Tensor fake_a, fake_b;
  {
    Tape tape;
    detail::Frozen freeze{&m.d_a.params(), &m.d_b.params()};
    fake_b = m.g_ab.forward(tape, batch_a, true, &rng);
    fake_a = m.g_ba.forward(tape, batch_b, true, &rng);
    Tensor total;
    if (w.lambda_adv > 0) {
      Tensor adv_ab = adversarial_loss(tape, m.d_b.forward(tape, fake_b).patch, Target::real);
      Tensor adv_ba = adversarial_loss(tape, m.d_a.forward(tape, fake_a).patch, Target::real);
      rec["g_adv_ab"] = detail::value(adv_ab);
      rec["g_adv_ba"] = detail::value(adv_ba);
      total = detail::accumulate(tape, total, adv_ab, w.lambda_adv);
      total = detail::accumulate(tape, total, adv_ba, w.lambda_adv);
    } else {
      rec["g_adv_ab"] = 0.0;
      rec["g_adv_ba"] = 0.0;
    }
    double id_value = 0.0;
    if (w.lambda_identity > 0) {
      Tensor id_b = identity_loss(tape, batch_b, m.g_ab.forward(tape, batch_b, true, &rng), w);
      Tensor id_a = identity_loss(tape, batch_a, m.g_ba.forward(tape, batch_a, true, &rng), w);
      id_value = detail::value(id_a) + detail::value(id_b);
      total = detail::accumulate(tape, total, id_a, 1.0);
      total = detail::accumulate(tape, total, id_b, 1.0);
    }
    rec["identity"] = id_value;
    double cyc_value = 0.0;
    if (w.lambda_cycle > 0) {
      Tensor cyc_a = cycle_loss(tape, batch_a, [&] { return m.g_ba.forward(tape, fake_b, true, &rng); }, w);
      Tensor cyc_b = cycle_loss(tape, batch_b, [&] { return m.g_ab.forward(tape, fake_a, true, &rng); }, w);
      cyc_value = detail::value(cyc_a) + detail::value(cyc_b);
      total = detail::accumulate(tape, total, cyc_a, 1.0);
      total = detail::accumulate(tape, total, cyc_b, 1.0);
    }
    rec["cycle"] = cyc_value;
    rec["g_total"] = detail::value(total);
    if (total.defined() && total.requires_grad()) {
      backward(total, tape);
      detail::step(detail::concat_params({&m.g_ab.params(), &m.g_ba.params()}), opt.generator);
    } else {
      detail::step(detail::concat_params({&m.g_ab.params(), &m.g_ba.params()}), opt.generator);
    }
  }
  {
    Tape tape;
    const Tensor fa = fake_a.detach(), fb = fake_b.detach();
    Tensor d_a = scalar_mul(tape,
                            add(tape, adversarial_loss(tape, m.d_a.forward(tape, batch_a).patch, Target::real),
                                adversarial_loss(tape, m.d_a.forward(tape, fa).patch, Target::fake)),
                            0.5f);
    Tensor d_b = scalar_mul(tape,
                            add(tape, adversarial_loss(tape, m.d_b.forward(tape, batch_b).patch, Target::real),
                                adversarial_loss(tape, m.d_b.forward(tape, fb).patch, Target::fake)),
                            0.5f);
    rec["d_a"] = detail::value(d_a);
    rec["d_b"] = detail::value(d_b);
    backward(add(tape, d_a, d_b), tape);
    detail::step(detail::concat_params({&m.d_a.params(), &m.d_b.params()}), opt.discriminator);
  }
  return rec;
}

/// One StarGAN iteration: discriminator step (adversarial + classification on
/// real images) then generator step (adversarial + classification on fakes,
/// reconstruction, identity with the image's own label).
inline LossRecord train_step_stargan(const Tensor& batch, std::span<const int> true_labels,
                                     std::span<const int> target_labels, StarGan& m,
                                     OptimizerPair& opt, const LossWeights& w, Rng& rng) {
  w.validate();
  LossRecord rec;
  Tape gtape;
  // The fake is produced once on the generator tape; the discriminator step
  // consumes a detached copy, and the generator step reuses the graph (the
  // generator's weights do not change in between).
  Tensor fake = m.g.forward(gtape, batch, target_labels, true, &rng);
  {
    Tape tape;
    auto real_out = m.d.forward(tape, batch);
    auto fake_out = m.d.forward(tape, fake.detach());
    Tensor d_adv = add(tape, adversarial_loss(tape, real_out.patch, Target::real),
                       adversarial_loss(tape, fake_out.patch, Target::fake));
    Tensor d_cls = classification_loss(tape, real_out.logits, true_labels);
    rec["d_adv"] = detail::value(d_adv);
    rec["d_cls"] = detail::value(d_cls);
    Tensor total = detail::accumulate(tape, Tensor(), d_adv, 1.0);
    total = detail::accumulate(tape, total, d_cls, w.lambda_cls);
    backward(total, tape);
    detail::step(detail::concat_params({&m.d.params()}), opt.discriminator);
  }
  {
    detail::Frozen freeze{&m.d.params()};
    auto out = m.d.forward(gtape, fake);
    Tensor g_adv = adversarial_loss(gtape, out.patch, Target::real);
    Tensor g_cls = classification_loss(gtape, out.logits, target_labels);
    Tensor g_cyc = cycle_loss(gtape, batch, [&] { return m.g.forward(gtape, fake, true_labels, true, &rng); }, w);
    Tensor g_id;
    if (w.lambda_identity > 0) {
      g_id = identity_loss(gtape, batch, m.g.forward(gtape, batch, true_labels, true, &rng), w);
    }
    rec["g_adv"] = detail::value(g_adv);
    rec["g_cls"] = detail::value(g_cls);
    rec["g_cyc"] = detail::value(g_cyc);
    rec["g_id"] = detail::value(g_id);
    Tensor total = detail::accumulate(gtape, Tensor(), g_adv, w.lambda_adv);
    total = detail::accumulate(gtape, total, g_cls, w.lambda_cls);
    if (g_cyc.requires_grad()) total = detail::accumulate(gtape, total, g_cyc, 1.0);
    if (g_id.defined()) total = detail::accumulate(gtape, total, g_id, 1.0);
    if (total.defined() && total.requires_grad()) backward(total, gtape);
    detail::step(detail::concat_params({&m.g.params()}), opt.generator);
  }
  return rec;
}

}  // namespace ictd::gan
