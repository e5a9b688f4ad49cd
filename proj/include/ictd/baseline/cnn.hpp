#pragma once

// Small end-to-end softmax CNN used as the comparison baseline: stride-2
// conv blocks with instance norm and relu, global average pool, linear head.

#include <algorithm>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ictd/adam.hpp"
#include "ictd/classify/classifiers.hpp"
#include "ictd/data/synth.hpp"
#include "ictd/io/container.hpp"
#include "ictd/nn.hpp"

namespace ictd::baseline {

using classify::Imbalance;

struct BaselineConfig {
  std::size_t image_size = 32;
  std::size_t n_classes = 2;
  std::vector<std::size_t> channels{16, 32, 64};
  std::size_t epochs = 60;
  std::size_t patience = 20;
  double val_fraction = 0.1;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  Imbalance imbalance = Imbalance::class_weights;
  bool augment = true;
  data::AugmentConfig augment_config;

  void validate() const {
    if (n_classes < 2) throw std::invalid_argument("baseline: need at least two classes");
    if (channels.empty()) throw std::invalid_argument("baseline: need at least one conv block");
    if (image_size >> channels.size() == 0) throw std::invalid_argument("baseline: too many stride-2 blocks");
    if (epochs == 0 || batch_size == 0) throw std::invalid_argument("baseline: epochs and batch_size must be positive");
    if (!(val_fraction > 0 && val_fraction < 1)) throw std::invalid_argument("baseline: val_fraction must be in (0,1)");
  }

  std::string fingerprint() const {
    std::string s = "baseline:image_size=" + std::to_string(image_size) + ";k=" + std::to_string(n_classes) + ";channels=";
    for (auto c : channels) s += std::to_string(c) + ",";
    return s;
  }
};

class BaselineCnn {
 public:
  BaselineCnn(const BaselineConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    Rng rng(seed);
    std::size_t cin = 3;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
      const std::string n = "block" + std::to_string(i);
      convs_.emplace_back(ps_, n + ".conv", cin, cfg.channels[i], 3, 2, 1, rng);
      norms_.emplace_back(ps_, n + ".norm", cfg.channels[i]);
      cin = cfg.channels[i];
    }
    head_ = LinearLayer<float>(ps_, "head", cin, cfg.n_classes, rng, kInitStd);
  }

  /// (N,3,H,W) -> (N,K) logits.
  Tensor forward(Tape& tape, const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != cfg_.image_size || x.dim(3) != cfg_.image_size)
      throw dimension_error("baseline: expected (N,3," + std::to_string(cfg_.image_size) + "," +
                            std::to_string(cfg_.image_size) + "), got " + shape_str(x.shape()));
    Tensor h = x;
    for (std::size_t i = 0; i < convs_.size(); ++i) h = relu(tape, norms_[i](tape, convs_[i](tape, h)));
    return head_(tape, spatial_mean(tape, h));
  }

  ParameterSet<float>& params() { return ps_; }
  const ParameterSet<float>& params() const { return ps_; }
  const BaselineConfig& config() const { return cfg_; }

 private:
  BaselineConfig cfg_;
  ParameterSet<float> ps_;
  std::vector<Conv2dLayer<float>> convs_;
  std::vector<InstanceNormLayer<float>> norms_;
  LinearLayer<float> head_;
};

/// N x K softmax probabilities, row-major.
inline std::vector<double> predict_proba(const BaselineCnn& m, const Tensor& images) {
  auto tape = Tape::inference();
  const Tensor logits = m.forward(tape, images);
  auto p = softmax_rows<float>(logits.data(), logits.dim(0), logits.dim(1));
  return {p.begin(), p.end()};
}

inline std::vector<int> argmax_rows(std::span<const double> p, std::size_t k) {
  std::vector<int> out;
  for (std::size_t i = 0; i * k < p.size(); ++i) {
    auto row = p.subspan(i * k, k);
    out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

struct EpochLog {
  std::size_t epoch;
  double train_loss, val_loss, val_accuracy;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  std::size_t stopped_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

inline std::string log_csv(const TrainResult& r) {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss,val_accuracy\n";
  char buf[128];
  for (const auto& e : r.log) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g\n", e.epoch, e.train_loss, e.val_loss, e.val_accuracy);
    os << buf;
  }
  return os.str();
}

/// Stratified split of `indices` into (train, validation): each class keeps
/// round(fraction * n) images for validation, at least one when it has two.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_holdout(
    const data::Dataset& ds, std::span<const std::size_t> indices, double fraction, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(ds.n_classes());
  for (auto i : indices) by_class.at(static_cast<std::size_t>(ds.meta(i).label)).push_back(i);
  std::vector<std::size_t> train, val;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& v = by_class[c];
    Rng rng(derive_seed(seed, c));
    std::shuffle(v.begin(), v.end(), rng.engine());
    std::size_t n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(v.size())));
    if (n_val == 0 && v.size() >= 2) n_val = 1;
    val.insert(val.end(), v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n_val));
    train.insert(train.end(), v.begin() + static_cast<std::ptrdiff_t>(n_val), v.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

namespace detail {

// Constant weights cancel in the normalized weighted mean; dropping them keeps
// balanced weighted training bit-identical to unweighted training.
inline std::vector<float> effective_weights(const std::vector<double>& cw) {
  if (std::adjacent_find(cw.begin(), cw.end(), std::not_equal_to<>()) == cw.end()) return {};
  return {cw.begin(), cw.end()};
}

inline std::vector<float> sample_weights(const std::vector<float>& cw, std::span<const int> labels) {
  if (cw.empty()) return {};
  std::vector<float> w;
  for (int l : labels) w.push_back(cw[static_cast<std::size_t>(l)]);
  return w;
}

inline std::pair<double, double> evaluate_loss(const BaselineCnn& m, const data::Dataset& ds,
                                               std::span<const std::size_t> idx, const std::vector<float>& cw) {
  auto tape = Tape::inference();
  const Tensor logits = m.forward(tape, ds.batch(idx));
  const auto labels = ds.labels(idx);
  const auto w = sample_weights(cw, labels);
  const double loss = softmax_cross_entropy<float>(tape, logits, labels, w).item();
  std::size_t correct = 0;
  const std::size_t k = logits.dim(1);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const float* z = logits.data().data() + i * k;
    if (std::max_element(z, z + k) - z == labels[i]) ++correct;
  }
  return {loss, static_cast<double>(correct) / static_cast<double>(idx.size())};
}

inline std::vector<std::vector<float>> snapshot(const ParameterSet<float>& ps) {
  std::vector<std::vector<float>> out;
  for (const auto& t : ps.tensors()) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

inline void restore(ParameterSet<float>& ps, const std::vector<std::vector<float>>& s) {
  for (std::size_t i = 0; i < s.size(); ++i) std::copy(s[i].begin(), s[i].end(), ps.tensors()[i].mutable_data().begin());
}

}  // namespace detail

/// Mini-batch Adam on weighted cross-entropy with augmentation. Stops once the
/// validation loss has not improved for more than `patience` epochs and
/// restores the parameters of the best validation epoch.
inline TrainResult train_baseline(BaselineCnn& m, const data::Dataset& ds, std::span<const std::size_t> train,
                                  std::span<const std::size_t> val, std::uint64_t seed) {
  const auto& cfg = m.config();
  if (train.empty() || val.empty()) throw std::invalid_argument("baseline: empty training or validation split");
  if (ds.n_classes() != cfg.n_classes || ds.image_size() != cfg.image_size)
    throw dimension_error("baseline: dataset does not match model geometry");

  std::vector<std::size_t> counts(cfg.n_classes, 0);
  for (auto i : train) ++counts[static_cast<std::size_t>(ds.meta(i).label)];
  std::vector<float> cw;
  if (cfg.imbalance == Imbalance::class_weights) {
    for (auto c : counts)
      if (c == 0) throw std::invalid_argument("baseline: a class has no training images");
    cw = detail::effective_weights(classify::class_weights(counts));
  }
  const auto train_labels = ds.labels(train);
  std::optional<classify::WeightedSampler> sampler;
  if (cfg.imbalance == Imbalance::sample_weights) sampler.emplace(train_labels, cfg.n_classes);

  AdamState<float> opt(AdamHyper{cfg.learning_rate, 0.9, 0.999, 1e-8});
  TrainResult result;
  std::vector<std::vector<float>> best = detail::snapshot(m.params());
  std::size_t since_best = 0;
  const std::size_t hw = cfg.image_size, numel = ds.image_numel();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(derive_seed(seed, epoch));
    std::vector<std::size_t> order(train.size());
    if (sampler) {
      for (auto& o : order) o = sampler->next(rng);
    } else {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::shuffle(order.begin(), order.end(), rng.engine());
    }
    double loss_sum = 0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      std::vector<float> px;
      px.reserve(n * numel);
      std::vector<int> labels;
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t idx = train[order[start + j]];
        auto img = ds.pixels(idx);
        if (cfg.augment) {
          auto a = data::augment(img, hw, hw, rng, cfg.augment_config);
          px.insert(px.end(), a.begin(), a.end());
        } else {
          px.insert(px.end(), img.begin(), img.end());
        }
        labels.push_back(ds.meta(idx).label);
      }
      Tape tape;
      const auto w = detail::sample_weights(cw, labels);
      Tensor loss = softmax_cross_entropy<float>(tape, m.forward(tape, Tensor({n, 3, hw, hw}, std::move(px))), labels, w);
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(n);
      seen += n;
      backward(loss, tape);
      adam_step(m.params().tensors(), opt);
      m.params().zero_grad();
    }
    const auto [val_loss, val_acc] = detail::evaluate_loss(m, ds, val, cw);
    result.log.push_back({epoch, loss_sum / static_cast<double>(seen), val_loss, val_acc});
    result.stopped_epoch = epoch;
    if (val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      result.best_epoch = epoch;
      best = detail::snapshot(m.params());
      since_best = 0;
    } else if (++since_best > cfg.patience) {
      break;
    }
  }
  detail::restore(m.params(), best);
  return result;
}

inline io::Container to_container(const BaselineCnn& m) {
  io::Container c;
  c.fingerprint = m.config().fingerprint();
  const auto& ps = m.params();
  for (std::size_t i = 0; i < ps.size(); ++i) c.add(ps.names()[i], ps.tensors()[i]);
  return c;
}

inline void load_parameters(BaselineCnn& m, const io::Container& c) {
  if (c.fingerprint != m.config().fingerprint())
    throw io::format_error("baseline checkpoint does not match the model architecture");
  auto& ps = m.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& t = c.get(ps.names()[i]);
    if (t.shape != ps.tensors()[i].shape()) throw io::format_error("baseline checkpoint: shape mismatch for " + t.name);
    std::copy(t.data.begin(), t.data.end(), ps.tensors()[i].mutable_data().begin());
  }
}

}  // namespace ictd::baseline
