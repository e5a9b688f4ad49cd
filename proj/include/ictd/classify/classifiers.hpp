#pragma once

// Classifiers on translation-distance feature vectors and the
// class-imbalance helpers (class weights, class-balanced sampling).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ictd/adam.hpp"
#include "ictd/io/container.hpp"
#include "ictd/nn.hpp"
#include "ictd/ops.hpp"
#include "ictd/rng.hpp"

namespace ictd::classify {

using Matrix = std::vector<std::vector<double>>;  // rows = samples

/// Index of the smallest value; ties go to the lowest index.
inline int argmin_classify(std::span<const double> row) {
  if (row.size() < 2) throw std::invalid_argument("argmin_classify: need at least two distances");
  int best = 0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (std::isnan(row[i])) throw std::invalid_argument("argmin_classify: NaN distance");
    if (row[i] < row[best]) best = static_cast<int>(i);
  }
  return best;
}

/// w_i = (1 / c_i) * (sum_j c_j / 2).
inline std::vector<double> class_weights(std::span<const std::size_t> counts) {
  double total = 0;
  for (auto c : counts) {
    if (c == 0) throw std::invalid_argument("class_weights: zero count");
    total += static_cast<double>(c);
  }
  std::vector<double> w;
  for (auto c : counts) w.push_back(total / 2.0 / static_cast<double>(c));
  return w;
}

/// Sampling with replacement where each image has weight 1/(size of its
/// class): every present class is equally likely. Implemented in two stages
/// (class, then image within the class), which has the same distribution.
class WeightedSampler {
 public:
  WeightedSampler(std::span<const int> labels, std::size_t k) : by_class_(k) {
    if (labels.empty()) throw std::invalid_argument("weighted_sampler: empty dataset");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
        throw std::out_of_range("weighted_sampler: label out of range");
      by_class_[labels[i]].push_back(i);
    }
    for (std::size_t c = 0; c < k; ++c)
      if (!by_class_[c].empty()) present_.push_back(c);
  }

  /// Images laid out class by class: counts[0] of class 0, then class 1, ...
  static WeightedSampler from_counts(std::span<const std::size_t> counts) {
    std::vector<int> labels;
    for (std::size_t c = 0; c < counts.size(); ++c) {
      if (counts[c] == 0) throw std::invalid_argument("weighted_sampler: counts must be positive");
      labels.insert(labels.end(), counts[c], static_cast<int>(c));
    }
    return WeightedSampler(labels, counts.size());
  }

  std::size_t next(Rng& rng) const {
    const auto& members = by_class_[present_[rng.index(present_.size())]];
    return members[rng.index(members.size())];
  }

 private:
  std::vector<std::vector<std::size_t>> by_class_;
  std::vector<std::size_t> present_;
};

/// Per-column z-scoring with training statistics; constant columns keep a
/// unit scale.
struct Standardizer {
  std::vector<double> mean, scale;

  static Standardizer fit(const Matrix& x) {
    Standardizer s;
    const std::size_t d = x.empty() ? 0 : x[0].size();
    s.mean.assign(d, 0.0);
    s.scale.assign(d, 1.0);
    for (std::size_t j = 0; j < d; ++j) {
      double m = 0;
      for (const auto& r : x) m += r[j];
      m /= static_cast<double>(x.size());
      double v = 0;
      for (const auto& r : x) v += (r[j] - m) * (r[j] - m);
      v /= static_cast<double>(x.size());
      s.mean[j] = m;
      s.scale[j] = v > 1e-24 ? std::sqrt(v) : 1.0;
    }
    return s;
  }

  std::vector<double> apply(std::span<const double> row) const {
    std::vector<double> out(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) out[j] = (row[j] - mean[j]) / scale[j];
    return out;
  }

  Matrix apply(const Matrix& x) const {
    Matrix out;
    for (const auto& r : x) out.push_back(apply(r));
    return out;
  }
};

/// How class imbalance is countered: not at all, by sampling each class
/// equally often, or by weighting each sample's loss by its class weight.
enum class Imbalance { none, sample_weights, class_weights };

enum class Kind { argmin, linear_svm, logistic, mlp };

inline const char* to_string(Kind k) {
  switch (k) {
    case Kind::argmin: return "argmin";
    case Kind::linear_svm: return "linear_svm";
    case Kind::logistic: return "logistic";
    case Kind::mlp: return "mlp";
  }
  return "?";
}

inline Kind kind_from_string(const std::string& s) {
  for (Kind k : {Kind::argmin, Kind::linear_svm, Kind::logistic, Kind::mlp})
    if (s == to_string(k)) return k;
  throw std::invalid_argument("unknown classifier kind '" + s + "'");
}

struct ClassifierModel {
  Kind kind = Kind::argmin;
  std::size_t n_classes = 0;
  std::size_t n_features = 0;
  std::vector<double> class_weights;
  Standardizer standardizer;
  // Linear models: w (K x D), b (K). MLP: w1 (H x D), b1 (H), w2 (K x H), b2 (K).
  Matrix w, w2;
  std::vector<double> b, b2;
};

struct Prediction {
  std::vector<int> labels;
  Matrix scores;                     // per class, higher = more likely
  Matrix proba;                      // softmax models only
  std::vector<double> binary_score;  // K == 2: higher = class 1
};

struct FitOptions {
  double c = 1.0;                // SVM regularization: strength 1/C
  std::size_t iterations = 2000;
  std::size_t hidden = 16;       // MLP width
  double learning_rate = 0.5;    // logistic gradient descent step
  double mlp_learning_rate = 0.01;
  std::uint64_t seed = 0;
};

namespace detail {

inline void check_training_set(const Matrix& x, std::span<const int> y, std::size_t k,
                               std::span<const double> cw) {
  if (x.size() != y.size()) throw dimension_error("fit: features and labels differ in length");
  if (x.size() < k) throw std::invalid_argument("fit: fewer samples than classes");
  const std::size_t d = x[0].size();
  for (const auto& r : x) {
    if (r.size() != d) throw dimension_error("fit: ragged feature matrix");
    for (double v : r)
      if (!std::isfinite(v)) throw std::invalid_argument("fit: non-finite feature");
  }
  std::vector<bool> seen(k, false);
  for (int l : y) {
    if (l < 0 || static_cast<std::size_t>(l) >= k) throw std::out_of_range("fit: label out of range");
    seen[l] = true;
  }
  if (std::count(seen.begin(), seen.end(), true) < 2)
    throw std::invalid_argument("fit: labels contain a single class");
  if (!cw.empty() && cw.size() != k) throw dimension_error("fit: one class weight per class required");
}

inline std::vector<double> weights_or_ones(std::span<const double> cw, std::size_t k) {
  return cw.empty() ? std::vector<double>(k, 1.0) : std::vector<double>(cw.begin(), cw.end());
}

inline Tensor64 to_tensor(const Matrix& x) {
  std::vector<double> flat;
  for (const auto& r : x) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor64({x.size(), x.empty() ? 0 : x[0].size()}, std::move(flat));
}

inline Matrix to_matrix(const Tensor64& t) {
  Matrix m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.data()[i * t.dim(1) + j];
  return m;
}

inline std::vector<double> to_vector(const Tensor64& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace detail

inline ClassifierModel fit_argmin(std::size_t k) {
  ClassifierModel m;
  m.kind = Kind::argmin;
  m.n_classes = k;
  m.n_features = k;
  return m;
}

/// One-vs-rest linear SVM: for each class minimizes
///   (lambda/2)|w|^2 + (1/N) sum_i s_i max(0, 1 - y_i (w.x_i + b)),  lambda = 1/(C N),
/// by full-batch subgradient descent with step 1/sqrt(t), keeping the best
/// iterate. s_i is the class weight of sample i's true class.
inline ClassifierModel fit_linear_svm(const Matrix& x, std::span<const int> y, std::size_t k,
                                      std::span<const double> cw = {}, const FitOptions& opt = {}) {
  detail::check_training_set(x, y, k, cw);
  ClassifierModel m;
  m.kind = Kind::linear_svm;
  m.n_classes = k;
  m.n_features = x[0].size();
  m.class_weights = detail::weights_or_ones(cw, k);
  m.standardizer = Standardizer::fit(x);
  const Matrix z = m.standardizer.apply(x);
  const std::size_t n = z.size(), d = m.n_features;
  const double lambda = 1.0 / (opt.c * static_cast<double>(n));
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> w(d, 0.0), best_w = w;
    double b = 0, best_b = 0, best_obj = std::numeric_limits<double>::infinity();
    for (std::size_t t = 1; t <= opt.iterations; ++t) {
      std::vector<double> gw(d, 0.0);
      double gb = 0, obj = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double yi = y[i] == static_cast<int>(c) ? 1.0 : -1.0;
        const double s = m.class_weights[y[i]];
        double f = b;
        for (std::size_t j = 0; j < d; ++j) f += w[j] * z[i][j];
        const double margin = 1.0 - yi * f;
        if (margin > 0) {
          obj += s * margin;
          for (std::size_t j = 0; j < d; ++j) gw[j] -= s * yi * z[i][j];
          gb -= s * yi;
        }
      }
      double reg = 0;
      for (double v : w) reg += v * v;
      obj = obj / n + 0.5 * lambda * reg;
      if (obj < best_obj) {
        best_obj = obj;
        best_w = w;
        best_b = b;
      }
      const double eta = 1.0 / std::sqrt(static_cast<double>(t));
      for (std::size_t j = 0; j < d; ++j) w[j] -= eta * (gw[j] / n + lambda * w[j]);
      b -= eta * gb / n;
    }
    m.w.push_back(best_w);
    m.b.push_back(best_b);
  }
  return m;
}

/// Multinomial logistic regression (linear layer + softmax) on weighted
/// cross-entropy, full-batch gradient descent from zero initialization.
inline ClassifierModel fit_logistic(const Matrix& x, std::span<const int> y, std::size_t k,
                                    std::span<const double> cw = {}, const FitOptions& opt = {}) {
  detail::check_training_set(x, y, k, cw);
  ClassifierModel m;
  m.kind = Kind::logistic;
  m.n_classes = k;
  m.n_features = x[0].size();
  m.class_weights = detail::weights_or_ones(cw, k);
  m.standardizer = Standardizer::fit(x);
  const Tensor64 z = detail::to_tensor(m.standardizer.apply(x));
  std::vector<double> sw;
  for (int l : y) sw.push_back(m.class_weights[l]);
  Tensor64 w = Tensor64::zeros({k, m.n_features}), b = Tensor64::zeros({k});
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  for (std::size_t t = 0; t < opt.iterations; ++t) {
    Tape64 tape;
    auto loss = softmax_cross_entropy(tape, linear(tape, z, w, b), y, std::span<const double>(sw));
    backward(loss, tape);
    for (auto* p : {&w, &b}) {
      auto g = p->grad();
      auto v = p->mutable_data();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= opt.learning_rate * g[i];
      p->zero_grad();
    }
  }
  m.w = detail::to_matrix(w);
  m.b = detail::to_vector(b);
  return m;
}

/// One hidden relu layer trained with Adam on weighted cross-entropy.
inline ClassifierModel fit_mlp(const Matrix& x, std::span<const int> y, std::size_t k,
                               std::span<const double> cw = {}, const FitOptions& opt = {}) {
  detail::check_training_set(x, y, k, cw);
  if (opt.hidden == 0) throw std::invalid_argument("fit_mlp: hidden size must be positive");
  ClassifierModel m;
  m.kind = Kind::mlp;
  m.n_classes = k;
  m.n_features = x[0].size();
  m.class_weights = detail::weights_or_ones(cw, k);
  m.standardizer = Standardizer::fit(x);
  const Tensor64 z = detail::to_tensor(m.standardizer.apply(x));
  std::vector<double> sw;
  for (int l : y) sw.push_back(m.class_weights[l]);
  Rng rng(derive_seed(opt.seed, "mlp"));
  ParameterSet<double> ps;
  LinearLayer<double> l1(ps, "l1", m.n_features, opt.hidden, rng, std::sqrt(2.0 / m.n_features));
  LinearLayer<double> l2(ps, "l2", opt.hidden, k, rng, std::sqrt(1.0 / opt.hidden));
  AdamHyper h;
  h.alpha = opt.mlp_learning_rate;
  h.beta1 = 0.9;
  AdamState<double> st(h);
  for (std::size_t t = 0; t < opt.iterations; ++t) {
    Tape64 tape;
    auto loss = softmax_cross_entropy(tape, l2(tape, relu(tape, l1(tape, z))), y, std::span<const double>(sw));
    backward(loss, tape);
    adam_step(ps.tensors(), st);
    ps.zero_grad();
  }
  m.w = detail::to_matrix(l1.weight);
  m.b = detail::to_vector(l1.bias);
  m.w2 = detail::to_matrix(l2.weight);
  m.b2 = detail::to_vector(l2.bias);
  return m;
}

inline ClassifierModel fit(Kind kind, const Matrix& x, std::span<const int> y, std::size_t k,
                           std::span<const double> cw = {}, const FitOptions& opt = {}) {
  switch (kind) {
    case Kind::argmin: return fit_argmin(k);
    case Kind::linear_svm: return fit_linear_svm(x, y, k, cw, opt);
    case Kind::logistic: return fit_logistic(x, y, k, cw, opt);
    case Kind::mlp: return fit_mlp(x, y, k, cw, opt);
  }
  throw std::invalid_argument("fit: unknown kind");
}

namespace detail {

inline std::vector<double> affine(const Matrix& w, const std::vector<double>& b, std::span<const double> x) {
  std::vector<double> out(b);
  for (std::size_t i = 0; i < w.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j) out[i] += w[i][j] * x[j];
  return out;
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] = std::exp(logits[i] - mx);
  for (auto& v : p) v /= s;
  return p;
}

inline int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());  // first maximum
}

}  // namespace detail

inline Prediction predict(const ClassifierModel& m, const Matrix& x) {
  Prediction p;
  for (const auto& row : x) {
    if (row.size() != m.n_features)
      throw dimension_error("predict: expected " + std::to_string(m.n_features) + " features, got " +
                            std::to_string(row.size()));
    std::vector<double> s;
    switch (m.kind) {
      case Kind::argmin: {
        p.labels.push_back(argmin_classify(row));
        for (double d : row) s.push_back(-d);
        if (m.n_classes == 2) {
          const double tot = row[0] + row[1];
          p.binary_score.push_back(tot > 0 ? row[0] / tot : 0.5);
        }
        p.scores.push_back(s);
        continue;
      }
      case Kind::linear_svm:
        s = detail::affine(m.w, m.b, m.standardizer.apply(row));
        break;
      case Kind::logistic:
        s = detail::affine(m.w, m.b, m.standardizer.apply(row));
        p.proba.push_back(detail::softmax(s));
        break;
      case Kind::mlp: {
        auto h = detail::affine(m.w, m.b, m.standardizer.apply(row));
        for (auto& v : h) v = std::max(v, 0.0);
        s = detail::affine(m.w2, m.b2, h);
        p.proba.push_back(detail::softmax(s));
        break;
      }
    }
    p.labels.push_back(detail::argmax(s));
    if (m.n_classes == 2) p.binary_score.push_back(s[1] - s[0]);
    p.scores.push_back(std::move(s));
  }
  return p;
}

// ---- persistence -------------------------------------------------------------

namespace detail {

inline void put_matrix(io::Container& c, const std::string& name, const Matrix& w) {
  std::vector<float> flat;
  for (const auto& r : w)
    for (double v : r) flat.push_back(static_cast<float>(v));
  c.add(name, {w.size(), w.empty() ? 0 : w[0].size()}, std::move(flat));
}

inline void put_vector(io::Container& c, const std::string& name, const std::vector<double>& v) {
  c.add(name, {v.size()}, std::vector<float>(v.begin(), v.end()));
}

inline Matrix get_matrix(const io::Container& c, const std::string& name) {
  const auto& t = c.get(name);
  Matrix m(t.shape.at(0), std::vector<double>(t.shape.at(1)));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) m[i][j] = t.data[i * t.shape[1] + j];
  return m;
}

inline std::vector<double> get_vector(const io::Container& c, const std::string& name) {
  const auto& t = c.get(name);
  return {t.data.begin(), t.data.end()};
}

}  // namespace detail

/// Parameters are stored at single precision, so a loaded model is the
/// float-rounded version of the fitted one; save() rounds in-memory models
/// the same way via round_to_storage().
inline io::Container to_container(const ClassifierModel& m) {
  io::Container c;
  c.fingerprint = std::string("classifier:") + to_string(m.kind);
  c.add("meta", {3}, {static_cast<float>(static_cast<int>(m.kind)), static_cast<float>(m.n_classes),
                      static_cast<float>(m.n_features)});
  detail::put_vector(c, "class_weights", m.class_weights);
  detail::put_vector(c, "standardizer.mean", m.standardizer.mean);
  detail::put_vector(c, "standardizer.scale", m.standardizer.scale);
  detail::put_matrix(c, "w", m.w);
  detail::put_vector(c, "b", m.b);
  detail::put_matrix(c, "w2", m.w2);
  detail::put_vector(c, "b2", m.b2);
  return c;
}

inline ClassifierModel from_container(const io::Container& c) {
  ClassifierModel m;
  const auto& meta = c.get("meta").data;
  if (meta.size() != 3) throw io::format_error("classifier: bad meta tensor");
  m.kind = static_cast<Kind>(static_cast<int>(meta[0]));
  m.n_classes = static_cast<std::size_t>(meta[1]);
  m.n_features = static_cast<std::size_t>(meta[2]);
  if (c.fingerprint != std::string("classifier:") + to_string(m.kind))
    throw io::format_error("classifier: fingerprint does not match kind");
  m.class_weights = detail::get_vector(c, "class_weights");
  m.standardizer.mean = detail::get_vector(c, "standardizer.mean");
  m.standardizer.scale = detail::get_vector(c, "standardizer.scale");
  m.w = detail::get_matrix(c, "w");
  m.b = detail::get_vector(c, "b");
  m.w2 = detail::get_matrix(c, "w2");
  m.b2 = detail::get_vector(c, "b2");
  return m;
}

inline ClassifierModel round_to_storage(const ClassifierModel& m) { return from_container(to_container(m)); }

inline void save(const std::filesystem::path& path, const ClassifierModel& m) {
  io::save_container(path, to_container(m));
}

inline ClassifierModel load(const std::filesystem::path& path) { return from_container(io::load_container(path)); }

}  // namespace ictd::classify
