#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ictd/data/synth.hpp"
#include "ictd/gan/models.hpp"

namespace ictd::distance {

/// Uniform view over the trained translation networks: translate(x, i) is the
/// hypothetical image of x in class i. Dropout is always off here.
class Translator {
 public:
  explicit Translator(const gan::CycleGan& m) : cyc_(&m) {}
  explicit Translator(const gan::StarGan& m) : star_(&m) {}

  std::size_t n_classes() const { return cyc_ ? 2 : star_->g.config().n_classes; }

  Tensor translate(const Tensor& x, int target) const {
    if (target < 0 || static_cast<std::size_t>(target) >= n_classes())
      throw std::out_of_range("translate: target class " + std::to_string(target) + " out of range");
    auto tape = Tape::inference();
    if (cyc_) return (target == 0 ? cyc_->g_ba : cyc_->g_ab).forward(tape, x, false, nullptr);
    std::vector<int> labels(x.dim(0), target);
    return star_->g.forward(tape, x, labels, false, nullptr);
  }

 private:
  const gan::CycleGan* cyc_ = nullptr;
  const gan::StarGan* star_ = nullptr;
};

inline std::vector<Tensor> translate_all(const Tensor& x, const Translator& model, std::size_t k) {
  if (k != model.n_classes())
    throw contract_error("translate_all: model translates into " + std::to_string(model.n_classes()) +
                         " classes, " + std::to_string(k) + " requested");
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(model.translate(x, static_cast<int>(i)));
  return out;
}

/// Mean absolute difference over all elements.
inline double l1_distance(std::span<const float> x, std::span<const float> y) {
  if (x.size() != y.size())
    throw dimension_error("l1_distance: sizes differ (" + std::to_string(x.size()) + " vs " +
                          std::to_string(y.size()) + ")");
  if (x.empty()) throw dimension_error("l1_distance: empty input");
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(static_cast<double>(x[i]) - y[i]);
  return s / static_cast<double>(x.size());
}

inline double l1_distance(const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape())
    throw dimension_error("l1_distance: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  return l1_distance(x.data(), y.data());
}

struct Ratio {
  double value = 0.5;
  bool degenerate = false;  // both distances zero
};

/// TR = d_A / (d_A + d_B): small values point to class A.
inline Ratio translation_ratio(double d_a, double d_b) {
  if (!(d_a >= 0) || !(d_b >= 0)) throw std::invalid_argument("translation_ratio: distances must be >= 0");
  if (d_a == 0 && d_b == 0) return {0.5, true};
  return {d_a / (d_a + d_b), false};
}

/// N x K translation distances with labels and ids, in dataset order.
/// Distances are held at single precision so the 9-significant-digit CSV
/// form round-trips exactly.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  explicit DistanceMatrix(std::size_t k) : k_(k) {}

  std::size_t rows() const { return ids_.size(); }
  std::size_t n_classes() const { return k_; }
  const std::vector<std::size_t>& ids() const { return ids_; }
  const std::vector<int>& labels() const { return labels_; }

  void add_row(std::size_t id, int label, std::span<const double> d) {
    if (d.size() != k_) throw dimension_error("distance row must have " + std::to_string(k_) + " entries");
    ids_.push_back(id);
    labels_.push_back(label);
    for (double v : d) {
      if (!(v >= 0)) throw std::invalid_argument("distances must be finite and non-negative");
      d_.push_back(static_cast<float>(v));
    }
  }

  std::vector<double> row(std::size_t i) const {
    if (i >= rows()) throw std::out_of_range("distance row out of range");
    return {d_.begin() + static_cast<std::ptrdiff_t>(i * k_),
            d_.begin() + static_cast<std::ptrdiff_t>((i + 1) * k_)};
  }

  double at(std::size_t i, std::size_t j) const { return d_.at(i * k_ + j); }

  Ratio ratio(std::size_t i) const {
    if (k_ != 2) throw contract_error("translation ratio needs exactly two classes");
    return translation_ratio(at(i, 0), at(i, 1));
  }

  /// Rows whose positions are listed, in that order.
  DistanceMatrix subset(std::span<const std::size_t> positions) const {
    DistanceMatrix out(k_);
    for (auto p : positions) {
      auto r = row(p);
      out.add_row(ids_[p], labels_[p], r);
    }
    return out;
  }

  /// Mean of column j over rows whose label is `label`.
  double column_mean(std::size_t j, int label) const {
    double s = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < rows(); ++i)
      if (labels_[i] == label) {
        s += at(i, j);
        ++n;
      }
    return n ? s / static_cast<double>(n) : std::nan("");
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "image_id,true_label";
    for (std::size_t j = 0; j < k_; ++j) os << ",d_" << j;
    if (k_ == 2) os << ",tr";
    os << '\n';
    char buf[64];
    for (std::size_t i = 0; i < rows(); ++i) {
      os << ids_[i] << ',' << labels_[i];
      for (std::size_t j = 0; j < k_; ++j) {
        std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(d_[i * k_ + j]));
        os << buf;
      }
      if (k_ == 2) {
        std::snprintf(buf, sizeof buf, ",%.9g", ratio(i).value);
        os << buf;
      }
      os << '\n';
    }
    return os.str();
  }

  static DistanceMatrix from_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("distances CSV: empty input");
    std::size_t cols = 1;
    for (char c : line) cols += c == ',';
    std::size_t k = 0;
    while (line.find("d_" + std::to_string(k)) != std::string::npos) ++k;
    if (k < 2 || cols != 2 + k + (k == 2 ? 1 : 0))
      throw std::runtime_error("distances CSV: unexpected header '" + line + "'");
    DistanceMatrix m(k);
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string cell;
      std::vector<std::string> cells;
      while (std::getline(ls, cell, ',')) cells.push_back(cell);
      if (cells.size() != cols)
        throw std::runtime_error("distances CSV: line " + std::to_string(lineno) + " has " +
                                 std::to_string(cells.size()) + " fields");
      std::vector<double> d;
      for (std::size_t j = 0; j < k; ++j) d.push_back(std::stod(cells[2 + j]));
      m.add_row(std::stoull(cells[0]), std::stoi(cells[1]), d);
    }
    return m;
  }

 private:
  std::size_t k_ = 0;
  std::vector<std::size_t> ids_;
  std::vector<int> labels_;
  std::vector<float> d_;
};

struct TranslationRecord {
  std::size_t image_id = 0;
  int true_label = 0;
  std::vector<Tensor> generated;  // y_i, one per class
  std::vector<double> distances;  // d_i = l1_distance(x, y_i)
};

/// Runs every listed image through all K translations. The optional sink
/// receives each record (with the generated images) in dataset order.
inline DistanceMatrix extract_features(const data::Dataset& ds, std::span<const std::size_t> indices,
                                       const Translator& model, std::size_t k,
                                       const std::function<void(const TranslationRecord&)>& sink = {}) {
  if (k != ds.n_classes())
    throw contract_error("extract_features: dataset has " + std::to_string(ds.n_classes()) +
                         " classes, " + std::to_string(k) + " requested");
  DistanceMatrix m(k);
  for (auto idx : indices) {
    TranslationRecord rec;
    rec.image_id = ds.meta(idx).id;
    rec.true_label = ds.meta(idx).label;
    const Tensor x = ds.image(idx);
    rec.generated = translate_all(x, model, k);
    for (const auto& y : rec.generated) rec.distances.push_back(l1_distance(x, y));
    m.add_row(rec.image_id, rec.true_label, rec.distances);
    if (sink) sink(rec);
  }
  return m;
}

inline DistanceMatrix extract_features(const data::Dataset& ds, const Translator& model, std::size_t k,
                                       const std::function<void(const TranslationRecord&)>& sink = {}) {
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return extract_features(ds, all, model, k, sink);
}

}  // namespace ictd::distance
