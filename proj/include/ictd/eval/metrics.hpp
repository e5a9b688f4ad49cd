#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ictd/distance/translation.hpp"

namespace ictd::eval {

struct RocPoint {
  double threshold;  // predict positive when score >= threshold
  double fpr;
  double tpr;
};

namespace detail {

inline void check_binary(std::span<const double> scores, std::span<const int> labels, std::size_t& pos,
                         std::size_t& neg) {
  if (scores.size() != labels.size()) throw dimension_error("roc: scores and labels differ in length");
  pos = neg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("roc: labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw std::invalid_argument("roc: scores must be finite");
    (labels[i] ? pos : neg) += 1;
  }
  if (pos == 0 || neg == 0) throw std::invalid_argument("roc: need at least one positive and one negative");
}

}  // namespace detail

/// ROC points from the strictest threshold down. Equal scores form a single
/// step, so the trapezoid under the curve counts ties as one half.
inline std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  std::size_t P = 0, N = 0;
  detail::check_binary(scores, labels, P, N);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> pts{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] ? tp : fp) += 1;
    pts.push_back({s, static_cast<double>(fp) / N, static_cast<double>(tp) / P});
  }
  return pts;
}

inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  const auto pts = roc_curve(scores, labels);
  double a = 0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    a += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) * 0.5;
  return a;
}

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;  // rows = true, columns = predicted

inline ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted,
                                        std::size_t k) {
  if (truth.size() != predicted.size()) throw dimension_error("confusion_matrix: length mismatch");
  ConfusionMatrix cm(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || predicted[i] < 0 || static_cast<std::size_t>(truth[i]) >= k ||
        static_cast<std::size_t>(predicted[i]) >= k)
      throw std::out_of_range("confusion_matrix: label outside [0," + std::to_string(k) + ")");
    ++cm[truth[i]][predicted[i]];
  }
  return cm;
}

/// diag / row sum; classes without test images are undefined (nullopt).
inline std::vector<std::optional<double>> per_class_accuracy(const ConfusionMatrix& cm) {
  std::vector<std::optional<double>> out;
  for (std::size_t i = 0; i < cm.size(); ++i) {
    const auto row = std::accumulate(cm[i].begin(), cm[i].end(), std::size_t{0});
    if (row == 0) out.push_back(std::nullopt);
    else out.push_back(static_cast<double>(cm[i][i]) / static_cast<double>(row));
  }
  return out;
}

inline double overall_accuracy(const ConfusionMatrix& cm) {
  std::size_t total = 0, diag = 0;
  for (std::size_t i = 0; i < cm.size(); ++i) {
    diag += cm[i][i];
    total += std::accumulate(cm[i].begin(), cm[i].end(), std::size_t{0});
  }
  if (total == 0) throw std::invalid_argument("overall_accuracy: empty confusion matrix");
  return static_cast<double>(diag) / static_cast<double>(total);
}

struct EvalReport {
  std::vector<RocPoint> roc;     // only for two classes
  std::optional<double> auroc;   // only for two classes
  ConfusionMatrix confusion;
  std::vector<std::optional<double>> per_class;
  double overall = 0;
  std::size_t n_test = 0;
};

/// binary_scores (higher = class 1) may be empty when K > 2.
inline EvalReport evaluate(std::span<const int> truth, std::span<const int> predicted, std::size_t k,
                           std::span<const double> binary_scores = {}) {
  EvalReport r;
  r.confusion = confusion_matrix(truth, predicted, k);
  r.per_class = per_class_accuracy(r.confusion);
  r.overall = overall_accuracy(r.confusion);
  r.n_test = truth.size();
  if (k == 2 && !binary_scores.empty()) {
    r.roc = roc_curve(binary_scores, truth);
    r.auroc = auroc(binary_scores, truth);
  }
  return r;
}

inline nlohmann::ordered_json metrics_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["auroc"] = r.auroc ? nlohmann::ordered_json(*r.auroc) : nlohmann::ordered_json(nullptr);
  j["overall_accuracy"] = r.overall;
  auto pc = nlohmann::ordered_json::array();
  for (const auto& a : r.per_class) pc.push_back(a ? nlohmann::ordered_json(*a) : nlohmann::ordered_json(nullptr));
  j["per_class_accuracy"] = pc;
  j["confusion_matrix"] = r.confusion;
  j["n_test"] = r.n_test;
  return j;
}

inline std::string roc_csv(const std::vector<RocPoint>& pts) {
  std::ostringstream os;
  os << "threshold,fpr,tpr\n";
  char buf[128];
  for (const auto& p : pts) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g\n", p.threshold, p.fpr, p.tpr);
    os << buf;
  }
  return os.str();
}

// ---- figure data -----------------------------------------------------------

struct FigureFile {
  std::string name;
  std::string csv;
};

inline constexpr std::size_t kHistogramBins = 50;

/// Bin index on [0,1] with inclusive-left edges and an inclusive-right last bin.
inline std::size_t histogram_bin(double v, std::size_t bins = kHistogramBins) {
  if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("histogram value outside [0,1]");
  return std::min(static_cast<std::size_t>(v * static_cast<double>(bins)), bins - 1);
}

/// Pairwise scatter files scatter_i_j.csv (image_id,true_label,d_i,d_j) for
/// every i < j, and for two classes tr_histogram.csv with 50 uniform bins on
/// [0,1] and per-class counts.
inline std::vector<FigureFile> export_figure_data(const distance::DistanceMatrix& m) {
  std::vector<FigureFile> files;
  const std::size_t k = m.n_classes();
  char buf[96];
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a + 1; b < k; ++b) {
      std::ostringstream os;
      os << "image_id,true_label,d_" << a << ",d_" << b << '\n';
      for (std::size_t i = 0; i < m.rows(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%d,%.9g,%.9g\n", m.ids()[i], m.labels()[i], m.at(i, a), m.at(i, b));
        os << buf;
      }
      files.push_back({"scatter_" + std::to_string(a) + "_" + std::to_string(b) + ".csv", os.str()});
    }
  }
  if (k == 2) {
    std::vector<std::array<std::size_t, 2>> counts(kHistogramBins, {0, 0});
    for (std::size_t i = 0; i < m.rows(); ++i) {
      const int l = m.labels()[i];
      if (l < 0 || l > 1) throw std::out_of_range("histogram: label outside [0,2)");
      ++counts[histogram_bin(m.ratio(i).value)][static_cast<std::size_t>(l)];
    }
    std::ostringstream os;
    os << "bin_lo,bin_hi,count_0,count_1,count\n";
    for (std::size_t b = 0; b < kHistogramBins; ++b) {
      std::snprintf(buf, sizeof buf, "%.9g,%.9g,%zu,%zu,%zu\n", double(b) / kHistogramBins,
                    double(b + 1) / kHistogramBins, counts[b][0], counts[b][1], counts[b][0] + counts[b][1]);
      os << buf;
    }
    files.push_back({"tr_histogram.csv", os.str()});
  }
  return files;
}

}  // namespace ictd::eval
