#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "ictd/eval/metrics.hpp"
#include "ictd/rng.hpp"

using namespace ictd;
using namespace ictd::eval;

namespace {

// P(s+ > s-) + 0.5 P(s+ == s-) over all positive/negative pairs.
double pairwise_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return num / pairs;
}

bool has_point(const std::vector<RocPoint>& pts, double fpr, double tpr) {
  for (const auto& p : pts)
    if (p.fpr == fpr && p.tpr == tpr) return true;
  return false;
}

std::size_t total(const ConfusionMatrix& cm) {
  std::size_t n = 0;
  for (const auto& r : cm) n += std::accumulate(r.begin(), r.end(), std::size_t{0});
  return n;
}

}  // namespace

TEST(RocCurve, PerfectSeparationPassesThroughTopLeft) {
  const std::vector<double> s{0.9, 0.8, 0.3, 0.2};
  const std::vector<int> y{1, 1, 0, 0};
  const auto pts = roc_curve(s, y);
  EXPECT_TRUE(has_point(pts, 0, 1));
  EXPECT_EQ(auroc(s, y), 1.0);
}

TEST(RocCurve, AllEqualScoresGiveDiagonalChord) {
  const std::vector<double> s(6, 0.4);
  const std::vector<int> y{1, 0, 1, 0, 0, 1};
  const auto pts = roc_curve(s, y);
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts.front().fpr, 0.0);
  EXPECT_EQ(pts.front().tpr, 0.0);
  EXPECT_EQ(pts.back().fpr, 1.0);
  EXPECT_EQ(pts.back().tpr, 1.0);
  EXPECT_EQ(auroc(s, y), 0.5);
}

TEST(RocCurve, InvertedScoresPassThroughBottomRight) {
  const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
  const std::vector<int> y{1, 1, 0, 0};
  EXPECT_TRUE(has_point(roc_curve(s, y), 1, 0));
  EXPECT_EQ(auroc(s, y), 0.0);
}

TEST(RocCurve, MonotoneWithEndpoints) {
  Rng rng(5);
  std::vector<double> s(40);
  std::vector<int> y(40);
  for (std::size_t i = 0; i < s.size(); ++i) {
    y[i] = static_cast<int>(i % 2);
    s[i] = std::round(rng.uniform() * 10) / 10;  // plenty of ties
  }
  const auto pts = roc_curve(s, y);
  EXPECT_EQ(pts.front().fpr, 0.0);
  EXPECT_EQ(pts.front().tpr, 0.0);
  EXPECT_EQ(pts.back().fpr, 1.0);
  EXPECT_EQ(pts.back().tpr, 1.0);
  for (std::size_t i = 1; i < pts.size(); ++i) {
    EXPECT_GE(pts[i].fpr, pts[i - 1].fpr);
    EXPECT_GE(pts[i].tpr, pts[i - 1].tpr);
    EXPECT_LT(pts[i].threshold, pts[i - 1].threshold);
  }
}

TEST(RocCurve, SingleClassRejected) {
  const std::vector<double> s{0.1, 0.2};
  const std::vector<int> y{1, 1};
  EXPECT_THROW(roc_curve(s, y), std::invalid_argument);
  EXPECT_THROW(auroc(s, y), std::invalid_argument);
}

TEST(Auroc, EqualsPairwiseOracleOnRandomInstances) {
  Rng rng(2024);
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 2 + rng.index(49);  // 2..50
    std::vector<double> s(n);
    std::vector<int> y(n);
    const bool coarse = inst % 2 == 0;  // half the instances are tie-heavy
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = coarse ? static_cast<double>(rng.index(5)) : rng.uniform();
      y[i] = rng.bernoulli(0.5) ? 1 : 0;
    }
    y[0] = 0;
    y[1] = 1;
    EXPECT_NEAR(auroc(s, y), pairwise_auroc(s, y), 1e-12) << "instance " << inst;
  }
}

TEST(ConfusionMatrix, PerfectPredictionsAreDiagonal) {
  const std::vector<int> y{0, 1, 2, 2, 1, 2};
  const auto cm = confusion_matrix(y, y, 3);
  EXPECT_EQ(cm, (ConfusionMatrix{{1, 0, 0}, {0, 2, 0}, {0, 0, 3}}));
  for (const auto& a : per_class_accuracy(cm)) EXPECT_EQ(a, 1.0);
}

TEST(ConfusionMatrix, RowSumsConservedOverRandomRows) {
  Rng rng(17);
  const std::size_t k = 4;
  std::vector<int> truth(1000), pred(1000);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    truth[i] = static_cast<int>(rng.index(k));
    pred[i] = static_cast<int>(rng.index(k));
  }
  auto cm = confusion_matrix(truth, pred, k);
  EXPECT_EQ(total(cm), truth.size());
  for (std::size_t c = 0; c < k; ++c)
    EXPECT_EQ(std::accumulate(cm[c].begin(), cm[c].end(), std::size_t{0}),
              static_cast<std::size_t>(std::count(truth.begin(), truth.end(), static_cast<int>(c))));
  // Swapping two predictions moves exactly two units of mass.
  std::size_t a = 0, b = 1;
  while (pred[a] == pred[b]) ++b;
  std::swap(pred[a], pred[b]);
  const auto cm2 = confusion_matrix(truth, pred, k);
  std::size_t moved = 0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) moved += cm2[i][j] > cm[i][j] ? cm2[i][j] - cm[i][j] : cm[i][j] - cm2[i][j];
  EXPECT_EQ(truth[a] == truth[b] ? 0u : 4u, moved);
}

TEST(ConfusionMatrix, OutOfRangeLabelRejected) {
  const std::vector<int> t{0, 1}, p{0, 2};
  EXPECT_THROW(confusion_matrix(t, p, 2), std::out_of_range);
}

TEST(Accuracy, TwoByTwoExample) {
  const ConfusionMatrix cm{{8, 2}, {1, 9}};
  const auto pc = per_class_accuracy(cm);
  EXPECT_DOUBLE_EQ(*pc[0], 0.8);
  EXPECT_DOUBLE_EQ(*pc[1], 0.9);
  EXPECT_DOUBLE_EQ(overall_accuracy(cm), 0.85);
}

TEST(Accuracy, EmptyRowIsUndefined) {
  const ConfusionMatrix cm{{3, 1}, {0, 0}};
  const auto pc = per_class_accuracy(cm);
  EXPECT_TRUE(pc[0].has_value());
  EXPECT_FALSE(pc[1].has_value());
}

TEST(Accuracy, UniformRandomPredictionsNearChance) {
  Rng rng(99);
  const std::size_t k = 5, n = 10000;
  std::vector<int> truth(n), pred(n);
  for (std::size_t i = 0; i < n; ++i) {
    truth[i] = static_cast<int>(rng.index(k));
    pred[i] = static_cast<int>(rng.index(k));
  }
  for (const auto& a : per_class_accuracy(confusion_matrix(truth, pred, k))) EXPECT_NEAR(*a, 1.0 / k, 0.02);
}

TEST(MetricsJson, SchemaKeysPresent) {
  const std::vector<int> t{0, 0, 1, 1}, p{0, 1, 1, 1};
  const std::vector<double> s{0.1, 0.6, 0.7, 0.9};
  const auto j = metrics_json(evaluate(t, p, 2, s));
  for (const char* key : {"auroc", "overall_accuracy", "per_class_accuracy", "confusion_matrix", "n_test"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_DOUBLE_EQ(j["auroc"].get<double>(), 1.0);
  EXPECT_EQ(j["n_test"].get<int>(), 4);
  const std::vector<int> t3{0, 1, 2}, p3{0, 1, 1};
  EXPECT_TRUE(metrics_json(evaluate(t3, p3, 3))["auroc"].is_null());
}

TEST(FigureData, ScatterRowsAndHistogramCounts) {
  distance::DistanceMatrix m(2);
  Rng rng(8);
  for (std::size_t i = 0; i < 37; ++i) {
    const std::vector<double> d{rng.uniform(), rng.uniform()};
    m.add_row(i, static_cast<int>(i % 2), d);
  }
  const auto files = export_figure_data(m);
  ASSERT_EQ(files.size(), 2u);
  EXPECT_EQ(files[0].name, "scatter_0_1.csv");
  EXPECT_EQ(std::count(files[0].csv.begin(), files[0].csv.end(), '\n'), 38);
  EXPECT_EQ(files[1].name, "tr_histogram.csv");
  std::istringstream is(files[1].csv);
  std::string line;
  std::getline(is, line);
  std::size_t sum = 0, bins = 0;
  while (std::getline(is, line)) {
    ++bins;
    sum += std::stoul(line.substr(line.rfind(',') + 1));
  }
  EXPECT_EQ(bins, kHistogramBins);
  EXPECT_EQ(sum, 37u);
}

TEST(FigureData, ConstantRatioFillsOneBin) {
  distance::DistanceMatrix m(2);
  for (std::size_t i = 0; i < 10; ++i) {
    const std::vector<double> d{0.3, 0.3};
    m.add_row(i, static_cast<int>(i % 2), d);
  }
  std::istringstream is(export_figure_data(m)[1].csv);
  std::string line;
  std::getline(is, line);
  std::size_t nonzero = 0;
  while (std::getline(is, line)) nonzero += line.substr(line.rfind(',') + 1) != "0";
  EXPECT_EQ(nonzero, 1u);
  EXPECT_EQ(histogram_bin(0.5), 25u);
  EXPECT_EQ(histogram_bin(1.0), kHistogramBins - 1);
  EXPECT_EQ(histogram_bin(0.0), 0u);
}

TEST(FigureData, MultiClassScatterPairs) {
  distance::DistanceMatrix m(3);
  const std::vector<double> d{0.1, 0.2, 0.3};
  m.add_row(0, 0, d);
  const auto files = export_figure_data(m);
  ASSERT_EQ(files.size(), 3u);
  EXPECT_EQ(files[2].name, "scatter_1_2.csv");
}
