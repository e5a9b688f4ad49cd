#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "ictd/distance/translation.hpp"

using namespace ictd;
using namespace ictd::distance;

namespace {

std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

gan::GeneratorConfig tiny_generator(std::size_t k) {
  gan::GeneratorConfig g;
  g.image_size = 16;
  g.base_channels = 4;
  g.n_residual_blocks = 1;
  g.n_classes = k;
  return g;
}

gan::DiscriminatorConfig tiny_discriminator(bool cls, std::size_t k) {
  gan::DiscriminatorConfig d;
  d.image_size = 16;
  d.base_channels = 4;
  d.n_downsamples = 2;
  d.with_class_head = cls;
  d.n_classes = k;
  return d;
}

data::Dataset tiny_dataset(std::size_t k, std::size_t n) {
  data::DatasetConfig c;
  for (std::size_t i = 0; i < k; ++i) {
    data::ClassSpec s;
    s.name = "c" + std::to_string(i);
    s.hue_lo = 60.0 * i;
    s.hue_hi = 60.0 * i + 10;
    c.classes.push_back(s);
  }
  c.n_per_class.assign(k, n);
  c.image_size = 16;
  c.seed = 3;
  return data::generate_dataset(c);
}

}  // namespace

TEST(L1Distance, Examples) {
  const std::vector<float> x(12, 0.f), y(12, 0.5f);
  EXPECT_EQ(l1_distance(x, x), 0.0);
  EXPECT_DOUBLE_EQ(l1_distance(x, y), 0.5);
  const std::vector<float> z(11, 0.f);
  EXPECT_THROW(l1_distance(x, z), dimension_error);
  EXPECT_THROW(l1_distance(Tensor::zeros({1, 3, 2, 2}), Tensor::zeros({1, 3, 4, 1})), dimension_error);
}

TEST(L1Distance, MatchesElementLoop) {
  Rng rng(6);
  for (int t = 0; t < 20; ++t) {
    auto a = Tensor::zeros({1, 3, 16, 16}), b = Tensor::zeros({1, 3, 16, 16});
    for (auto& v : a.mutable_data()) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : b.mutable_data()) v = static_cast<float>(rng.uniform(-1, 1));
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x) {
          const std::size_t i = (c * 16 + y) * 16 + x;
          s += std::fabs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]));
        }
    EXPECT_NEAR(l1_distance(a, b), s / 768.0, 1e-6);
  }
}

TEST(TranslationRatio, Examples) {
  EXPECT_EQ(translation_ratio(0.3, 0.3).value, 0.5);
  EXPECT_EQ(translation_ratio(0.0, 0.4).value, 0.0);
  EXPECT_DOUBLE_EQ(translation_ratio(0.2, 0.6).value, 0.25);
  const auto deg = translation_ratio(0, 0);
  EXPECT_EQ(deg.value, 0.5);
  EXPECT_TRUE(deg.degenerate);
  EXPECT_FALSE(translation_ratio(0.1, 0.2).degenerate);
  EXPECT_THROW(translation_ratio(-0.1, 0.2), std::invalid_argument);
}

TEST(TranslationRatio, ScaleFreeAndInUnitInterval) {
  Rng rng(12);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(0, 2), b = rng.uniform(0, 2), s = std::exp(rng.uniform(-4, 4));
    const double r = translation_ratio(a, b).value;
    ASSERT_GE(r, 0.0);
    ASSERT_LE(r, 1.0);
    ASSERT_NEAR(translation_ratio(s * a, s * b).value, r, 1e-12);
    ASSERT_NEAR(translation_ratio(b, a).value, 1.0 - r, 1e-12);
  }
}

TEST(Translator, CycleGanMapsClassesToGenerators) {
  auto m = gan::build_cyclegan(tiny_generator(1), tiny_discriminator(false, 2), 4);
  const Translator t(m);
  EXPECT_EQ(t.n_classes(), 2u);
  Rng rng(1);
  auto x = Tensor::zeros({1, 3, 16, 16});
  for (auto& v : x.mutable_data()) v = static_cast<float>(rng.uniform(-1, 1));
  auto tape = Tape::inference();
  const auto ys = translate_all(x, t, 2);
  ASSERT_EQ(ys.size(), 2u);
  EXPECT_EQ(values(ys[0]), values(m.g_ba.forward(tape, x, false, nullptr)));
  EXPECT_EQ(values(ys[1]), values(m.g_ab.forward(tape, x, false, nullptr)));
  EXPECT_THROW(translate_all(x, t, 3), contract_error);
}

TEST(Translator, StarGanProducesOneImagePerClassDeterministically) {
  auto m = gan::build_stargan(tiny_generator(6), tiny_discriminator(true, 6), 5);
  const Translator t(m);
  auto x = Tensor::zeros({1, 3, 16, 16});
  Rng rng(2);
  for (auto& v : x.mutable_data()) v = static_cast<float>(rng.uniform(-1, 1));
  const auto a = translate_all(x, t, 6), b = translate_all(x, t, 6);
  ASSERT_EQ(a.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(values(a[i]), values(b[i]));
  EXPECT_NE(values(a[0]), values(a[1]));
  EXPECT_THROW(t.translate(x, 6), std::out_of_range);
}

TEST(ExtractFeatures, OneRowPerImageAndKColumns) {
  const auto ds = tiny_dataset(3, 4);
  auto m = gan::build_stargan(tiny_generator(3), tiny_discriminator(true, 3), 6);
  std::size_t records = 0;
  const auto dm = extract_features(ds, Translator(m), 3, [&](const TranslationRecord& r) {
    EXPECT_EQ(r.generated.size(), 3u);
    EXPECT_EQ(r.image_id, records);
    ++records;
  });
  EXPECT_EQ(dm.rows(), ds.size());
  EXPECT_EQ(dm.n_classes(), 3u);
  EXPECT_EQ(records, ds.size());
  for (std::size_t i = 0; i < dm.rows(); ++i) {
    const auto y = Translator(m).translate(ds.image(i), 2);
    EXPECT_FLOAT_EQ(static_cast<float>(dm.at(i, 2)), static_cast<float>(l1_distance(ds.image(i), y)));
  }
  EXPECT_THROW(extract_features(ds, Translator(m), 2), contract_error);
}

TEST(DistanceMatrix, CsvRoundTripIsExact) {
  DistanceMatrix m(2);
  Rng rng(9);
  for (std::size_t i = 0; i < 25; ++i) {
    const std::vector<double> d{rng.uniform(), rng.uniform()};
    m.add_row(i, static_cast<int>(i % 2), d);
  }
  const auto csv = m.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "image_id,true_label,d_0,d_1,tr");
  const auto back = DistanceMatrix::from_csv(csv);
  EXPECT_EQ(back.to_csv(), csv);
  for (std::size_t i = 0; i < 25; ++i) EXPECT_EQ(back.row(i), m.row(i));
}

TEST(DistanceMatrix, MultiClassHeaderAndErrors) {
  DistanceMatrix m(3);
  const std::vector<double> d{0.1, 0.2, 0.3};
  m.add_row(7, 2, d);
  const auto csv = m.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "image_id,true_label,d_0,d_1,d_2");
  EXPECT_THROW(m.ratio(0), contract_error);
  const std::vector<double> short_row{0.1};
  EXPECT_THROW(m.add_row(8, 0, short_row), dimension_error);
  EXPECT_THROW(DistanceMatrix::from_csv("image_id,true_label,d_0\n"), std::runtime_error);
}
