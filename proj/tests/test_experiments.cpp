#include <gtest/gtest.h>

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <sstream>
#include <vector>

#include "ictd/experiments/pipeline.hpp"

using namespace ictd;
using namespace ictd::exp;

namespace {

// Unique scratch directory per test, removed afterwards.
class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / ("ictd_" + std::string(info->test_suite_name()) + "_" + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

ExperimentConfig tiny(const std::string& recipe_name = "fruits2") {
  auto c = recipe(recipe_name);
  c.dataset.image_size = 16;
  c.dataset.n_per_class.assign(c.n_classes(), 10);
  c.model.base_channels = 4;
  c.model.n_residual_blocks = 1;
  c.model.disc_base_channels = 4;
  c.model.n_downsamples = 2;
  c.model.iterations = 6;
  c.model.log_every = 2;
  c.model.checkpoint_every = 3;
  c.baseline.epochs = 3;
  return c;
}

std::uint32_t be32(const std::string& s, std::size_t at) {
  return (std::uint32_t(std::uint8_t(s[at])) << 24) | (std::uint32_t(std::uint8_t(s[at + 1])) << 16) |
         (std::uint32_t(std::uint8_t(s[at + 2])) << 8) | std::uint32_t(std::uint8_t(s[at + 3]));
}

// Minimal PNG reader for unfiltered 8-bit RGB: returns width, height and pixels.
io::RgbImage decode_png(const std::string& png) {
  EXPECT_EQ(png.substr(0, 8), std::string("\x89PNG\r\n\x1a\n", 8));
  std::size_t pos = 8;
  std::size_t w = 0, h = 0;
  std::string idat;
  while (pos < png.size()) {
    const auto len = be32(png, pos);
    const std::string type = png.substr(pos + 4, 4);
    const std::string data = png.substr(pos + 8, len);
    const auto crc = be32(png, pos + 8 + len);
    EXPECT_EQ(crc, static_cast<std::uint32_t>(crc32(crc32(0, nullptr, 0),
                                                     reinterpret_cast<const Bytef*>(png.data() + pos + 4), len + 4)));
    if (type == "IHDR") {
      w = be32(data, 0);
      h = be32(data, 4);
      EXPECT_EQ(data[8], 8);  // bit depth
      EXPECT_EQ(data[9], 2);  // truecolour
    } else if (type == "IDAT") {
      idat += data;
    }
    pos += 12 + len;
  }
  std::string raw(h * (3 * w + 1), '\0');
  uLongf n = raw.size();
  EXPECT_EQ(uncompress(reinterpret_cast<Bytef*>(raw.data()), &n, reinterpret_cast<const Bytef*>(idat.data()), idat.size()),
            Z_OK);
  io::RgbImage img(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    EXPECT_EQ(raw[y * (3 * w + 1)], 0);  // filter type none
    std::memcpy(img.at(0, y), raw.data() + y * (3 * w + 1) + 1, 3 * w);
  }
  return img;
}

}  // namespace

// ---- configuration ------------------------------------------------------------

TEST(Config, RecipesValidateAndRoundTrip) {
  for (const auto& n : recipe_names()) {
    const auto c = recipe(n);
    EXPECT_NO_THROW(c.validate()) << n;
    EXPECT_EQ(canonical(from_json(to_json(c))), canonical(c)) << n;
  }
  EXPECT_THROW(recipe("fruits3"), config_error);
}

TEST(Config, RecipeShapes) {
  EXPECT_EQ(recipe("fruits2").model.type, ModelType::cyclegan);
  EXPECT_EQ(recipe("fruits2").model.loss.lambda_identity, 5.0);
  EXPECT_EQ(recipe("fruits2").model.loss.lambda_cycle, 0.0);
  EXPECT_EQ(recipe("cells3").n_classes(), 3u);
  EXPECT_EQ(recipe("cells6").n_classes(), 6u);
  EXPECT_EQ(recipe("cells3").model.type, ModelType::stargan);
  const auto bias = recipe("fruits2-bias").dataset.artifacts;
  EXPECT_EQ(bias.vignette.probability, (std::vector<double>{0.1, 0.9}));
  EXPECT_EQ(bias.scalebar.probability, (std::vector<double>{0.0, 0.5}));
}

TEST(Config, UnknownKeysAreErrors) {
  EXPECT_THROW(from_json(json::parse(R"({"seeed": 3})")), config_error);
  EXPECT_THROW(from_json(json::parse(R"({"model": {"loss": {"lambda_idenity": 5}}})")), config_error);
  EXPECT_THROW(from_json(json::parse(R"({"dataset": {"classes": [{"name": "a", "colour": 3}]}})")), config_error);
  try {
    from_json(json::parse(R"({"model": {"generator": {"base_chanels": 8}}})"));
    FAIL();
  } catch (const config_error& e) {
    EXPECT_NE(std::string(e.what()).find("model.generator.base_chanels"), std::string::npos);
  }
}

TEST(Config, BadValuesAreErrors) {
  EXPECT_THROW(from_json(json::parse(R"({"model": {"type": "pix2pix"}})")), config_error);
  EXPECT_THROW(from_json(json::parse(R"({"seed": "one"})")), config_error);
  EXPECT_THROW(from_json(json::parse(R"({"dataset": {"classes": [{"hue": [1, 2, 3]}]}})")), config_error);
  auto c = recipe("cells3");
  c.model.type = ModelType::cyclegan;
  EXPECT_THROW(c.validate(), config_error);
  auto d = recipe("fruits2");
  d.model.decay_from = 1.5;
  EXPECT_THROW(d.validate(), config_error);
}

TEST(Config, LearningRateScheduleDecaysLinearlyToZero) {
  ModelSection m;
  m.optimizer.alpha = 1.0;
  m.iterations = 10;
  m.decay_from = 0.6;
  std::vector<double> lr;
  for (std::size_t it = 1; it <= 10; ++it) lr.push_back(learning_rate_at(m, it));
  EXPECT_EQ(lr, (std::vector<double>{1, 1, 1, 1, 1, 1, 1.0, 0.75, 0.5, 0.25}));
  m.decay_from = 1.0;
  EXPECT_EQ(learning_rate_at(m, 10), 1.0);
  m.decay_from = 0.0;
  EXPECT_EQ(learning_rate_at(m, 1), 1.0);
  EXPECT_EQ(learning_rate_at(m, 10), 0.1);
}

TEST(Config, PartialFileOverridesDefaults) {
  const auto c = from_json(json::parse(R"({"seed": 9, "model": {"iterations": 17}})"), recipe("fruits2"));
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.model.iterations, 17u);
  EXPECT_EQ(c.model.loss.lambda_identity, 5.0);
}

TEST(Config, LoadFromFileWithRecipeBase) {
  TempDir tmp;
  const auto path = tmp.path() / "exp.json";
  io::write_text(path, R"({"recipe": "cells3", "model": {"iterations": 5}})");
  const auto c = load_config(path.string());
  EXPECT_EQ(c.n_classes(), 3u);
  EXPECT_EQ(c.model.iterations, 5u);
  EXPECT_EQ(load_config("cells6").n_classes(), 6u);
  EXPECT_THROW(load_config("no-such-thing"), config_error);
  io::write_text(path, "{not json");
  EXPECT_THROW(load_config(path.string()), config_error);
}

TEST(Config, FingerprintTracksArchitectureOnly) {
  auto a = recipe("fruits2"), b = a;
  b.model.iterations = 10;
  b.model.checkpoint_every = 5;
  EXPECT_EQ(model_fingerprint(a), model_fingerprint(b));
  b.model.base_channels = 16;
  EXPECT_NE(model_fingerprint(a), model_fingerprint(b));
}

// ---- persistence -----------------------------------------------------------------

TEST(Container, RoundTripIsBitIdentical) {
  io::Container c;
  c.fingerprint = "fp";
  c.add("a", {2, 3}, {1, 2, 3, 4, 5, -0.f});
  c.add("scalar", {}, {3.5f});
  const auto bytes = io::to_bytes(c);
  EXPECT_EQ(bytes.substr(0, 4), "ICTD");
  const auto back = io::from_bytes(bytes);
  EXPECT_EQ(io::to_bytes(back), bytes);
  EXPECT_EQ(back.get("a").shape, (Shape{2, 3}));
}

TEST(Container, RejectsCorruptInput) {
  io::Container c;
  c.fingerprint = "fp";
  c.add("a", {2}, {1, 2});
  auto bytes = io::to_bytes(c);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(io::from_bytes(bad_magic), io::format_error);
  auto bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_THROW(io::from_bytes(bad_version), io::format_error);
  EXPECT_THROW(io::from_bytes(bytes.substr(0, bytes.size() - 3)), io::format_error);
  TempDir tmp;
  io::save_container(tmp.path() / "c.ictd", c);
  EXPECT_NO_THROW(io::load_container(tmp.path() / "c.ictd", "fp"));
  EXPECT_THROW(io::load_container(tmp.path() / "c.ictd", "other"), io::format_error);
  EXPECT_THROW(io::load_container(tmp.path() / "missing.ictd"), io::io_error);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const auto cfg = tiny();
  TranslationModel a(cfg);
  TrainingState st{gan::OptimizerPair(cfg.model.optimizer), 0};
  const auto bytes = io::to_bytes(checkpoint_container(a, st));
  auto cfg_b = cfg;
  cfg_b.seed = 99;  // different initial weights, same architecture
  TranslationModel b(cfg_b);
  TrainingState st_b;
  restore_checkpoint(b, io::from_bytes(bytes), &st_b);
  EXPECT_EQ(io::to_bytes(checkpoint_container(b, st_b)), bytes);
}

TEST(Checkpoint, ArchitectureMismatchRejected) {
  auto cfg = tiny();
  TranslationModel a(cfg);
  const auto c = checkpoint_container(a, {});
  cfg.model.base_channels = 8;
  TranslationModel b(cfg);
  EXPECT_THROW(restore_checkpoint(b, c), io::format_error);
}

TEST(Dataset, SaveLoadRoundTrip) {
  TempDir tmp;
  const auto cfg = tiny("fruits2-bias");
  const auto ds = data::generate_dataset(cfg.resolved_dataset());
  save_dataset(tmp.path(), ds, cfg);
  const auto back = load_dataset(tmp.path(), cfg);
  EXPECT_EQ(back.pixels(), ds.pixels());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.meta(i).label, ds.meta(i).label);
    EXPECT_EQ(back.meta(i).split, ds.meta(i).split);
    EXPECT_EQ(back.meta(i).vignette, ds.meta(i).vignette);
    EXPECT_EQ(back.meta(i).vignette_intensity, ds.meta(i).vignette_intensity);
  }
  EXPECT_TRUE(fs::exists(tmp.path() / "images" / "0.png"));
  auto other = cfg;
  other.seed = 2;
  EXPECT_THROW(load_dataset(tmp.path(), other), io::format_error);
  EXPECT_THROW(load_dataset(tmp.path() / "nope", cfg), io::io_error);
}

TEST(Dataset, ManifestHasEightyTwentySplit) {
  auto cfg = recipe("fruits2");
  cfg.dataset.n_per_class = {50, 50};
  const auto csv = manifest_csv(data::generate_dataset(cfg.resolved_dataset()), cfg);
  std::size_t train = 0, test = 0;
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line.rfind("image_id,split,label", 0), 0u);
  while (std::getline(is, line)) (line.find(",train,") != std::string::npos ? train : test) += 1;
  EXPECT_EQ(train, 80u);
  EXPECT_EQ(test, 20u);
}

TEST(OutputDir, RefusesNonEmptyWithoutForce) {
  TempDir tmp;
  EXPECT_NO_THROW(prepare_output_dir(tmp.path() / "new", false));
  io::write_text(tmp.path() / "new" / "x.txt", "x");
  EXPECT_THROW(prepare_output_dir(tmp.path() / "new", false), io::io_error);
  EXPECT_NO_THROW(prepare_output_dir(tmp.path() / "new", true));
}

// ---- images ------------------------------------------------------------------------

TEST(Png, QuantizationMapping) {
  EXPECT_EQ(io::quantize(-1.f), 0);
  EXPECT_EQ(io::quantize(1.f), 255);
  EXPECT_EQ(io::quantize(0.f), 128);  // round(127.5)
  EXPECT_EQ(io::quantize(-3.f), 0);
  EXPECT_EQ(io::quantize(2.f), 255);
  EXPECT_EQ(io::quantize(0.5f), 191);  // round(191.25)
}

TEST(Png, EncodesDecodableRgb) {
  Rng rng(3);
  io::RgbImage img(5, 3);
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(rng.index(256));
  const auto png = io::encode_png(img);
  const auto back = decode_png(png);
  EXPECT_EQ(back.width, 5u);
  EXPECT_EQ(back.height, 3u);
  EXPECT_EQ(back.rgb, img.rgb);
  EXPECT_EQ(io::encode_png(img), png);
}

TEST(Grid, LayoutAndInClassFrame) {
  Rng rng(4);
  auto random_image = [&] {
    auto t = Tensor::zeros({1, 3, 8, 8});
    for (auto& v : t.mutable_data()) v = static_cast<float>(rng.uniform(-1, 1));
    return t;
  };
  std::vector<GridRow> rows;
  for (int r = 0; r < 4; ++r) {
    GridRow g;
    g.source = random_image();
    for (int k = 0; k < 3; ++k) g.translations.push_back(random_image());
    g.true_label = r % 3;
    rows.push_back(g);
  }
  const auto img = render_grid(rows);
  const auto lay = grid_layout(4, 3, 8);
  EXPECT_EQ(lay.rows, 4u);
  EXPECT_EQ(lay.cols, 4u);
  EXPECT_EQ(img.width, 4 * lay.cell);
  EXPECT_EQ(img.height, 4 * lay.cell);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) {
      const auto* corner = img.at(c * lay.cell, r * lay.cell);
      const bool framed = c >= 1 && static_cast<int>(c - 1) == rows[r].true_label;
      const auto& want = framed ? kInClassFrame : kGridBackground;
      EXPECT_TRUE(std::equal(want.begin(), want.end(), corner)) << r << "," << c;
      // Cell content is the quantized image.
      const Tensor& t = c == 0 ? rows[r].source : rows[r].translations[c - 1];
      EXPECT_EQ(img.at(c * lay.cell + kGridPad + 3, r * lay.cell + kGridPad + 5)[1], io::quantize(t.data()[(1 * 8 + 5) * 8 + 3]));
    }
  EXPECT_EQ(io::encode_png(render_grid(rows)), io::encode_png(img));
  rows[1].translations[0] = Tensor::zeros({1, 3, 4, 4});
  EXPECT_THROW(render_grid(rows), dimension_error);
}

// ---- pipeline ----------------------------------------------------------------------

TEST(Pipeline, ResumeMatchesUninterruptedRun) {
  TempDir tmp;
  const auto cfg = tiny();
  const auto ds = data::generate_dataset(cfg.resolved_dataset());
  const auto full = tmp.path() / "full", part = tmp.path() / "part";
  fs::create_directories(full);
  fs::create_directories(part);
  const auto s1 = train(cfg, ds, full);
  EXPECT_EQ(s1.final_iteration, 6u);
  EXPECT_TRUE(fs::exists(full / "checkpoints" / checkpoint_name(3)));

  TrainOptions stop;
  stop.stop_after = 4;  // "interrupted" after iteration 4; the last periodic checkpoint is 3
  train(cfg, ds, part, stop);
  TrainOptions resume;
  resume.resume = part / "checkpoints" / checkpoint_name(3);
  const auto s2 = train(cfg, ds, part, resume);
  EXPECT_EQ(s2.start_iteration, 3u);
  EXPECT_EQ(s2.final_iteration, 6u);
  EXPECT_EQ(io::read_text(part / kFinalCheckpoint), io::read_text(full / kFinalCheckpoint));
  EXPECT_EQ(io::read_text(part / kLossFile), io::read_text(full / kLossFile));
}

TEST(Pipeline, LossCsvHasOneRowPerLoggedIteration) {
  TempDir tmp;
  const auto cfg = tiny("cells3");
  const auto ds = data::generate_dataset(cfg.resolved_dataset());
  train(cfg, ds, tmp.path());
  std::istringstream is(io::read_text(tmp.path() / kLossFile));
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "iteration,d_adv,d_cls,g_adv,g_cls,g_cyc,g_id");
  std::vector<std::string> its;
  while (std::getline(is, line)) its.push_back(line.substr(0, line.find(',')));
  EXPECT_EQ(its, (std::vector<std::string>{"2", "4", "6"}));
}

TEST(Pipeline, CorruptCheckpointRejected) {
  TempDir tmp;
  const auto cfg = tiny();
  const auto ds = data::generate_dataset(cfg.resolved_dataset());
  io::write_text(tmp.path() / "bad.ictd", "ICTDgarbage");
  TrainOptions o;
  o.resume = tmp.path() / "bad.ictd";
  EXPECT_THROW(train(cfg, ds, tmp.path(), o), io::format_error);
}

TEST(Pipeline, ExtractAndClassifyAreDeterministic) {
  TempDir tmp;
  auto cfg = tiny();
  cfg.model.iterations = 2;
  const auto ds = data::generate_dataset(cfg.resolved_dataset());
  train(cfg, ds, tmp.path());
  auto m = load_model(cfg, tmp.path() / kFinalCheckpoint);
  const auto a = tmp.path() / "a", b = tmp.path() / "b";
  fs::create_directories(a);
  fs::create_directories(b);
  const auto dm = extract(cfg, ds, m, a, a / "generated");
  extract(cfg, ds, m, b);
  EXPECT_EQ(dm.rows(), ds.size());
  EXPECT_EQ(dm.n_classes(), 2u);
  EXPECT_EQ(io::read_text(a / kDistancesFile), io::read_text(b / kDistancesFile));
  EXPECT_TRUE(fs::exists(a / "generated" / "0_to_1.png"));

  for (auto kind : {classify::Kind::argmin, classify::Kind::logistic}) {
    cfg.classifier.kind = kind;
    classify_eval(cfg, ds, dm, a);
    const auto first = io::read_text(a / kMetricsFile);
    classify_eval(cfg, ds, distance::DistanceMatrix::from_csv(io::read_text(b / kDistancesFile)), b);
    EXPECT_EQ(io::read_text(b / kMetricsFile), first);
    const auto j = json::parse(first);
    for (const char* key : {"auroc", "overall_accuracy", "per_class_accuracy", "confusion_matrix", "n_test"})
      EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_EQ(j["n_test"].get<std::size_t>(), ds.indices(data::Split::test).size());
  }
  EXPECT_TRUE(fs::exists(a / "roc.csv"));
  EXPECT_TRUE(fs::exists(a / "tr_histogram.csv"));
  EXPECT_TRUE(fs::exists(a / "classifier.ictd"));
}

TEST(Pipeline, BaselineUsesSameSchemaAndIsSeeded) {
  TempDir tmp;
  const auto cfg = tiny("cells3");
  const auto ds = data::generate_dataset(cfg.resolved_dataset());
  const auto a = tmp.path() / "a", b = tmp.path() / "b";
  fs::create_directories(a);
  fs::create_directories(b);
  run_baseline(cfg, ds, a);
  run_baseline(cfg, ds, b);
  EXPECT_EQ(io::read_text(a / kMetricsFile), io::read_text(b / kMetricsFile));
  EXPECT_EQ(io::read_text(a / "baseline.ictd"), io::read_text(b / "baseline.ictd"));
  const auto j = json::parse(io::read_text(a / kMetricsFile));
  for (const char* key : {"auroc", "overall_accuracy", "per_class_accuracy", "confusion_matrix", "n_test", "stopped_epoch"})
    EXPECT_TRUE(j.contains(key)) << key;
}
