#pragma once

// The experiment steps behind the command-line verbs. Each step reads and
// writes plain files in output directories, so steps can run in separate
// processes.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ictd/baseline/cnn.hpp"
#include "ictd/classify/classifiers.hpp"
#include "ictd/data/synth.hpp"
#include "ictd/distance/translation.hpp"
#include "ictd/eval/metrics.hpp"
#include "ictd/experiments/config.hpp"
#include "ictd/experiments/grid.hpp"
#include "ictd/gan/train.hpp"
#include "ictd/io/container.hpp"
#include "ictd/io/png.hpp"

namespace ictd::exp {

namespace fs = std::filesystem;

// ---- output directories -------------------------------------------------------

/// Creates `dir`; refuses an existing non-empty directory unless `force`.
inline void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw io::io_error(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force)
      throw io::io_error("output directory " + dir.string() + " is not empty (use --force to overwrite)");
  }
  fs::create_directories(dir);
}

inline void write_config_snapshot(const fs::path& dir, const ExperimentConfig& cfg) {
  io::write_text(dir / "config.json", canonical(cfg));
}

// ---- dataset on disk ------------------------------------------------------------

inline constexpr const char* kDatasetFile = "dataset.ictd";
inline constexpr const char* kManifestFile = "manifest.csv";

inline std::string dataset_fingerprint(const ExperimentConfig& cfg) {
  auto j = to_json(cfg);
  json f{{"dataset", j["dataset"]}, {"seed", cfg.seed}};
  return "dataset:" + f.dump();
}

inline constexpr const char* kManifestHeader =
    "image_id,split,label,class_name,vignette,scalebar,tint,vignette_intensity,scalebar_intensity,tint_intensity";

inline std::string manifest_csv(const data::Dataset& ds, const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << kManifestHeader << '\n';
  char buf[256];
  for (const auto& m : ds.meta()) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%d,%s,%d,%d,%d,%.9g,%.9g,%.9g\n", m.id, data::to_string(m.split), m.label,
                  cfg.dataset.classes.at(static_cast<std::size_t>(m.label)).name.c_str(), int(m.vignette),
                  int(m.scalebar), int(m.tint), double(m.vignette_intensity), double(m.scalebar_intensity),
                  double(m.tint_intensity));
    os << buf;
  }
  return os.str();
}

inline std::vector<data::ImageMeta> parse_manifest(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kManifestHeader) throw io::format_error("manifest: unexpected header");
  std::vector<data::ImageMeta> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 10) throw io::format_error("manifest: malformed line '" + line + "'");
    data::ImageMeta m;
    m.id = std::stoull(f[0]);
    if (f[1] != "train" && f[1] != "test") throw io::format_error("manifest: unknown split '" + f[1] + "'");
    m.split = f[1] == "test" ? data::Split::test : data::Split::train;
    m.label = std::stoi(f[2]);
    m.vignette = f[4] == "1";
    m.scalebar = f[5] == "1";
    m.tint = f[6] == "1";
    m.vignette_intensity = std::stof(f[7]);
    m.scalebar_intensity = std::stof(f[8]);
    m.tint_intensity = std::stof(f[9]);
    if (m.id != out.size()) throw io::format_error("manifest: image ids must be 0..N-1 in order");
    out.push_back(m);
  }
  return out;
}

/// dataset.ictd holds the pixels, manifest.csv the metadata, images/<id>.png
/// an 8-bit copy for inspection.
inline void save_dataset(const fs::path& dir, const data::Dataset& ds, const ExperimentConfig& cfg,
                         bool write_pngs = true) {
  fs::create_directories(dir);
  io::Container c;
  c.fingerprint = dataset_fingerprint(cfg);
  const std::size_t n = ds.size(), s = ds.image_size();
  c.add("images", {n, 3, s, s}, ds.pixels());
  io::save_container(dir / kDatasetFile, c);
  io::write_text(dir / kManifestFile, manifest_csv(ds, cfg));
  if (write_pngs) {
    fs::create_directories(dir / "images");
    for (std::size_t i = 0; i < n; ++i)
      io::write_png(dir / "images" / (std::to_string(i) + ".png"), io::to_rgb(ds.pixels(i), s, s));
  }
}

/// Loads a dataset written by save_dataset; it must have been generated from
/// the same dataset section and seed as `cfg`.
inline data::Dataset load_dataset(const fs::path& dir, const ExperimentConfig& cfg) {
  const fs::path file = dir / kDatasetFile;
  if (!fs::exists(file)) throw io::io_error("no dataset at " + dir.string() + " (run gen-data first)");
  io::Container c;
  try {
    c = io::load_container(file, dataset_fingerprint(cfg));
  } catch (const io::format_error& e) {
    throw io::format_error(std::string(e.what()) + " (dataset was generated from a different config)");
  }
  const auto& images = c.get("images");
  auto meta = parse_manifest(io::read_text(dir / kManifestFile));
  if (meta.size() != images.shape.at(0)) throw io::format_error("manifest and image file disagree on image count");
  for (const auto& m : meta)
    if (m.label < 0 || static_cast<std::size_t>(m.label) >= cfg.n_classes())
      throw io::format_error("manifest: label out of range");
  return data::Dataset(images.shape.at(2), cfg.n_classes(), std::move(meta), images.data);
}

// ---- translation models and checkpoints --------------------------------------

struct NamedParam {
  std::string name;
  Tensor tensor;
};

/// Either a CycleGAN (two classes) or a StarGAN, built from a config.
class TranslationModel {
 public:
  explicit TranslationModel(const ExperimentConfig& cfg) : fingerprint_(model_fingerprint(cfg)) {
    const auto seed = derive_seed(cfg.seed, "init");
    if (cfg.model.type == ModelType::cyclegan)
      cyc_.emplace(gan::build_cyclegan(cfg.generator_config(), cfg.discriminator_config(), seed));
    else
      star_.emplace(gan::build_stargan(cfg.generator_config(), cfg.discriminator_config(), seed));
  }

  const std::string& fingerprint() const { return fingerprint_; }
  gan::CycleGan* cyclegan() { return cyc_ ? &*cyc_ : nullptr; }
  gan::StarGan* stargan() { return star_ ? &*star_ : nullptr; }

  distance::Translator translator() const { return cyc_ ? distance::Translator(*cyc_) : distance::Translator(*star_); }

  std::vector<ParameterSet<float>*> generator_sets() {
    if (cyc_) return {&cyc_->g_ab.params(), &cyc_->g_ba.params()};
    return {&star_->g.params()};
  }
  std::vector<ParameterSet<float>*> discriminator_sets() {
    if (cyc_) return {&cyc_->d_a.params(), &cyc_->d_b.params()};
    return {&star_->d.params()};
  }

  std::vector<NamedParam> parameters() {
    std::vector<NamedParam> out;
    for (auto* s : generator_sets())
      for (std::size_t i = 0; i < s->size(); ++i) out.push_back({s->names()[i], s->tensors()[i]});
    for (auto* s : discriminator_sets())
      for (std::size_t i = 0; i < s->size(); ++i) out.push_back({s->names()[i], s->tensors()[i]});
    return out;
  }

 private:
  std::string fingerprint_;
  std::optional<gan::CycleGan> cyc_;
  std::optional<gan::StarGan> star_;
};

struct TrainingState {
  gan::OptimizerPair optimizer;
  std::size_t iteration = 0;
};

namespace detail {

inline void put_adam(io::Container& c, const std::string& prefix, const AdamState<float>& st,
                     const std::vector<NamedParam>& params) {
  c.add(prefix + ".t", {1}, {static_cast<float>(st.t)});
  if (st.m.empty()) return;
  for (std::size_t i = 0; i < params.size(); ++i) {
    c.add(prefix + ".m." + params[i].name, params[i].tensor.shape(), st.m[i]);
    c.add(prefix + ".v." + params[i].name, params[i].tensor.shape(), st.v[i]);
  }
}

inline void get_adam(const io::Container& c, const std::string& prefix, AdamState<float>& st,
                     const std::vector<NamedParam>& params) {
  st.t = static_cast<std::uint64_t>(c.get(prefix + ".t").data.at(0));
  st.m.clear();
  st.v.clear();
  if (st.t == 0) return;
  for (const auto& p : params) {
    st.m.push_back(c.get(prefix + ".m." + p.name).data);
    st.v.push_back(c.get(prefix + ".v." + p.name).data);
  }
}

inline std::vector<NamedParam> named(const std::vector<ParameterSet<float>*>& sets) {
  std::vector<NamedParam> out;
  for (auto* s : sets)
    for (std::size_t i = 0; i < s->size(); ++i) out.push_back({s->names()[i], s->tensors()[i]});
  return out;
}

}  // namespace detail

inline io::Container checkpoint_container(TranslationModel& m, const TrainingState& st) {
  io::Container c;
  c.fingerprint = m.fingerprint();
  for (const auto& p : m.parameters()) c.add(p.name, p.tensor);
  detail::put_adam(c, "adam.generator", st.optimizer.generator, detail::named(m.generator_sets()));
  detail::put_adam(c, "adam.discriminator", st.optimizer.discriminator, detail::named(m.discriminator_sets()));
  c.add("state.iteration", {1}, {static_cast<float>(st.iteration)});
  return c;
}

/// Restores parameters (and, when `st` is given, optimizer state) from a
/// checkpoint written for the same architecture.
inline void restore_checkpoint(TranslationModel& m, const io::Container& c, TrainingState* st = nullptr) {
  if (c.fingerprint != m.fingerprint())
    throw io::format_error("checkpoint was written for a different model architecture");
  for (auto& p : m.parameters()) {
    const auto& t = c.get(p.name);
    if (t.shape != p.tensor.shape()) throw io::format_error("checkpoint: shape mismatch for " + p.name);
    std::copy(t.data.begin(), t.data.end(), p.tensor.mutable_data().begin());
  }
  if (st) {
    detail::get_adam(c, "adam.generator", st->optimizer.generator, detail::named(m.generator_sets()));
    detail::get_adam(c, "adam.discriminator", st->optimizer.discriminator, detail::named(m.discriminator_sets()));
    st->iteration = static_cast<std::size_t>(c.get("state.iteration").data.at(0));
  }
}

inline TranslationModel load_model(const ExperimentConfig& cfg, const fs::path& checkpoint) {
  TranslationModel m(cfg);
  restore_checkpoint(m, io::load_container(checkpoint, m.fingerprint()));
  return m;
}

// ---- training -------------------------------------------------------------------

inline constexpr const char* kFinalCheckpoint = "model.ictd";
inline constexpr const char* kLossFile = "losses.csv";

struct LossLog {
  std::vector<std::string> keys;
  std::vector<std::pair<std::size_t, std::vector<double>>> rows;

  void add(std::size_t iteration, const gan::LossRecord& rec) {
    if (keys.empty())
      for (const auto& [k, v] : rec) keys.push_back(k);
    std::vector<double> vals;
    for (const auto& k : keys) vals.push_back(rec.at(k));
    rows.push_back({iteration, std::move(vals)});
  }

  std::string csv() const {
    std::ostringstream os;
    os << "iteration";
    for (const auto& k : keys) os << ',' << k;
    os << '\n';
    char buf[64];
    for (const auto& [it, vals] : rows) {
      os << it;
      for (double v : vals) {
        std::snprintf(buf, sizeof buf, ",%.9g", v);
        os << buf;
      }
      os << '\n';
    }
    return os.str();
  }

  /// Rows up to and including `last_iteration` from an existing CSV.
  static LossLog parse(const std::string& text, std::size_t last_iteration) {
    LossLog log;
    std::istringstream is(text);
    std::string line, cell;
    if (!std::getline(is, line)) return log;
    std::istringstream hs(line);
    std::getline(hs, cell, ',');
    while (std::getline(hs, cell, ',')) log.keys.push_back(cell);
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::getline(ls, cell, ',');
      const auto it = static_cast<std::size_t>(std::stoull(cell));
      if (it > last_iteration) break;
      std::vector<double> vals;
      while (std::getline(ls, cell, ',')) vals.push_back(std::stod(cell));
      log.rows.push_back({it, std::move(vals)});
    }
    return log;
  }
};

struct TrainOptions {
  std::optional<fs::path> resume;  // checkpoint to continue from
  std::size_t stop_after = 0;      // stop early at this iteration (0 = run to the end)
  std::function<void(std::size_t, const gan::LossRecord&)> progress;
};

struct TrainSummary {
  std::size_t start_iteration = 0;
  std::size_t final_iteration = 0;
  std::vector<fs::path> checkpoints;
};

/// Draws the training batch for one iteration. Every iteration has its own
/// seed, so a resumed run continues exactly where the original would have.
inline gan::LossRecord train_iteration(TranslationModel& m, TrainingState& st, const ExperimentConfig& cfg,
                                       const data::Dataset& ds, std::size_t iteration) {
  Rng rng(derive_seed(derive_seed(cfg.seed, "training"), static_cast<std::uint64_t>(iteration)));
  const std::size_t bs = cfg.model.batch_size;
  const double lr = learning_rate_at(cfg.model, iteration);
  st.optimizer.generator.hyper.alpha = st.optimizer.discriminator.hyper.alpha = lr;
  if (auto* cyc = m.cyclegan()) {
    const auto a = ds.indices(data::Split::train, 0), b = ds.indices(data::Split::train, 1);
    if (a.empty() || b.empty()) throw std::invalid_argument("train: both classes need training images");
    std::vector<std::size_t> ia, ib;
    for (std::size_t i = 0; i < bs; ++i) ia.push_back(a[rng.index(a.size())]);
    for (std::size_t i = 0; i < bs; ++i) ib.push_back(b[rng.index(b.size())]);
    return gan::train_step_cyclegan(ds.batch(ia), ds.batch(ib), *cyc, st.optimizer, cfg.model.loss, rng);
  }
  auto* star = m.stargan();
  const auto train = ds.indices(data::Split::train);
  if (train.empty()) throw std::invalid_argument("train: no training images");
  const auto labels = ds.labels(train);
  const classify::WeightedSampler sampler(labels, ds.n_classes());
  std::vector<std::size_t> idx;
  std::vector<int> truth, target;
  const auto k = ds.n_classes();
  for (std::size_t i = 0; i < bs; ++i) {
    const std::size_t j = sampler.next(rng);
    idx.push_back(train[j]);
    truth.push_back(labels[j]);
    // A different class, uniformly.
    const auto shift = 1 + rng.index(k - 1);
    target.push_back(static_cast<int>((static_cast<std::size_t>(labels[j]) + shift) % k));
  }
  return gan::train_step_stargan(ds.batch(idx), truth, target, *star, st.optimizer, cfg.model.loss, rng);
}

inline std::string checkpoint_name(std::size_t iteration) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%07zu.ictd", iteration);
  return buf;
}

/// Trains to cfg.model.iterations, logging every log_every iterations and
/// writing checkpoints/ckpt_<iteration>.ictd every checkpoint_every
/// iterations plus model.ictd at the end.
inline TrainSummary train(const ExperimentConfig& cfg, const data::Dataset& ds, const fs::path& out,
                          const TrainOptions& opt = {}) {
  cfg.validate();
  if (ds.n_classes() != cfg.n_classes() || ds.image_size() != cfg.dataset.image_size)
    throw std::invalid_argument("train: dataset does not match the config");
  TranslationModel model(cfg);
  TrainingState st{gan::OptimizerPair(cfg.model.optimizer), 0};
  LossLog log;
  if (opt.resume) {
    restore_checkpoint(model, io::load_container(*opt.resume, model.fingerprint()), &st);
    if (fs::exists(out / kLossFile)) log = LossLog::parse(io::read_text(out / kLossFile), st.iteration);
  }
  TrainSummary summary;
  summary.start_iteration = st.iteration;
  const std::size_t end = opt.stop_after ? std::min(opt.stop_after, cfg.model.iterations) : cfg.model.iterations;
  auto save = [&](const fs::path& p) {
    io::save_container(p, checkpoint_container(model, st));
    io::write_text(out / kLossFile, log.csv());
    summary.checkpoints.push_back(p);
  };
  while (st.iteration < end) {
    const std::size_t it = st.iteration + 1;
    auto rec = train_iteration(model, st, cfg, ds, it);
    st.iteration = it;
    if (it % cfg.model.log_every == 0) log.add(it, rec);
    if (opt.progress) opt.progress(it, rec);
    if (cfg.model.checkpoint_every && it % cfg.model.checkpoint_every == 0 && it < cfg.model.iterations) {
      fs::create_directories(out / "checkpoints");
      save(out / "checkpoints" / checkpoint_name(it));
    }
  }
  save(out / (st.iteration == cfg.model.iterations ? fs::path(kFinalCheckpoint) : fs::path(checkpoint_name(st.iteration))));
  summary.final_iteration = st.iteration;
  return summary;
}

// ---- extraction -------------------------------------------------------------------

inline constexpr const char* kDistancesFile = "distances.csv";

/// Distances for every image of the dataset; with `images_dir` set, also
/// writes <id>_to_<class>.png for each translation.
inline distance::DistanceMatrix extract(const ExperimentConfig& cfg, const data::Dataset& ds, TranslationModel& m,
                                        const fs::path& out, const std::optional<fs::path>& images_dir = {}) {
  const auto tr = m.translator();
  std::function<void(const distance::TranslationRecord&)> sink;
  if (images_dir) {
    fs::create_directories(*images_dir);
    const std::size_t s = ds.image_size();
    sink = [&](const distance::TranslationRecord& r) {
      for (std::size_t k = 0; k < r.generated.size(); ++k)
        io::write_png(*images_dir / (std::to_string(r.image_id) + "_to_" + std::to_string(k) + ".png"),
                      io::to_rgb(r.generated[k].data(), s, s));
    };
  }
  auto dm = distance::extract_features(ds, tr, cfg.n_classes(), sink);
  io::write_text(out / kDistancesFile, dm.to_csv());
  return dm;
}

// ---- classification and evaluation -------------------------------------------------

inline constexpr const char* kMetricsFile = "metrics.json";

struct ClassifyResult {
  eval::EvalReport report;
  classify::ClassifierModel model;
  classify::Prediction prediction;
};

namespace detail {

inline std::vector<std::size_t> rows_in_split(const distance::DistanceMatrix& dm, const data::Dataset& ds,
                                              data::Split s) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < dm.rows(); ++i)
    if (ds.meta(dm.ids()[i]).split == s) out.push_back(i);
  return out;
}

inline classify::Matrix features(const distance::DistanceMatrix& dm) {
  classify::Matrix x;
  for (std::size_t i = 0; i < dm.rows(); ++i) x.push_back(dm.row(i));
  return x;
}

inline void write_report(const fs::path& out, const eval::EvalReport& r, nlohmann::ordered_json extra = {}) {
  auto j = eval::metrics_json(r);
  for (auto& [k, v] : extra.items()) j[k] = v;
  io::write_text(out / kMetricsFile, j.dump(2) + "\n");
  if (r.auroc) io::write_text(out / "roc.csv", eval::roc_csv(r.roc));
}

}  // namespace detail

/// Fits the configured classifier on the training rows, evaluates it on the
/// test rows, and writes metrics.json, roc.csv (two classes), the figure CSVs
/// and classifier.ictd.
inline ClassifyResult classify_eval(const ExperimentConfig& cfg, const data::Dataset& ds,
                                    const distance::DistanceMatrix& dm, const fs::path& out) {
  if (dm.n_classes() != ds.n_classes()) throw dimension_error("classify-eval: distances do not match the dataset");
  const auto train_rows = detail::rows_in_split(dm, ds, data::Split::train);
  const auto test_rows = detail::rows_in_split(dm, ds, data::Split::test);
  if (test_rows.empty()) throw std::invalid_argument("classify-eval: no test rows");
  const auto train = dm.subset(train_rows), test = dm.subset(test_rows);
  const std::size_t k = dm.n_classes();

  auto x = detail::features(train);
  auto y = train.labels();
  std::vector<double> cw;
  auto fit_opt = cfg.classifier.fit;
  fit_opt.seed = derive_seed(cfg.seed, "sampling");
  if (cfg.classifier.kind != classify::Kind::argmin) {
    if (train_rows.empty()) throw std::invalid_argument("classify-eval: no training rows");
    std::vector<std::size_t> counts(k, 0);
    for (int l : y) ++counts.at(static_cast<std::size_t>(l));
    if (cfg.classifier.imbalance == Imbalance::class_weights) cw = classify::class_weights(counts);
    if (cfg.classifier.imbalance == Imbalance::sample_weights) {
      const classify::WeightedSampler sampler(y, k);
      Rng rng(derive_seed(fit_opt.seed, "resample"));
      classify::Matrix xs;
      std::vector<int> ys;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const auto j = sampler.next(rng);
        xs.push_back(x[j]);
        ys.push_back(y[j]);
      }
      x = std::move(xs);
      y = std::move(ys);
    }
  }
  ClassifyResult res;
  res.model = classify::fit(cfg.classifier.kind, x, y, k, cw, fit_opt);
  res.prediction = classify::predict(res.model, detail::features(test));
  res.report = eval::evaluate(test.labels(), res.prediction.labels, k, res.prediction.binary_score);
  detail::write_report(out, res.report, {{"classifier", classify::to_string(cfg.classifier.kind)}});
  for (const auto& f : eval::export_figure_data(test)) io::write_text(out / f.name, f.csv);
  classify::save(out / "classifier.ictd", res.model);
  return res;
}

// ---- baseline ------------------------------------------------------------------------

struct BaselineRun {
  eval::EvalReport report;
  baseline::TrainResult training;
  std::vector<double> test_proba;
};

inline baseline::BaselineConfig baseline_config(const ExperimentConfig& cfg) {
  baseline::BaselineConfig b;
  b.image_size = cfg.dataset.image_size;
  b.n_classes = cfg.n_classes();
  b.epochs = cfg.baseline.epochs;
  b.patience = cfg.baseline.patience;
  b.val_fraction = cfg.baseline.val_fraction;
  b.batch_size = cfg.baseline.batch_size;
  b.learning_rate = cfg.baseline.learning_rate;
  b.imbalance = cfg.baseline.imbalance;
  b.augment_config = cfg.baseline.augment;
  return b;
}

/// Trains the baseline CNN on the training split (minus a stratified
/// validation hold-out) and evaluates it on the test split. Writes
/// metrics.json (same schema as classify-eval), baseline_log.csv and
/// baseline.ictd.
inline BaselineRun run_baseline(const ExperimentConfig& cfg, const data::Dataset& ds, const fs::path& out) {
  const auto bcfg = baseline_config(cfg);
  baseline::BaselineCnn net(bcfg, derive_seed(derive_seed(cfg.seed, "init"), "baseline"));
  const auto all_train = ds.indices(data::Split::train);
  const auto [train, val] =
      baseline::stratified_holdout(ds, all_train, bcfg.val_fraction, derive_seed(cfg.seed, "sampling"));
  BaselineRun run;
  run.training = baseline::train_baseline(net, ds, train, val, derive_seed(derive_seed(cfg.seed, "training"), "baseline"));
  const auto test = ds.indices(data::Split::test);
  run.test_proba = baseline::predict_proba(net, ds.batch(test));
  const auto k = ds.n_classes();
  const auto pred = baseline::argmax_rows(run.test_proba, k);
  std::vector<double> score;
  if (k == 2)
    for (std::size_t i = 0; i < test.size(); ++i) score.push_back(run.test_proba[i * 2 + 1]);
  run.report = eval::evaluate(ds.labels(test), pred, k, score);
  detail::write_report(out, run.report,
                       {{"classifier", "baseline_cnn"},
                        {"best_epoch", run.training.best_epoch},
                        {"stopped_epoch", run.training.stopped_epoch}});
  io::write_text(out / "baseline_log.csv", baseline::log_csv(run.training));
  io::save_container(out / "baseline.ictd", baseline::to_container(net));
  return run;
}

// ---- grids ------------------------------------------------------------------------

/// Grid of the first `per_class` test images of each class and all their
/// translations.
inline io::RgbImage translation_grid(const data::Dataset& ds, TranslationModel& m, std::size_t per_class) {
  const auto tr = m.translator();
  std::vector<GridRow> rows;
  for (std::size_t c = 0; c < ds.n_classes(); ++c) {
    auto idx = ds.indices(data::Split::test, static_cast<int>(c));
    for (std::size_t i = 0; i < std::min(per_class, idx.size()); ++i) {
      GridRow r;
      r.source = ds.image(idx[i]);
      r.true_label = static_cast<int>(c);
      r.translations = distance::translate_all(r.source, tr, ds.n_classes());
      rows.push_back(std::move(r));
    }
  }
  return render_grid(rows);
}

}  // namespace ictd::exp
