#pragma once

// Experiment configuration: JSON with strict key checking, canonical
// serialization (sorted keys) and the shipped recipes.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ictd/adam.hpp"
#include "ictd/classify/classifiers.hpp"
#include "ictd/data/synth.hpp"
#include "ictd/gan/losses.hpp"
#include "ictd/gan/models.hpp"
#include "ictd/io/container.hpp"

namespace ictd::exp {

using json = nlohmann::json;

class config_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ModelType { cyclegan, stargan };
using classify::Imbalance;

struct ModelSection {
  ModelType type = ModelType::cyclegan;
  std::size_t base_channels = 32;
  std::size_t n_residual_blocks = 3;
  double dropout_rate = 0.5;
  bool use_dropout = true;
  std::size_t disc_base_channels = 32;
  std::size_t n_downsamples = 3;
  gan::LossWeights loss = gan::LossWeights::cyclegan_defaults();
  AdamHyper optimizer;
  // The learning rate decays linearly to zero over the iterations after this
  // fraction of the run (1 keeps it constant).
  double decay_from = 0.5;
  std::size_t iterations = 2000;
  std::size_t batch_size = 1;
  std::size_t log_every = 10;
  std::size_t checkpoint_every = 0;  // 0 = final checkpoint only
};

struct ClassifierSection {
  classify::Kind kind = classify::Kind::argmin;
  Imbalance imbalance = Imbalance::none;
  classify::FitOptions fit;
};

struct BaselineSection {
  std::size_t epochs = 60;
  std::size_t patience = 20;
  double val_fraction = 0.1;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  Imbalance imbalance = Imbalance::class_weights;
  data::AugmentConfig augment;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  data::DatasetConfig dataset;  // dataset.seed is derived from seed
  ModelSection model;
  ClassifierSection classifier;
  BaselineSection baseline;

  std::size_t n_classes() const { return dataset.n_classes(); }

  data::DatasetConfig resolved_dataset() const {
    auto d = dataset;
    d.seed = derive_seed(seed, "data");
    return d;
  }

  gan::GeneratorConfig generator_config() const {
    gan::GeneratorConfig g;
    g.image_size = dataset.image_size;
    g.base_channels = model.base_channels;
    g.n_residual_blocks = model.n_residual_blocks;
    g.dropout_rate = model.dropout_rate;
    g.use_dropout = model.use_dropout;
    g.n_classes = model.type == ModelType::stargan ? n_classes() : 1;
    return g;
  }

  gan::DiscriminatorConfig discriminator_config() const {
    gan::DiscriminatorConfig d;
    d.image_size = dataset.image_size;
    d.base_channels = model.disc_base_channels;
    d.n_downsamples = model.n_downsamples;
    d.with_class_head = model.type == ModelType::stargan;
    d.n_classes = n_classes();
    return d;
  }

  void validate() const {
    dataset.validate();
    generator_config().validate();
    discriminator_config().validate();
    model.loss.validate();
    if (model.type == ModelType::cyclegan && n_classes() != 2)
      throw config_error("cyclegan experiments need exactly two classes");
    if (model.batch_size == 0) throw config_error("model.batch_size must be positive");
    if (model.log_every == 0) throw config_error("model.log_every must be positive");
    if (!(model.decay_from >= 0 && model.decay_from <= 1))
      throw config_error("model.optimizer.decay_from must be in [0,1]");
    if (!(baseline.val_fraction > 0 && baseline.val_fraction < 1))
      throw config_error("baseline.val_fraction must be in (0,1)");
    if (baseline.batch_size == 0 || baseline.epochs == 0)
      throw config_error("baseline epochs and batch_size must be positive");
  }
};

/// Learning rate for 1-based iteration `it`: constant up to decay_from *
/// iterations, then linear down to alpha / (number of decay iterations) at
/// the last iteration.
inline double learning_rate_at(const ModelSection& m, std::size_t it) {
  const auto start = static_cast<std::size_t>(std::floor(m.decay_from * static_cast<double>(m.iterations)));
  if (it <= start || start >= m.iterations) return m.optimizer.alpha;
  const auto left = static_cast<double>(m.iterations - std::min(it, m.iterations) + 1);
  return m.optimizer.alpha * left / static_cast<double>(m.iterations - start);
}

// ---- string enums -------------------------------------------------------------

namespace detail {

template <class E>
struct EnumNames;

template <>
struct EnumNames<ModelType> {
  static constexpr std::pair<ModelType, const char*> v[] = {{ModelType::cyclegan, "cyclegan"},
                                                            {ModelType::stargan, "stargan"}};
};
template <>
struct EnumNames<Imbalance> {
  static constexpr std::pair<Imbalance, const char*> v[] = {{Imbalance::none, "none"},
                                                            {Imbalance::sample_weights, "sample_weights"},
                                                            {Imbalance::class_weights, "class_weights"}};
};
template <>
struct EnumNames<data::Texture> {
  static constexpr std::pair<data::Texture, const char*> v[] = {{data::Texture::smooth, "smooth"},
                                                                {data::Texture::speckled, "speckled"},
                                                                {data::Texture::striped, "striped"}};
};
template <>
struct EnumNames<data::ShapeKind> {
  static constexpr std::pair<data::ShapeKind, const char*> v[] = {{data::ShapeKind::disc, "disc"},
                                                                  {data::ShapeKind::blob, "blob"}};
};
template <>
struct EnumNames<Reduction> {
  static constexpr std::pair<Reduction, const char*> v[] = {{Reduction::mean, "mean"}, {Reduction::sum, "sum"}};
};

template <class E>
std::string enum_name(E e) {
  for (const auto& [k, n] : EnumNames<E>::v)
    if (k == e) return n;
  throw config_error("unnamed enum value");
}

template <class E>
E enum_value(const std::string& s, const std::string& path) {
  std::string allowed;
  for (const auto& [k, n] : EnumNames<E>::v) {
    if (s == n) return k;
    allowed += std::string(allowed.empty() ? "" : ", ") + n;
  }
  throw config_error(path + ": '" + s + "' is not one of " + allowed);
}

// Reads keys from one JSON object and rejects any key nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw config_error(path_ + ": expected an object");
  }
  ~ObjectReader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw config_error("unknown configuration key '" + where(k) + "'");
  }
  ObjectReader(const ObjectReader&) = delete;
  ObjectReader& operator=(const ObjectReader&) = delete;

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw config_error(where(key) + ": " + e.what());
    }
  }

  template <class E>
  void get_enum(const std::string& key, E& out) {
    std::string s;
    if (!has(key)) return;
    get(key, s);
    out = enum_value<E>(s, where(key));
  }

  void get_range(const std::string& key, double& lo, double& hi) {
    std::vector<double> v;
    if (!has(key)) return;
    get(key, v);
    if (v.size() != 2) throw config_error(where(key) + ": expected [lo, hi]");
    lo = v[0];
    hi = v[1];
  }

  const json& at(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline json range(double lo, double hi) { return json::array({lo, hi}); }

}  // namespace detail

// ---- serialization ----------------------------------------------------------

inline json to_json(const ExperimentConfig& c) {
  using detail::enum_name;
  using detail::range;
  json classes = json::array();
  for (const auto& k : c.dataset.classes) {
    classes.push_back({{"name", k.name},
                       {"hue", range(k.hue_lo, k.hue_hi)},
                       {"texture", enum_name(k.texture)},
                       {"shape", enum_name(k.shape)},
                       {"size", range(k.size_lo, k.size_hi)},
                       {"saturation", range(k.sat_lo, k.sat_hi)},
                       {"value", range(k.val_lo, k.val_hi)}});
  }
  auto artifact = [](const data::ArtifactSpec& a, bool with_hue) {
    json j{{"probability", a.probability}, {"intensity", range(a.intensity_lo, a.intensity_hi)}};
    if (with_hue) j["hue"] = a.hue;
    return j;
  };
  const auto& m = c.model;
  const auto& a = c.baseline.augment;
  return json{
      {"name", c.name},
      {"seed", c.seed},
      {"dataset",
       {{"image_size", c.dataset.image_size},
        {"test_fraction", c.dataset.test_fraction},
        {"n_per_class", c.dataset.n_per_class},
        {"classes", classes},
        {"artifacts",
         {{"vignette", artifact(c.dataset.artifacts.vignette, false)},
          {"scalebar", artifact(c.dataset.artifacts.scalebar, false)},
          {"background_tint", artifact(c.dataset.artifacts.background_tint, true)}}}}},
      {"model",
       {{"type", enum_name(m.type)},
        {"generator",
         {{"base_channels", m.base_channels},
          {"n_residual_blocks", m.n_residual_blocks},
          {"dropout_rate", m.dropout_rate},
          {"use_dropout", m.use_dropout}}},
        {"discriminator", {{"base_channels", m.disc_base_channels}, {"n_downsamples", m.n_downsamples}}},
        {"loss",
         {{"lambda_adv", m.loss.lambda_adv},
          {"lambda_identity", m.loss.lambda_identity},
          {"lambda_cycle", m.loss.lambda_cycle},
          {"lambda_cls", m.loss.lambda_cls},
          {"reduction", enum_name(m.loss.reduction)}}},
        {"optimizer",
         {{"alpha", m.optimizer.alpha},
          {"beta1", m.optimizer.beta1},
          {"beta2", m.optimizer.beta2},
          {"epsilon", m.optimizer.epsilon},
          {"decay_from", m.decay_from}}},
        {"iterations", m.iterations},
        {"batch_size", m.batch_size},
        {"log_every", m.log_every},
        {"checkpoint_every", m.checkpoint_every}}},
      {"classifier",
       {{"kind", classify::to_string(c.classifier.kind)},
        {"imbalance", enum_name(c.classifier.imbalance)},
        {"c", c.classifier.fit.c},
        {"iterations", c.classifier.fit.iterations},
        {"hidden", c.classifier.fit.hidden}}},
      {"baseline",
       {{"epochs", c.baseline.epochs},
        {"patience", c.baseline.patience},
        {"val_fraction", c.baseline.val_fraction},
        {"batch_size", c.baseline.batch_size},
        {"learning_rate", c.baseline.learning_rate},
        {"imbalance", enum_name(c.baseline.imbalance)},
        {"augment", {{"hflip", a.hflip}, {"vflip", a.vflip}, {"brightness", a.brightness}, {"contrast", a.contrast}}}}}};
}

/// Missing keys keep the values already in `base`; unknown keys are errors.
inline ExperimentConfig from_json(const json& j, ExperimentConfig base = {}) {
  using detail::ObjectReader;
  ExperimentConfig c = std::move(base);
  ObjectReader r(j, "");
  r.get("name", c.name);
  r.get("seed", c.seed);
  if (r.has("dataset")) {
    ObjectReader d(r.at("dataset"), "dataset");
    d.get("image_size", c.dataset.image_size);
    d.get("test_fraction", c.dataset.test_fraction);
    d.get("n_per_class", c.dataset.n_per_class);
    if (d.has("classes")) {
      const auto& arr = d.at("classes");
      if (!arr.is_array()) throw config_error("dataset.classes: expected an array");
      c.dataset.classes.clear();
      for (std::size_t i = 0; i < arr.size(); ++i) {
        data::ClassSpec k;
        ObjectReader kr(arr[i], "dataset.classes[" + std::to_string(i) + "]");
        kr.get("name", k.name);
        kr.get_range("hue", k.hue_lo, k.hue_hi);
        kr.get_enum("texture", k.texture);
        kr.get_enum("shape", k.shape);
        kr.get_range("size", k.size_lo, k.size_hi);
        kr.get_range("saturation", k.sat_lo, k.sat_hi);
        kr.get_range("value", k.val_lo, k.val_hi);
        c.dataset.classes.push_back(k);
      }
    }
    if (d.has("artifacts")) {
      ObjectReader ar(d.at("artifacts"), "dataset.artifacts");
      auto read = [&](const char* key, data::ArtifactSpec& a, bool with_hue) {
        if (!ar.has(key)) return;
        ObjectReader x(ar.at(key), std::string("dataset.artifacts.") + key);
        x.get("probability", a.probability);
        x.get_range("intensity", a.intensity_lo, a.intensity_hi);
        if (with_hue) x.get("hue", a.hue);
      };
      read("vignette", c.dataset.artifacts.vignette, false);
      read("scalebar", c.dataset.artifacts.scalebar, false);
      read("background_tint", c.dataset.artifacts.background_tint, true);
    }
  }
  if (r.has("model")) {
    auto& m = c.model;
    ObjectReader mr(r.at("model"), "model");
    mr.get_enum("type", m.type);
    if (mr.has("generator")) {
      ObjectReader g(mr.at("generator"), "model.generator");
      g.get("base_channels", m.base_channels);
      g.get("n_residual_blocks", m.n_residual_blocks);
      g.get("dropout_rate", m.dropout_rate);
      g.get("use_dropout", m.use_dropout);
    }
    if (mr.has("discriminator")) {
      ObjectReader dr(mr.at("discriminator"), "model.discriminator");
      dr.get("base_channels", m.disc_base_channels);
      dr.get("n_downsamples", m.n_downsamples);
    }
    if (mr.has("loss")) {
      ObjectReader l(mr.at("loss"), "model.loss");
      l.get("lambda_adv", m.loss.lambda_adv);
      l.get("lambda_identity", m.loss.lambda_identity);
      l.get("lambda_cycle", m.loss.lambda_cycle);
      l.get("lambda_cls", m.loss.lambda_cls);
      l.get_enum("reduction", m.loss.reduction);
    }
    if (mr.has("optimizer")) {
      ObjectReader o(mr.at("optimizer"), "model.optimizer");
      o.get("alpha", m.optimizer.alpha);
      o.get("beta1", m.optimizer.beta1);
      o.get("beta2", m.optimizer.beta2);
      o.get("epsilon", m.optimizer.epsilon);
      o.get("decay_from", m.decay_from);
    }
    mr.get("iterations", m.iterations);
    mr.get("batch_size", m.batch_size);
    mr.get("log_every", m.log_every);
    mr.get("checkpoint_every", m.checkpoint_every);
  }
  if (r.has("classifier")) {
    ObjectReader cr(r.at("classifier"), "classifier");
    if (cr.has("kind")) {
      std::string k;
      cr.get("kind", k);
      try {
        c.classifier.kind = classify::kind_from_string(k);
      } catch (const std::invalid_argument& e) {
        throw config_error(std::string("classifier.kind: ") + e.what());
      }
    }
    cr.get_enum("imbalance", c.classifier.imbalance);
    cr.get("c", c.classifier.fit.c);
    cr.get("iterations", c.classifier.fit.iterations);
    cr.get("hidden", c.classifier.fit.hidden);
  }
  if (r.has("baseline")) {
    auto& b = c.baseline;
    ObjectReader br(r.at("baseline"), "baseline");
    br.get("epochs", b.epochs);
    br.get("patience", b.patience);
    br.get("val_fraction", b.val_fraction);
    br.get("batch_size", b.batch_size);
    br.get("learning_rate", b.learning_rate);
    br.get_enum("imbalance", b.imbalance);
    if (br.has("augment")) {
      ObjectReader a(br.at("augment"), "baseline.augment");
      a.get("hflip", b.augment.hflip);
      a.get("vflip", b.augment.vflip);
      a.get("brightness", b.augment.brightness);
      a.get("contrast", b.augment.contrast);
    }
  }
  return c;
}

/// Sorted-key, 2-space indented JSON with a trailing newline.
inline std::string canonical(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

/// Identifies a model architecture and its training objective. Checkpoints
/// store it; loading into a different architecture is rejected.
inline std::string model_fingerprint(const ExperimentConfig& c) {
  json model = to_json(c)["model"];
  for (const char* k : {"iterations", "batch_size", "log_every", "checkpoint_every"}) model.erase(k);
  json f{{"adversarial", "least_squares"},
         {"image_size", c.dataset.image_size},
         {"n_classes", c.n_classes()},
         {"model", model}};
  return f.dump();
}

// ---- recipes ----------------------------------------------------------------

namespace detail {

inline data::ClassSpec cls(std::string name, double h0, double h1, data::Texture t, data::ShapeKind s,
                           double z0, double z1) {
  data::ClassSpec k;
  k.name = std::move(name);
  k.hue_lo = h0;
  k.hue_hi = h1;
  k.texture = t;
  k.shape = s;
  k.size_lo = z0;
  k.size_hi = z1;
  return k;
}

inline ExperimentConfig fruits_base(std::string name) {
  using data::ShapeKind;
  using data::Texture;
  ExperimentConfig c;
  c.name = std::move(name);
  c.dataset.classes = {cls("apple", 85, 95, Texture::smooth, ShapeKind::disc, 0.5, 0.75),
                       cls("orange", 27, 37, Texture::speckled, ShapeKind::disc, 0.5, 0.75)};
  c.dataset.n_per_class = {250, 250};  // 200 train / 50 test per class
  c.model.type = ModelType::cyclegan;
  c.model.loss = {1.0, 5.0, 0.0, 1.0, Reduction::mean};
  c.model.iterations = 2000;
  c.model.batch_size = 1;
  c.classifier.kind = classify::Kind::argmin;
  return c;
}

inline ExperimentConfig cells_base(std::string name, std::size_t k) {
  using data::ShapeKind;
  using data::Texture;
  const std::vector<data::ClassSpec> all = {
      cls("lymphocyte", 262, 272, Texture::smooth, ShapeKind::disc, 0.35, 0.5),
      cls("neutrophil", 312, 322, Texture::speckled, ShapeKind::blob, 0.55, 0.75),
      cls("eosinophil", 10, 20, Texture::striped, ShapeKind::blob, 0.5, 0.7),
      cls("monocyte", 205, 215, Texture::smooth, ShapeKind::blob, 0.6, 0.8),
      cls("basophil", 50, 60, Texture::speckled, ShapeKind::disc, 0.45, 0.6),
      cls("plasma_cell", 135, 145, Texture::striped, ShapeKind::disc, 0.4, 0.55)};
  ExperimentConfig c;
  c.name = std::move(name);
  c.dataset.classes.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
  c.dataset.n_per_class.assign(k, 250);
  c.model.type = ModelType::stargan;
  c.model.loss = gan::LossWeights::stargan_defaults();
  // 0.001 read as a per-element weight: under mean reduction the same penalty
  // is 0.001 * C*H*W.
  const auto s = static_cast<double>(c.dataset.image_size);
  c.model.loss.lambda_identity *= 3.0 * s * s;
  c.model.iterations = 4000;
  c.model.batch_size = 1;
  c.classifier.kind = classify::Kind::argmin;
  return c;
}

}  // namespace detail

inline std::vector<std::string> recipe_names() { return {"fruits2", "fruits2-bias", "cells3", "cells6"}; }

inline ExperimentConfig recipe(const std::string& name) {
  if (name == "fruits2") return detail::fruits_base(name);
  if (name == "fruits2-bias") {
    auto c = detail::fruits_base(name);
    auto& a = c.dataset.artifacts;
    a.vignette.probability = {0.1, 0.9};
    a.vignette.intensity_lo = 0.6;
    a.vignette.intensity_hi = 0.9;
    a.scalebar.probability = {0.0, 0.5};
    a.scalebar.intensity_lo = 0.6;
    a.scalebar.intensity_hi = 0.9;
    a.background_tint.probability = {0.0, 1.0};
    a.background_tint.hue = 340;
    a.background_tint.intensity_lo = 0.15;
    a.background_tint.intensity_hi = 0.3;
    return c;
  }
  if (name == "cells3") return detail::cells_base(name, 3);
  if (name == "cells6") return detail::cells_base(name, 6);
  throw config_error("unknown recipe '" + name + "'");
}

/// A path to a JSON file, or the name of a shipped recipe.
inline ExperimentConfig load_config(const std::string& path_or_recipe) {
  if (std::filesystem::exists(path_or_recipe)) {
    json j;
    try {
      j = json::parse(io::read_text(path_or_recipe));
    } catch (const json::parse_error& e) {
      throw config_error(path_or_recipe + ": " + e.what());
    }
    // A config file may start from a recipe via "recipe": "<name>".
    ExperimentConfig base;
    if (j.is_object() && j.contains("recipe")) {
      base = recipe(j["recipe"].get<std::string>());
      j.erase("recipe");
    }
    auto c = from_json(j, base);
    c.validate();
    return c;
  }
  for (const auto& n : recipe_names())
    if (n == path_or_recipe) return recipe(n);
  throw config_error("no config file or recipe named '" + path_or_recipe + "'");
}

}  // namespace ictd::exp
