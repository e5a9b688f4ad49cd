// Command-line front end: gen-data, train, extract, classify-eval, baseline,
// render-grid. Every verb takes --config (file or recipe name), --out,
// --seed and --force, and writes config.json into its output directory.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ictd/experiments/pipeline.hpp"

using namespace ictd;
using namespace ictd::exp;

namespace {

struct Common {
  std::string config = "fruits2";
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> set;
  bool force = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Config file (JSON) or recipe name: fruits2, fruits2-bias, cells3, cells6")
      ->capture_default_str();
  app->add_option("--out", c.out, "Output directory")->required();
  app->add_option("--seed", c.seed, "Override the config seed");
  app->add_option("--set", c.set, "Override a config key, e.g. --set model.iterations=500 (value is JSON)");
  app->add_flag("--force", c.force, "Allow writing into a non-empty output directory");
}

// Applies "a.b.c=value" overrides on top of the config; the value is parsed as
// JSON, falling back to a plain string.
ExperimentConfig resolve(const Common& c) {
  auto cfg = load_config(c.config);
  if (!c.set.empty()) {
    json j = json::object();
    for (const auto& kv : c.set) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw config_error("--set expects key=value, got '" + kv + "'");
      json value;
      try {
        value = json::parse(kv.substr(eq + 1));
      } catch (const json::parse_error&) {
        value = kv.substr(eq + 1);
      }
      json* node = &j;
      std::string path = kv.substr(0, eq);
      for (std::size_t pos; (pos = path.find('.')) != std::string::npos; path = path.substr(pos + 1))
        node = &(*node)[path.substr(0, pos)];
      (*node)[path] = value;
    }
    cfg = from_json(j, cfg);
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

fs::path start(const Common& c, const ExperimentConfig& cfg, bool allow_existing = false) {
  const fs::path out(c.out);
  prepare_output_dir(out, c.force || allow_existing);
  write_config_snapshot(out, cfg);
  return out;
}

void print_metrics(const eval::EvalReport& r) {
  std::printf("overall accuracy %.4f", r.overall);
  if (r.auroc) std::printf(", AUROC %.4f", *r.auroc);
  std::printf(" on %zu test images\n", r.n_test);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Image-to-image translation distances for classification and bias discovery"};
  app.require_subcommand(1);

  Common gen_c, train_c, extract_c, eval_c, base_c, grid_c;
  std::string train_data, extract_data, eval_data, base_data, grid_data;
  std::string resume, extract_ckpt, grid_ckpt, distances;
  bool save_images = false, no_pngs = false;
  std::size_t per_class = 4;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  add_common(gen, gen_c);
  gen->add_flag("--no-png", no_pngs, "Skip the per-image PNG copies");

  auto* train_cmd = app.add_subcommand("train", "Train the translation model");
  add_common(train_cmd, train_c);
  train_cmd->add_option("--data", train_data, "Dataset directory from gen-data")->required();
  train_cmd->add_option("--resume", resume, "Checkpoint to resume from");

  auto* extract_cmd = app.add_subcommand("extract", "Compute translation distances for every image");
  add_common(extract_cmd, extract_c);
  extract_cmd->add_option("--data", extract_data, "Dataset directory")->required();
  extract_cmd->add_option("--checkpoint", extract_ckpt, "Trained model checkpoint")->required();
  extract_cmd->add_flag("--images", save_images, "Also write every translated image as PNG");

  auto* eval_cmd = app.add_subcommand("classify-eval", "Fit a classifier on distances and evaluate it");
  add_common(eval_cmd, eval_c);
  eval_cmd->add_option("--data", eval_data, "Dataset directory (for the train/test split)")->required();
  eval_cmd->add_option("--distances", distances, "distances.csv from extract")->required();

  auto* base_cmd = app.add_subcommand("baseline", "Train and evaluate the baseline CNN");
  add_common(base_cmd, base_c);
  base_cmd->add_option("--data", base_data, "Dataset directory")->required();

  auto* grid_cmd = app.add_subcommand("render-grid", "Render source images with all their translations");
  add_common(grid_cmd, grid_c);
  grid_cmd->add_option("--data", grid_data, "Dataset directory")->required();
  grid_cmd->add_option("--checkpoint", grid_ckpt, "Trained model checkpoint")->required();
  grid_cmd->add_option("--per-class", per_class, "Test images per class")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const auto cfg = resolve(gen_c);
      const auto out = start(gen_c, cfg);
      const auto ds = data::generate_dataset(cfg.resolved_dataset());
      save_dataset(out, ds, cfg, !no_pngs);
      const auto tr = ds.class_counts(data::Split::train), te = ds.class_counts(data::Split::test);
      std::printf("%zu images in %s\n", ds.size(), out.c_str());
      for (std::size_t k = 0; k < ds.n_classes(); ++k)
        std::printf("  %-12s train %zu  test %zu\n", cfg.dataset.classes[k].name.c_str(), tr[k], te[k]);
    } else if (train_cmd->parsed()) {
      const auto cfg = resolve(train_c);
      const auto out = start(train_c, cfg, !resume.empty());
      const auto ds = load_dataset(train_data, cfg);
      TrainOptions opt;
      if (!resume.empty()) opt.resume = fs::path(resume);
      const auto t0 = std::chrono::steady_clock::now();
      const std::size_t every = std::max<std::size_t>(1, cfg.model.iterations / 20);
      opt.progress = [&](std::size_t it, const gan::LossRecord& rec) {
        if (it % every != 0 && it != cfg.model.iterations) return;
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("iter %zu/%zu  %.0fs ", it, cfg.model.iterations, s);
        for (const auto& [k, v] : rec) std::printf(" %s=%.4f", k.c_str(), v);
        std::printf("\n");
        std::fflush(stdout);
      };
      const auto summary = train(cfg, ds, out, opt);
      std::printf("trained iterations %zu..%zu; checkpoint %s\n", summary.start_iteration, summary.final_iteration,
                  summary.checkpoints.back().c_str());
    } else if (extract_cmd->parsed()) {
      const auto cfg = resolve(extract_c);
      const auto out = start(extract_c, cfg);
      const auto ds = load_dataset(extract_data, cfg);
      auto model = load_model(cfg, extract_ckpt);
      std::optional<fs::path> images;
      if (save_images) images = out / "generated";
      const auto dm = extract(cfg, ds, model, out, images);
      std::printf("%zu rows x %zu distances -> %s\n", dm.rows(), dm.n_classes(), (out / kDistancesFile).c_str());
    } else if (eval_cmd->parsed()) {
      const auto cfg = resolve(eval_c);
      const auto out = start(eval_c, cfg);
      const auto ds = load_dataset(eval_data, cfg);
      const auto dm = distance::DistanceMatrix::from_csv(io::read_text(distances));
      const auto res = classify_eval(cfg, ds, dm, out);
      std::printf("%s: ", classify::to_string(cfg.classifier.kind));
      print_metrics(res.report);
    } else if (base_cmd->parsed()) {
      const auto cfg = resolve(base_c);
      const auto out = start(base_c, cfg);
      const auto ds = load_dataset(base_data, cfg);
      const auto run = run_baseline(cfg, ds, out);
      std::printf("baseline CNN (best epoch %zu, stopped at %zu): ", run.training.best_epoch,
                  run.training.stopped_epoch);
      print_metrics(run.report);
    } else if (grid_cmd->parsed()) {
      const auto cfg = resolve(grid_c);
      const auto out = start(grid_c, cfg);
      const auto ds = load_dataset(grid_data, cfg);
      auto model = load_model(cfg, grid_ckpt);
      io::write_png(out / "grid.png", translation_grid(ds, model, per_class));
      std::printf("wrote %s\n", (out / "grid.png").c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
