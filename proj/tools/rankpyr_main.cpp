// Command-line entry points: synth-gen, train, eval, rank-audit,
// export-density, ablate. Every artifact-producing run writes a
// manifest.json (command, config, seed, version) beside its outputs so it
// can be rerun from the manifest alone.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "rankpyr/data.hpp"
#include "rankpyr/errors.hpp"
#include "rankpyr/eval.hpp"
#include "rankpyr/image_io.hpp"
#include "rankpyr/model.hpp"
#include "rankpyr/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rankpyr;

namespace {

constexpr const char* kVersion = "0.2.0";

bool deterministic_mode() {
  const char* v = std::getenv("RANKPYR_DETERMINISTIC");
  return v && std::string(v) == "1";
}

fs::path run_dir(const std::string& out, const std::string& command, uint64_t seed) {
  if (!out.empty()) return out;
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  const auto stamp = std::chrono::duration_cast<std::chrono::seconds>(now).count();
  return fs::path("runs") / (command + "-" + std::to_string(stamp) + "-s" + std::to_string(seed));
}

void write_manifest(const fs::path& dir, const std::string& command, uint64_t seed, const json& config,
                    const json& extra_args = json::object()) {
  json m;
  m["command"] = command;
  m["version"] = kVersion;
  m["seed"] = seed;
  m["deterministic"] = deterministic_mode();
  m["config"] = config;
  if (!extra_args.empty()) m["args"] = extra_args;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write manifest under " + dir.string());
  out << m.dump(2) << "\n";
}

trainer::TrainConfig load_config(const std::string& path) {
  if (path.empty()) return trainer::TrainConfig{};
  return trainer::TrainConfig::load(path);
}

std::vector<int> all_ids(const data::Corpus& corpus) {
  std::vector<int> ids(corpus.size());
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  return ids;
}

std::vector<std::string> parse_levels(const std::string& csv) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : csv) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// ---------------------------------------------------------------------------

int cmd_synth_gen(const std::string& out, int n, int count_min, int count_max, uint64_t seed, int size) {
  data::SynthConfig cfg;
  cfg.width = size;
  cfg.height = size;
  data::synth_corpus(out, n, count_min, count_max, seed, cfg);
  write_manifest(out, "synth-gen", seed,
                 json{{"n", n}, {"min_count", count_min}, {"max_count", count_max}, {"size", size}});
  std::cout << "wrote " << n << " images under " << out << "\n";
  return 0;
}

struct TrainArgs {
  std::string config_path, corpus_dir, out, unlabeled_dir, init_weights, levels;
  uint64_t seed = static_cast<uint64_t>(-1);
  double lambda = -1.0, labeled_ratio = -1.0;
  bool baseline = false;
  int steps = -1;
};

trainer::TrainConfig resolve_train_config(const TrainArgs& args) {
  trainer::TrainConfig cfg = load_config(args.config_path);
  if (args.seed != static_cast<uint64_t>(-1)) cfg.seed = args.seed;
  if (args.lambda >= 0.0) cfg.lambda = args.lambda;
  if (args.labeled_ratio > 0.0) cfg.labeled_ratio = args.labeled_ratio;
  if (!args.levels.empty()) cfg.level_mask = parse_levels(args.levels);
  if (args.baseline) cfg.baseline_mode = trainer::BaselineMode::ImageLevelRanking;
  if (args.steps >= 0) cfg.steps = args.steps;
  cfg.validate();
  return cfg;
}

int cmd_train(const TrainArgs& args) {
  trainer::TrainConfig cfg = resolve_train_config(args);
  const fs::path out = run_dir(args.out, "train", cfg.seed);
  fs::create_directories(out);

  data::Corpus corpus = data::Corpus::load(args.corpus_dir);
  data::CorpusIndex index = data::split(corpus, cfg.labeled_ratio, cfg.seed);
  index.save(out / "corpus_index.json");

  std::optional<data::Corpus> extra;
  if (!args.unlabeled_dir.empty()) extra = data::Corpus::load(args.unlabeled_dir);

  model::CrowdCounter model(cfg.model, cfg.seed);
  if (!args.init_weights.empty()) {
    const int used = model.load_matching_weights(args.init_weights);
    std::cout << "loaded " << used << " arrays from " << args.init_weights << "\n";
  }

  write_manifest(out, "train", cfg.seed, cfg.to_json(),
                 json{{"corpus", args.corpus_dir}, {"unlabeled_corpus", args.unlabeled_dir}});
  const auto result = trainer::fit(model, corpus, index, cfg, out, extra ? &*extra : nullptr);
  std::cout << "trained " << result.steps_run << " steps; final checkpoint " << result.final_checkpoint
            << "\n";
  if (result.best_val_mae >= 0.0) std::cout << "best val MAE " << result.best_val_mae << "\n";
  return 0;
}

int cmd_eval(const std::string& model_path, bool oracle_gt, const std::string& corpus_dir,
             const std::string& out_dir, uint64_t seed, double sigma) {
  data::Corpus corpus = data::Corpus::load(corpus_dir);
  const fs::path out = run_dir(out_dir, "eval", seed);
  fs::create_directories(out);

  eval::EvalReport report;
  json config{{"corpus", corpus_dir}, {"oracle_gt", oracle_gt}, {"model", model_path}, {"sigma", sigma}};
  if (oracle_gt) {
    density::KernelConfig kernel;
    kernel.sigma = sigma;
    report = eval::evaluate_oracle(corpus, all_ids(corpus), kernel);
  } else {
    model::CrowdCounter model = model::CrowdCounter::load_checkpoint(model_path);
    report = eval::evaluate(model, corpus, all_ids(corpus));
  }
  write_manifest(out, "eval", seed, config);
  std::ofstream jf(out / "report.json");
  jf << report.to_json().dump(2) << "\n";
  report.save_csv(out / "report.csv");
  std::cout << "MAE " << report.mae << " RMSE " << report.rmse << " over " << report.per_image.size()
            << " images\n";
  return 0;
}

int cmd_rank_audit(const std::string& model_path, const std::string& corpus_dir, const std::string& out_dir,
                   int m_patches, double ratio, int n_centers, uint64_t seed) {
  data::Corpus corpus = data::Corpus::load(corpus_dir);
  model::CrowdCounter model = model::CrowdCounter::load_checkpoint(model_path);
  const auto audit = eval::rank_audit(model, corpus, all_ids(corpus), m_patches, ratio, n_centers, seed);
  const fs::path out = run_dir(out_dir, "rank-audit", seed);
  fs::create_directories(out);
  write_manifest(out, "rank-audit", seed,
                 json{{"model", model_path},
                      {"corpus", corpus_dir},
                      {"M", m_patches},
                      {"r", ratio},
                      {"n_centers", n_centers}});
  std::ofstream jf(out / "audit.json");
  jf << audit.to_json().dump(2) << "\n";
  std::cout << "violation_rate " << audit.violation_rate << " mean_hinge " << audit.mean_hinge << " over "
            << audit.pairs << " pairs\n";
  return 0;
}

int cmd_export_density(const std::string& image_path, const std::string& model_path,
                       const std::string& annotation_path, const std::string& out_dir, double sigma,
                       bool adaptive) {
  if (model_path.empty() == annotation_path.empty())
    throw InvalidParameter("export-density: pass exactly one of --model or --annotation");
  const fs::path out = run_dir(out_dir, "export-density", 0);
  fs::create_directories(out);

  Tensor image = io::read_png(image_path);
  density::DensityMap map;
  if (!model_path.empty()) {
    model::CrowdCounter model = model::CrowdCounter::load_checkpoint(model_path);
    eval::EvalOptions opts;
    Tensor norm = image;
    for (int ci = 0; ci < 3; ++ci) {
      double* ch = norm.channel(ci);
      const size_t plane = static_cast<size_t>(norm.h) * norm.w;
      for (size_t i = 0; i < plane; ++i) ch[i] = (ch[i] - opts.mean[ci]) / opts.stddev[ci];
    }
    map = density::DensityMap::from_tensor(model.predict_density(norm));
  } else {
    const auto ann = density::load_annotation(annotation_path);
    density::KernelConfig kernel;
    kernel.mode = adaptive ? density::KernelConfig::Mode::Adaptive : density::KernelConfig::Mode::Fixed;
    kernel.sigma = sigma;
    map = density::make_density(ann.points, kernel);
  }
  eval::export_density(map, out / "density.dmap");
  eval::export_overlay(image, map, out / "overlay.png");
  write_manifest(out, "export-density", 0,
                 json{{"image", image_path},
                      {"model", model_path},
                      {"annotation", annotation_path},
                      {"sigma", sigma},
                      {"adaptive", adaptive}});
  std::cout << "mass " << map.mass() << "; wrote density.dmap and overlay.png under " << out << "\n";
  return 0;
}

struct AblateRow {
  std::string label;
  double mae = 0.0, rmse = 0.0;
};

int cmd_ablate(const std::string& axis, const TrainArgs& base_args, const std::string& eval_corpus_dir) {
  trainer::TrainConfig base = resolve_train_config(base_args);
  const fs::path out = run_dir(base_args.out, "ablate-" + axis, base.seed);
  fs::create_directories(out);

  data::Corpus corpus = data::Corpus::load(base_args.corpus_dir);
  std::optional<data::Corpus> extra;
  if (!base_args.unlabeled_dir.empty()) extra = data::Corpus::load(base_args.unlabeled_dir);
  std::optional<data::Corpus> eval_corpus;
  if (!eval_corpus_dir.empty()) eval_corpus = data::Corpus::load(eval_corpus_dir);

  struct Variant {
    std::string label;
    trainer::TrainConfig cfg;
  };
  std::vector<Variant> variants;
  if (axis == "lambda") {
    for (double v : {0.1, 0.5, 1.0, 5.0, 10.0}) {
      trainer::TrainConfig cfg = base;
      cfg.lambda = v;
      variants.push_back({"lambda=" + std::to_string(v), cfg});
    }
  } else if (axis == "levels") {
    const std::vector<std::vector<std::string>> combos = {
        {"low"}, {"mid"}, {"high"}, {"mid", "high"}, {"low", "mid", "high"}};
    for (const auto& mask : combos) {
      trainer::TrainConfig cfg = base;
      cfg.level_mask = mask;
      std::string label = "levels=";
      for (size_t i = 0; i < mask.size(); ++i) label += (i ? "+" : "") + mask[i];
      variants.push_back({label, cfg});
    }
  } else if (axis == "ratio") {
    for (double v : {0.05, 0.25, 0.30, 0.50, 1.0}) {
      trainer::TrainConfig cfg = base;
      cfg.labeled_ratio = v;
      variants.push_back({"ratio=" + std::to_string(v), cfg});
    }
  } else {
    throw InvalidParameter("ablate: unknown axis '" + axis + "' (expected lambda, levels or ratio)");
  }

  std::vector<AblateRow> rows;
  for (const auto& [label, cfg] : variants) {
    const fs::path vdir = out / label;
    fs::create_directories(vdir);
    data::CorpusIndex index = data::split(corpus, cfg.labeled_ratio, cfg.seed);
    model::CrowdCounter model(cfg.model, cfg.seed);
    trainer::fit(model, corpus, index, cfg, vdir, extra ? &*extra : nullptr);

    eval::EvalReport report;
    if (eval_corpus)
      report = eval::evaluate(model, *eval_corpus, all_ids(*eval_corpus));
    else
      report = eval::evaluate(model, corpus, index.labeled_ids);
    rows.push_back({label, report.mae, report.rmse});
    std::cout << label << "  MAE " << report.mae << "  RMSE " << report.rmse << "\n";
  }

  json table = json::array();
  std::ofstream csv(out / "table.csv");
  csv << "variant,mae,rmse\n";
  for (const auto& row : rows) {
    table.push_back({{"variant", row.label}, {"mae", row.mae}, {"rmse", row.rmse}});
    csv << row.label << "," << row.mae << "," << row.rmse << "\n";
  }
  std::ofstream jf(out / "table.json");
  jf << table.dump(2) << "\n";
  write_manifest(out, "ablate", base.seed, base.to_json(),
                 json{{"axis", axis}, {"corpus", base_args.corpus_dir}, {"eval_corpus", eval_corpus_dir}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rank-consistent pyramid crowd-counting toolkit"};
  app.require_subcommand(1);

  // synth-gen
  auto* synth = app.add_subcommand("synth-gen", "generate a synthetic blob corpus");
  std::string synth_out = "synth_corpus";
  int synth_n = 200, synth_min = 5, synth_max = 80, synth_size = 256;
  uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--n", synth_n, "number of images");
  synth->add_option("--min-count", synth_min);
  synth->add_option("--max-count", synth_max);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--size", synth_size, "square image side in pixels");

  // train
  auto* train = app.add_subcommand("train", "semi-supervised training run");
  TrainArgs train_args;
  train->add_option("--config", train_args.config_path, "JSON config file");
  train->add_option("--corpus", train_args.corpus_dir, "corpus directory")->required();
  train->add_option("--out", train_args.out, "run directory");
  train->add_option("--seed", train_args.seed);
  train->add_option("--lambda", train_args.lambda, "ranking loss weight");
  train->add_option("--labeled-ratio", train_args.labeled_ratio);
  train->add_option("--levels", train_args.levels, "comma-separated subset of low,mid,high");
  train->add_option("--steps", train_args.steps);
  train->add_option("--unlabeled-corpus", train_args.unlabeled_dir, "external unlabeled corpus");
  train->add_option("--init-weights", train_args.init_weights, "checkpoint with matching arrays");
  train->add_flag("--baseline", train_args.baseline, "image-level ranking baseline");

  // eval
  auto* ev = app.add_subcommand("eval", "full-image MAE/RMSE report");
  std::string eval_model, eval_corpus, eval_out;
  bool eval_oracle = false;
  double eval_sigma = 15.0;
  uint64_t eval_seed = 0;
  ev->add_option("--model", eval_model, "checkpoint path");
  ev->add_option("--corpus", eval_corpus)->required();
  ev->add_option("--out", eval_out);
  ev->add_option("--seed", eval_seed);
  ev->add_option("--sigma", eval_sigma, "GT kernel sigma for --oracle-gt");
  ev->add_flag("--oracle-gt", eval_oracle, "predict the ground-truth density (identity oracle)");

  // rank-audit
  auto* audit = app.add_subcommand("rank-audit", "pyramid rank-violation audit");
  std::string audit_model, audit_corpus, audit_out;
  int audit_m = 4, audit_centers = 4;
  double audit_r = 0.75;
  uint64_t audit_seed = 0;
  audit->add_option("--model", audit_model)->required();
  audit->add_option("--corpus", audit_corpus)->required();
  audit->add_option("--out", audit_out);
  audit->add_option("--M", audit_m);
  audit->add_option("--r", audit_r);
  audit->add_option("--n-centers", audit_centers);
  audit->add_option("--seed", audit_seed);

  // export-density
  auto* exp = app.add_subcommand("export-density", "write a density raster and overlay");
  std::string exp_image, exp_model, exp_ann, exp_out;
  double exp_sigma = 15.0;
  bool exp_adaptive = false;
  exp->add_option("--image", exp_image)->required();
  exp->add_option("--model", exp_model);
  exp->add_option("--annotation", exp_ann);
  exp->add_option("--out", exp_out);
  exp->add_option("--sigma", exp_sigma);
  exp->add_flag("--adaptive", exp_adaptive, "geometry-adaptive GT kernel");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "sweep lambda, level combinations or label ratios");
  TrainArgs ablate_args;
  std::string ablate_axis, ablate_eval_corpus;
  ablate->add_option("--axis", ablate_axis, "lambda | levels | ratio")->required();
  ablate->add_option("--config", ablate_args.config_path);
  ablate->add_option("--corpus", ablate_args.corpus_dir)->required();
  ablate->add_option("--eval-corpus", ablate_eval_corpus, "held-out corpus for the table metrics");
  ablate->add_option("--out", ablate_args.out);
  ablate->add_option("--seed", ablate_args.seed);
  ablate->add_option("--steps", ablate_args.steps);
  ablate->add_option("--unlabeled-corpus", ablate_args.unlabeled_dir);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth_gen(synth_out, synth_n, synth_min, synth_max, synth_seed, synth_size);
    if (train->parsed()) return cmd_train(train_args);
    if (ev->parsed()) return cmd_eval(eval_model, eval_oracle, eval_corpus, eval_out, eval_seed, eval_sigma);
    if (audit->parsed())
      return cmd_rank_audit(audit_model, audit_corpus, audit_out, audit_m, audit_r, audit_centers, audit_seed);
    if (exp->parsed())
      return cmd_export_density(exp_image, exp_model, exp_ann, exp_out, exp_sigma, exp_adaptive);
    if (ablate->parsed()) return cmd_ablate(ablate_axis, ablate_args, ablate_eval_corpus);
  } catch (const std::exception& e) {
    // Machine-readable error record.
    std::cerr << json{{"error", e.what()}, {"version", kVersion}}.dump() << std::endl;
    return 1;
  }
  return 0;
}
