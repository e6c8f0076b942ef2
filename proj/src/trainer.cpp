#include "rankpyr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "rankpyr/errors.hpp"
#include "rankpyr/eval.hpp"
#include "rankpyr/pyramid.hpp"

namespace rankpyr::trainer {

namespace fs = std::filesystem;
using autograd::Var;
using losses::LossBreakdown;
using nlohmann::json;

namespace {

const char* to_string(RankingTarget t) {
  switch (t) {
    case RankingTarget::UnlabeledOnly: return "unlabeled-only";
    case RankingTarget::LabeledOnly: return "labeled-only";
    default: return "both";
  }
}

RankingTarget ranking_target_from(const std::string& s) {
  if (s == "unlabeled-only") return RankingTarget::UnlabeledOnly;
  if (s == "labeled-only") return RankingTarget::LabeledOnly;
  if (s == "both") return RankingTarget::Both;
  throw InvalidParameter("unknown ranking_target '" + s + "'");
}

const char* to_string(BaselineMode m) {
  return m == BaselineMode::None ? "none" : "image-level-ranking";
}

BaselineMode baseline_mode_from(const std::string& s) {
  if (s == "none") return BaselineMode::None;
  if (s == "image-level-ranking") return BaselineMode::ImageLevelRanking;
  throw InvalidParameter("unknown baseline_mode '" + s + "'");
}

}  // namespace

data::AugmentConfig TrainConfig::augment() const {
  data::AugmentConfig a;
  a.crop_h = crop;
  a.crop_w = crop;
  a.kernel = kernel;
  return a;
}

void TrainConfig::validate() const {
  if (lambda < 0.0) throw InvalidParameter("TrainConfig: lambda must be >= 0");
  if (epsilon < 0.0) throw InvalidParameter("TrainConfig: epsilon must be >= 0");
  if (m_patches < 1) throw InvalidParameter("TrainConfig: M must be >= 1");
  if (k_levels < 1 || k_levels > 3) throw InvalidParameter("TrainConfig: K must be in 1..3");
  if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidParameter("TrainConfig: r must be in (0,1)");
  if (lr <= 0.0) throw InvalidParameter("TrainConfig: lr must be positive");
  if (weight_decay < 0.0) throw InvalidParameter("TrainConfig: weight_decay must be >= 0");
  if (batch_labeled < 1) throw InvalidParameter("TrainConfig: batch_labeled must be >= 1");
  if (batch_unlabeled < 0) throw InvalidParameter("TrainConfig: batch_unlabeled must be >= 0");
  if (steps < 0) throw InvalidParameter("TrainConfig: steps must be >= 0");
  if (!(labeled_ratio > 0.0 && labeled_ratio <= 1.0))
    throw InvalidParameter("TrainConfig: labeled_ratio must be in (0,1]");
  if (crop < 64) throw InvalidParameter("TrainConfig: crop below the backbone minimum of 64");
  if (lambda > 0.0 && level_mask.empty())
    throw InvalidParameter("TrainConfig: level_mask must be non-empty when ranking is enabled");
  for (const auto& tag : level_mask)
    if (tag != "low" && tag != "mid" && tag != "high")
      throw InvalidParameter("TrainConfig: unknown level tag '" + tag + "'");
  if (static_cast<int>(model.level_taps.size()) != k_levels)
    throw InvalidParameter("TrainConfig: K must match the model's level taps");
  model.validate();
}

json TrainConfig::to_json() const {
  return json{{"lambda", lambda},
              {"epsilon", epsilon},
              {"M", m_patches},
              {"K", k_levels},
              {"r", ratio},
              {"lr", lr},
              {"weight_decay", weight_decay},
              {"batch_labeled", batch_labeled},
              {"batch_unlabeled", batch_unlabeled},
              {"steps", steps},
              {"seed", seed},
              {"ranking_target", to_string(ranking_target)},
              {"level_mask", level_mask},
              {"baseline_mode", to_string(baseline_mode)},
              {"labeled_ratio", labeled_ratio},
              {"crop", crop},
              {"resize_cap", resize_cap_px},
              {"val_fraction", val_fraction},
              {"eval_every", eval_every},
              {"checkpoint_every", checkpoint_every},
              {"kernel_mode", kernel.mode == density::KernelConfig::Mode::Fixed ? "fixed" : "adaptive"},
              {"sigma", kernel.sigma},
              {"beta", kernel.beta},
              {"knn", kernel.k},
              {"fallback_sigma", kernel.fallback_sigma},
              {"backbone", model.backbone == model::ModelConfig::Backbone::Toy ? "toy" : "vgg16-truncated"},
              {"level_taps", model.level_taps},
              {"decoder_width", model.decoder_width}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  static const std::set<std::string> known = {
      "lambda",      "epsilon",        "M",             "K",               "r",
      "lr",          "weight_decay",   "batch_labeled", "batch_unlabeled", "steps",
      "seed",        "ranking_target", "level_mask",    "baseline_mode",   "labeled_ratio",
      "crop",        "resize_cap",     "val_fraction",  "eval_every",      "checkpoint_every",
      "kernel_mode", "sigma",          "beta",          "knn",             "fallback_sigma",
      "backbone",    "level_taps",     "decoder_width"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw InvalidParameter("TrainConfig: unknown key '" + key + "'");

  TrainConfig cfg;
  cfg.lambda = j.value("lambda", cfg.lambda);
  cfg.epsilon = j.value("epsilon", cfg.epsilon);
  cfg.m_patches = j.value("M", cfg.m_patches);
  cfg.k_levels = j.value("K", cfg.k_levels);
  cfg.ratio = j.value("r", cfg.ratio);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.batch_labeled = j.value("batch_labeled", cfg.batch_labeled);
  cfg.batch_unlabeled = j.value("batch_unlabeled", cfg.batch_unlabeled);
  cfg.steps = j.value("steps", cfg.steps);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("ranking_target")) cfg.ranking_target = ranking_target_from(j.at("ranking_target"));
  if (j.contains("level_mask")) cfg.level_mask = j.at("level_mask").get<std::vector<std::string>>();
  if (j.contains("baseline_mode")) cfg.baseline_mode = baseline_mode_from(j.at("baseline_mode"));
  cfg.labeled_ratio = j.value("labeled_ratio", cfg.labeled_ratio);
  cfg.crop = j.value("crop", cfg.crop);
  cfg.resize_cap_px = j.value("resize_cap", cfg.resize_cap_px);
  cfg.val_fraction = j.value("val_fraction", cfg.val_fraction);
  cfg.eval_every = j.value("eval_every", cfg.eval_every);
  cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
  if (j.contains("kernel_mode"))
    cfg.kernel.mode = j.at("kernel_mode") == "adaptive" ? density::KernelConfig::Mode::Adaptive
                                                        : density::KernelConfig::Mode::Fixed;
  cfg.kernel.sigma = j.value("sigma", cfg.kernel.sigma);
  cfg.kernel.beta = j.value("beta", cfg.kernel.beta);
  cfg.kernel.k = j.value("knn", cfg.kernel.k);
  cfg.kernel.fallback_sigma = j.value("fallback_sigma", cfg.kernel.fallback_sigma);
  json model_json;
  if (j.contains("backbone")) model_json["backbone"] = j.at("backbone");
  if (j.contains("level_taps")) model_json["level_taps"] = j.at("level_taps");
  if (j.contains("decoder_width")) model_json["decoder_width"] = j.at("decoder_width");
  cfg.model = model::ModelConfig::from_json(model_json.is_null() ? json::object() : model_json);
  cfg.k_levels = static_cast<int>(cfg.model.level_taps.size());
  cfg.validate();
  return cfg;
}

TrainConfig TrainConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("bad config JSON in " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

Adam::Adam(std::vector<Var> params, double lr, double weight_decay, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros_like(p->val));
    v_.push_back(Tensor::zeros_like(p->val));
  }
}

void Adam::zero_grad() {
  for (auto& p : params_)
    if (!p->grad.empty()) p->grad.fill(0.0);
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& theta = params_[i]->val;
    const Tensor& grad = params_[i]->grad;
    const bool has_grad = !grad.empty();
    for (size_t j = 0; j < theta.size(); ++j) {
      const double g = (has_grad ? grad.data[j] : 0.0) + weight_decay_ * theta.data[j];
      m_[i].data[j] = beta1_ * m_[i].data[j] + (1.0 - beta1_) * g;
      v_[i].data[j] = beta2_ * v_[i].data[j] + (1.0 - beta2_) * g * g;
      const double mhat = m_[i].data[j] / bc1;
      const double vhat = v_[i].data[j] / bc2;
      theta.data[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

json Adam::settings() const {
  return json{{"optimizer", "adam"}, {"lr", lr_},     {"weight_decay", weight_decay_},
              {"beta1", beta1_},     {"beta2", beta2_}, {"eps", eps_}};
}

// ---------------------------------------------------------------------------
// Steps
// ---------------------------------------------------------------------------

namespace {

std::vector<int> masked_levels(const model::CrowdCounter& model, const std::vector<std::string>& mask) {
  std::set<std::string> wanted(mask.begin(), mask.end());
  std::vector<int> out;
  // Tags follow the model's tap order.
  static const char* kTagNames[3] = {"low", "mid", "high"};
  for (int i = 0; i < model.levels(); ++i)
    if (wanted.count(kTagNames[model.config().level_taps[i]])) out.push_back(i);
  return out;
}

const std::vector<data::Sample>* ranking_images(const std::vector<data::Sample>& labeled,
                                                const std::vector<data::Sample>& unlabeled,
                                                std::vector<data::Sample>& both_storage,
                                                const TrainConfig& cfg) {
  switch (cfg.ranking_target) {
    case RankingTarget::UnlabeledOnly: return &unlabeled;
    case RankingTarget::LabeledOnly: return &labeled;
    default:
      both_storage = labeled;
      both_storage.insert(both_storage.end(), unlabeled.begin(), unlabeled.end());
      return &both_storage;
  }
}

void throw_diverged(const std::string& where, const std::vector<data::Sample>& labeled,
                    const std::vector<data::Sample>& unlabeled, const LossBreakdown& breakdown) {
  json dump;
  dump["where"] = where;
  auto ids = json::array();
  for (const auto& s : labeled) ids.push_back(s.id);
  dump["labeled_ids"] = ids;
  ids = json::array();
  for (const auto& s : unlabeled) ids.push_back(s.id);
  dump["unlabeled_ids"] = ids;
  dump["breakdown"] = breakdown.to_json();
  throw TrainingDiverged(dump.dump());
}

LossBreakdown run_step(model::CrowdCounter& model, Adam& opt, const std::vector<data::Sample>& labeled,
                       const std::vector<data::Sample>& unlabeled, const TrainConfig& cfg, Rng& rng,
                       bool image_level) {
  if (labeled.empty()) throw InvalidInput("train_step: labeled batch is empty");
  const bool needs_unlabeled = cfg.lambda > 0.0 && cfg.ranking_target != RankingTarget::LabeledOnly;
  if (needs_unlabeled && unlabeled.empty())
    throw InvalidInput("train_step: unlabeled batch may be empty only when lambda == 0");

  opt.zero_grad();

  LossBreakdown breakdown;
  breakdown.lambda = cfg.lambda;
  breakdown.epsilon = cfg.epsilon;

  // Supervised pass.
  std::vector<Var> preds;
  std::vector<Tensor> gts;
  for (const auto& s : labeled) {
    if (!s.density) throw InvalidInput("train_step: labeled sample '" + s.id + "' has no density");
    preds.push_back(model.forward_density(autograd::leaf(s.image)));
    gts.push_back(s.density->to_tensor());
  }
  Var loss = losses::supervised_l2_var(preds, gts);
  breakdown.supervised = loss->scalar();

  // Ranking pass.
  Var l_u;
  if (cfg.lambda > 0.0) {
    std::vector<data::Sample> both_storage;
    const auto* rank_set = ranking_images(labeled, unlabeled, both_storage, cfg);
    std::vector<std::vector<std::vector<Var>>> counts;
    for (const auto& s : *rank_set) {
      const pyramid::CenterDraw draw = pyramid::draw_center(rng);
      std::vector<std::vector<Var>> image_counts;
      if (image_level) {
        // Nested crops on the input image, fed through the full model at
        // native size.
        const pyramid::LevelShape shape{s.image.c, s.image.h, s.image.w};
        Var image = autograd::leaf(s.image);
        const auto center = pyramid::center_for_level(shape, draw);
        const auto set = pyramid::generate_nested_boxes(shape, center, cfg.m_patches, cfg.ratio,
                                                        model.min_input());
        std::vector<Var> patch_counts;
        for (const auto& box : set.boxes) {
          Var patch = autograd::crop(image, box.top, box.left, box.height, box.width);
          patch_counts.push_back(autograd::sum(model.forward_density(patch)));
        }
        image_counts.push_back(std::move(patch_counts));
      } else {
        const auto feats = model.extract(autograd::leaf(s.image));
        for (int level : masked_levels(model, cfg.level_mask)) {
          const auto& fmap = feats.levels[level];
          const pyramid::LevelShape shape{fmap->val.c, fmap->val.h, fmap->val.w};
          std::pair<int, int> center;
          try {
            center = pyramid::center_for_level(shape, draw);
          } catch (const LevelTooSmall&) {
            continue;  // skip ranking at this level
          }
          const auto set = pyramid::generate_nested_boxes(shape, center, cfg.m_patches, cfg.ratio);
          std::vector<Var> patch_counts;
          for (const auto& box : set.boxes)
            patch_counts.push_back(model.count_from_patch(pyramid::crop_and_resize(fmap, box), level));
          image_counts.push_back(std::move(patch_counts));
        }
      }
      if (!image_counts.empty()) counts.push_back(std::move(image_counts));
    }
    if (!counts.empty()) {
      l_u = losses::pyramid_rank_loss_var(counts, cfg.epsilon, &breakdown.pair_terms);
      breakdown.ranking = l_u->scalar();
      loss = autograd::add(loss, autograd::scale(l_u, cfg.lambda));
    }
  }
  breakdown.total = breakdown.supervised + cfg.lambda * breakdown.ranking;

  if (!std::isfinite(breakdown.total)) throw_diverged("train_step", labeled, unlabeled, breakdown);

  autograd::backward(loss);
  opt.step();
  return breakdown;
}

}  // namespace

LossBreakdown train_step(model::CrowdCounter& model, Adam& opt, const std::vector<data::Sample>& labeled,
                         const std::vector<data::Sample>& unlabeled, const TrainConfig& cfg, Rng& rng) {
  return run_step(model, opt, labeled, unlabeled, cfg, rng, false);
}

LossBreakdown image_level_ranking_step(model::CrowdCounter& model, Adam& opt,
                                       const std::vector<data::Sample>& labeled,
                                       const std::vector<data::Sample>& unlabeled, const TrainConfig& cfg,
                                       Rng& rng) {
  if (cfg.baseline_mode != BaselineMode::ImageLevelRanking)
    throw InvalidParameter("image_level_ranking_step: baseline_mode is not image-level-ranking");
  return run_step(model, opt, labeled, unlabeled, cfg, rng, true);
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

namespace {

// Cycles over ids, reshuffling each epoch.
class EpochSampler {
 public:
  EpochSampler(std::vector<int> ids, Rng rng) : ids_(std::move(ids)), rng_(rng) { reshuffle(); }

  int next() {
    if (pos_ >= ids_.size()) reshuffle();
    return ids_[pos_++];
  }

 private:
  void reshuffle() {
    for (size_t i = ids_.size(); i > 1; --i) std::swap(ids_[i - 1], ids_[rng_.next_u64() % i]);
    pos_ = 0;
  }

  std::vector<int> ids_;
  Rng rng_;
  size_t pos_ = 0;
};

}  // namespace

FitResult fit(model::CrowdCounter& model, const data::Corpus& corpus, const data::CorpusIndex& index,
              const TrainConfig& cfg, const fs::path& out_dir, const data::Corpus* extra_unlabeled) {
  cfg.validate();
  if (index.labeled_ids.empty()) throw InvalidInput("fit: corpus has no labeled entries");
  fs::create_directories(out_dir);

  Rng master(cfg.seed);
  Rng split_rng = master.fork(101);
  Rng sampler_rng = master.fork(202);
  Rng step_rng = master.fork(303);

  // Hold out a validation slice of the labeled ids for checkpoint selection.
  std::vector<int> labeled = index.labeled_ids;
  for (size_t i = labeled.size(); i > 1; --i) std::swap(labeled[i - 1], labeled[split_rng.next_u64() % i]);
  int n_val = 0;
  if (cfg.val_fraction > 0.0 && labeled.size() >= 2)
    n_val = std::min<int>(static_cast<int>(labeled.size()) - 1,
                          std::max(1, static_cast<int>(std::floor(cfg.val_fraction * labeled.size()))));
  std::vector<int> val_ids(labeled.begin(), labeled.begin() + n_val);
  std::vector<int> train_labeled(labeled.begin() + n_val, labeled.end());

  const data::Corpus& unlabeled_corpus = extra_unlabeled ? *extra_unlabeled : corpus;
  std::vector<int> unlabeled_ids;
  if (extra_unlabeled) {
    unlabeled_ids.resize(extra_unlabeled->size());
    for (size_t i = 0; i < unlabeled_ids.size(); ++i) unlabeled_ids[i] = static_cast<int>(i);
  } else {
    unlabeled_ids = index.unlabeled_ids;
  }

  const bool needs_unlabeled = cfg.lambda > 0.0 && cfg.ranking_target != RankingTarget::LabeledOnly;
  TrainConfig run_cfg = cfg;
  bool ranking_active = cfg.lambda > 0.0;
  if (needs_unlabeled && (unlabeled_ids.empty() || cfg.batch_unlabeled == 0)) {
    ranking_active = false;
    run_cfg.lambda = 0.0;
  }

  Adam opt(model.parameters(), cfg.lr, cfg.weight_decay);
  EpochSampler labeled_sampler(train_labeled, sampler_rng.fork(1));
  EpochSampler unlabeled_sampler(unlabeled_ids.empty() ? std::vector<int>{0} : unlabeled_ids,
                                 sampler_rng.fork(2));

  const fs::path log_path = out_dir / "train_log.jsonl";
  std::ofstream log(log_path);
  if (!log) throw IoError("cannot open " + log_path.string() + " for writing");
  if (cfg.lambda > 0.0 && !ranking_active)
    log << json{{"note", "ranking disabled: no unlabeled data"}}.dump() << "\n";

  data::LoadOptions load_opts;
  load_opts.resize_cap_px = cfg.resize_cap_px;
  load_opts.kernel = cfg.kernel;
  const data::AugmentConfig aug = cfg.augment();

  FitResult result;
  result.ranking_active = ranking_active;
  result.log_path = log_path;

  json extra;
  extra["train_config"] = cfg.to_json();
  extra["optimizer"] = opt.settings();

  auto run_validation = [&](int step) {
    if (val_ids.empty()) return;
    std::vector<double> pred, truth;
    for (int id : val_ids) {
      data::Sample s = data::load_sample(corpus, id, true, load_opts);
      Tensor norm = s.image;
      for (int ci = 0; ci < 3; ++ci) {
        double* ch = norm.channel(ci);
        const size_t plane = static_cast<size_t>(norm.h) * norm.w;
        for (size_t i = 0; i < plane; ++i) ch[i] = (ch[i] - aug.mean[ci]) / aug.stddev[ci];
      }
      pred.push_back(model.predict_count(norm));
      truth.push_back(static_cast<double>(s.points->points.size()));
    }
    const auto [mae, rmse] = eval::mae_rmse(pred, truth);
    log << json{{"step", step}, {"val_mae", mae}, {"val_rmse", rmse}}.dump() << "\n";
    if (result.best_val_mae < 0.0 || mae < result.best_val_mae) {
      result.best_val_mae = mae;
      result.best_checkpoint = out_dir / "best.rpck";
      model.save_checkpoint(result.best_checkpoint, extra);
    }
  };

  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<data::Sample> labeled_batch, unlabeled_batch;
    for (int b = 0; b < cfg.batch_labeled; ++b) {
      data::Sample s = data::load_sample(corpus, labeled_sampler.next(), true, load_opts);
      labeled_batch.push_back(data::augment(s, aug, step_rng));
    }
    if (ranking_active && cfg.ranking_target != RankingTarget::LabeledOnly) {
      for (int b = 0; b < cfg.batch_unlabeled; ++b) {
        data::Sample s = data::load_sample(unlabeled_corpus, unlabeled_sampler.next(), false, load_opts);
        unlabeled_batch.push_back(data::augment(s, aug, step_rng));
      }
    }

    const LossBreakdown breakdown =
        cfg.baseline_mode == BaselineMode::ImageLevelRanking
            ? image_level_ranking_step(model, opt, labeled_batch, unlabeled_batch, run_cfg, step_rng)
            : train_step(model, opt, labeled_batch, unlabeled_batch, run_cfg, step_rng);

    json line = breakdown.to_json();
    line["step"] = step;
    log << line.dump() << "\n";

    if (cfg.eval_every > 0 && step % cfg.eval_every == 0) run_validation(step);
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "ckpt_%06d.rpck", step);
      model.save_checkpoint(out_dir / name, extra);
    }
    result.steps_run = step;
  }

  if (cfg.eval_every > 0 && cfg.steps > 0 && cfg.steps % cfg.eval_every != 0) run_validation(cfg.steps);
  result.final_checkpoint = out_dir / "final.rpck";
  model.save_checkpoint(result.final_checkpoint, extra);
  if (result.best_checkpoint.empty()) result.best_checkpoint = result.final_checkpoint;
  return result;
}

}  // namespace rankpyr::trainer
