#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rankpyr/data.hpp"
#include "rankpyr/losses.hpp"
#include "rankpyr/model.hpp"

namespace rankpyr::trainer {

enum class RankingTarget { UnlabeledOnly, LabeledOnly, Both };
enum class BaselineMode { None, ImageLevelRanking };

struct TrainConfig {
  double lambda = 1.0;
  double epsilon = 0.0;
  int m_patches = 4;   // M: crops per level (plus the full map)
  int k_levels = 3;    // K: pyramid levels the model emits
  double ratio = 0.75; // r: side shrink per nesting step
  double lr = 1e-5;
  double weight_decay = 1e-4;
  int batch_labeled = 1;
  int batch_unlabeled = 1;
  int steps = 2000;
  uint64_t seed = 0;
  RankingTarget ranking_target = RankingTarget::UnlabeledOnly;
  std::vector<std::string> level_mask = {"low", "mid", "high"};
  BaselineMode baseline_mode = BaselineMode::None;

  // Data pipeline.
  double labeled_ratio = 0.1;
  int crop = 224;
  int resize_cap_px = 1920;
  double val_fraction = 0.1;
  int eval_every = 500;
  int checkpoint_every = 0;  // steps; 0 = final/best only
  density::KernelConfig kernel;
  data::AugmentConfig augment() const;

  model::ModelConfig model;

  void validate() const;
  nlohmann::json to_json() const;
  // Rejects unknown keys.
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::filesystem::path& path);
};

class Adam {
 public:
  Adam(std::vector<autograd::Var> params, double lr, double weight_decay, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);

  void zero_grad();
  void step();
  int steps_taken() const { return t_; }
  nlohmann::json settings() const;

 private:
  std::vector<autograd::Var> params_;
  std::vector<Tensor> m_, v_;
  int t_ = 0;
  double lr_, weight_decay_, beta1_, beta2_, eps_;
};

// One optimizer update on extractor and estimator jointly from
// L_s + lambda * L_u. Labeled batch must be non-empty; the unlabeled batch
// may be empty only when lambda == 0 or ranking targets labeled images.
// Throws TrainingDiverged (with batch ids, counts and pair terms) on a
// non-finite loss.
losses::LossBreakdown train_step(model::CrowdCounter& model, Adam& opt,
                                 const std::vector<data::Sample>& labeled,
                                 const std::vector<data::Sample>& unlabeled, const TrainConfig& cfg, Rng& rng);

// L2R-style comparison arm: nested crops on the input image itself (single
// scale, native crop sizes), counts from full forward passes, same hinge.
losses::LossBreakdown image_level_ranking_step(model::CrowdCounter& model, Adam& opt,
                                               const std::vector<data::Sample>& labeled,
                                               const std::vector<data::Sample>& unlabeled,
                                               const TrainConfig& cfg, Rng& rng);

struct FitResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
  std::filesystem::path log_path;
  double best_val_mae = -1.0;
  int steps_run = 0;
  bool ranking_active = false;
};

// Training loop with JSONL logging, periodic validation MAE/RMSE and
// checkpointing. extra_unlabeled, when given, replaces the index's unlabeled
// set (the 100%-labeled + external-unlabeled setting).
FitResult fit(model::CrowdCounter& model, const data::Corpus& corpus, const data::CorpusIndex& index,
              const TrainConfig& cfg, const std::filesystem::path& out_dir,
              const data::Corpus* extra_unlabeled = nullptr);

}  // namespace rankpyr::trainer
