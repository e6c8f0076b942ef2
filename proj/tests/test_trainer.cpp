#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "rankpyr/errors.hpp"
#include "rankpyr/eval.hpp"
#include "rankpyr/trainer.hpp"

using namespace rankpyr;
using namespace rankpyr::trainer;
using autograd::Var;

namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.model.decoder_width = 8;
  cfg.crop = 64;
  cfg.kernel.sigma = 3.0;
  cfg.lr = 1e-4;
  cfg.eval_every = 0;
  cfg.val_fraction = 0.0;
  return cfg;
}

struct Batches {
  std::vector<data::Sample> labeled, unlabeled;
};

Batches make_batches(const fs::path& dir, int n_labeled = 1, int n_unlabeled = 1, uint64_t seed = 3) {
  data::SynthConfig scfg;
  scfg.width = 96;
  scfg.height = 96;
  data::synth_corpus(dir, n_labeled + n_unlabeled, 4, 12, seed, scfg);
  data::Corpus corpus = data::Corpus::load(dir);
  data::LoadOptions opts;
  opts.kernel.sigma = 3.0;
  data::AugmentConfig aug;
  aug.crop_h = aug.crop_w = 64;
  aug.kernel.sigma = 3.0;
  Rng rng(seed);
  Batches b;
  for (int i = 0; i < n_labeled; ++i)
    b.labeled.push_back(data::augment(data::load_sample(corpus, i, true, opts), aug, rng));
  for (int i = 0; i < n_unlabeled; ++i)
    b.unlabeled.push_back(data::augment(data::load_sample(corpus, n_labeled + i, false, opts), aug, rng));
  return b;
}

std::vector<Tensor> snapshot(const model::CrowdCounter& m) {
  std::vector<Tensor> out;
  for (const auto& p : m.parameters()) out.push_back(p->val);
  return out;
}

}  // namespace

TEST_CASE("lambda=0 step equals a plain supervised step") {
  auto batches = make_batches(temp_dir("rankpyr_tr_l0"));
  TrainConfig cfg = small_config();
  cfg.lambda = 0.0;

  model::CrowdCounter a(cfg.model, 42), b(cfg.model, 42);
  Adam opt_a(a.parameters(), cfg.lr, cfg.weight_decay);
  Rng rng(1);
  auto breakdown = train_step(a, opt_a, batches.labeled, {}, cfg, rng);
  CHECK(breakdown.ranking == 0.0);
  CHECK(breakdown.total == breakdown.supervised);

  // Manual supervised-only update on the same batch.
  Adam opt_b(b.parameters(), cfg.lr, cfg.weight_decay);
  opt_b.zero_grad();
  std::vector<Var> preds;
  std::vector<Tensor> gts;
  for (const auto& s : batches.labeled) {
    preds.push_back(b.forward_density(autograd::leaf(s.image)));
    gts.push_back(s.density->to_tensor());
  }
  autograd::backward(losses::supervised_l2_var(preds, gts));
  opt_b.step();

  auto pa = snapshot(a), pb = snapshot(b);
  for (size_t i = 0; i < pa.size(); ++i)
    for (size_t j = 0; j < pa[i].size(); ++j)
      CHECK(std::abs(pa[i].data[j] - pb[i].data[j]) <= 1e-7 * std::max(1.0, std::abs(pb[i].data[j])));
}

TEST_CASE("rank-consistent model: ranking term contributes exactly zero gradient") {
  auto batches = make_batches(temp_dir("rankpyr_tr_zero"));
  TrainConfig cfg = small_config();

  model::CrowdCounter a(cfg.model, 7), b(cfg.model, 7);
  // Zero density head -> every patch count is 0 -> all hinges sit at zero.
  for (auto& [name, var] : a.named_parameters())
    if (name.rfind("decoder.head", 0) == 0) var->val.fill(0.0);
  for (auto& [name, var] : b.named_parameters())
    if (name.rfind("decoder.head", 0) == 0) var->val.fill(0.0);

  Adam opt_a(a.parameters(), cfg.lr, cfg.weight_decay);
  Rng rng_a(5);
  auto with_ranking = train_step(a, opt_a, batches.labeled, batches.unlabeled, cfg, rng_a);
  CHECK(with_ranking.ranking == 0.0);

  TrainConfig no_rank = cfg;
  no_rank.lambda = 0.0;
  Adam opt_b(b.parameters(), cfg.lr, cfg.weight_decay);
  Rng rng_b(5);
  train_step(b, opt_b, batches.labeled, {}, no_rank, rng_b);

  auto pa = snapshot(a), pb = snapshot(b);
  for (size_t i = 0; i < pa.size(); ++i) REQUIRE(pa[i].data == pb[i].data);
}

TEST_CASE("one small step decreases the total loss on a fixed batch") {
  auto batches = make_batches(temp_dir("rankpyr_tr_desc"));
  TrainConfig cfg = small_config();
  cfg.lr = 1e-5;

  model::CrowdCounter m(cfg.model, 11);
  Adam opt(m.parameters(), cfg.lr, cfg.weight_decay);
  Rng rng_step(9);
  auto before = train_step(m, opt, batches.labeled, batches.unlabeled, cfg, rng_step);

  // lr=0 re-evaluation at the updated parameters with the same center draws.
  Adam frozen(m.parameters(), 0.0, 0.0);
  Rng rng_eval(9);
  auto after = train_step(m, frozen, batches.labeled, batches.unlabeled, cfg, rng_eval);
  CHECK(after.total < before.total);
}

TEST_CASE("ranking value ignores labeled batch contents under unlabeled-only target") {
  auto batches = make_batches(temp_dir("rankpyr_tr_iso"), 2, 1);
  TrainConfig cfg = small_config();

  model::CrowdCounter a(cfg.model, 13), b(cfg.model, 13);
  Adam opt_a(a.parameters(), cfg.lr, cfg.weight_decay);
  Adam opt_b(b.parameters(), cfg.lr, cfg.weight_decay);
  Rng r1(21), r2(21);
  std::vector<data::Sample> labeled_one{batches.labeled[0]};
  std::vector<data::Sample> labeled_two{batches.labeled[1]};
  auto x = train_step(a, opt_a, labeled_one, batches.unlabeled, cfg, r1);
  auto y = train_step(b, opt_b, labeled_two, batches.unlabeled, cfg, r2);
  CHECK(x.ranking == y.ranking);  // same unlabeled stream, same centers
  CHECK(x.supervised != y.supervised);
}

TEST_CASE("train_step validates batch emptiness against lambda") {
  auto batches = make_batches(temp_dir("rankpyr_tr_empty"));
  TrainConfig cfg = small_config();
  model::CrowdCounter m(cfg.model, 1);
  Adam opt(m.parameters(), cfg.lr, cfg.weight_decay);
  Rng rng(1);
  CHECK_THROWS_AS(train_step(m, opt, {}, batches.unlabeled, cfg, rng), InvalidInput);
  CHECK_THROWS_AS(train_step(m, opt, batches.labeled, {}, cfg, rng), InvalidInput);  // lambda=1
}

TEST_CASE("non-finite loss aborts with diagnostics") {
  auto batches = make_batches(temp_dir("rankpyr_tr_nan"));
  TrainConfig cfg = small_config();
  model::CrowdCounter m(cfg.model, 1);
  for (auto& [name, var] : m.named_parameters())
    if (name == "decoder.head.w") var->val.fill(std::numeric_limits<double>::infinity());
  Adam opt(m.parameters(), cfg.lr, cfg.weight_decay);
  Rng rng(1);
  CHECK_THROWS_AS(train_step(m, opt, batches.labeled, batches.unlabeled, cfg, rng), TrainingDiverged);
}

TEST_CASE("image-level baseline: M(M+1)/2 pairs per image vs K times for DREAM") {
  auto batches = make_batches(temp_dir("rankpyr_tr_l2r"));
  TrainConfig cfg = small_config();
  cfg.baseline_mode = BaselineMode::ImageLevelRanking;

  model::CrowdCounter m(cfg.model, 15);
  Adam opt(m.parameters(), cfg.lr, cfg.weight_decay);
  Rng rng(3);
  auto baseline = image_level_ranking_step(m, opt, batches.labeled, batches.unlabeled, cfg, rng);
  CHECK(baseline.pair_terms.size() == 10);  // M = 4

  TrainConfig dream = small_config();
  model::CrowdCounter m2(dream.model, 15);
  Adam opt2(m2.parameters(), dream.lr, dream.weight_decay);
  Rng rng2(3);
  auto full = train_step(m2, opt2, batches.labeled, batches.unlabeled, dream, rng2);
  CHECK(full.pair_terms.size() == 30);  // K * M(M+1)/2
  CHECK(full.pair_terms.size() / baseline.pair_terms.size() == 3);
}

TEST_CASE("image-level baseline degenerates to supervised when lambda=0") {
  auto batches = make_batches(temp_dir("rankpyr_tr_l2r0"));
  TrainConfig cfg = small_config();
  cfg.baseline_mode = BaselineMode::ImageLevelRanking;
  cfg.lambda = 0.0;
  model::CrowdCounter m(cfg.model, 17);
  Adam opt(m.parameters(), cfg.lr, cfg.weight_decay);
  Rng rng(5);
  auto b = image_level_ranking_step(m, opt, batches.labeled, {}, cfg, rng);
  CHECK(b.ranking == 0.0);
  CHECK(b.pair_terms.empty());
  CHECK(b.total == b.supervised);
}

TEST_CASE("Adam: first-step update follows the bias-corrected formula") {
  Var p = autograd::leaf(Tensor::scalar(1.0), true);
  Adam opt({p}, 0.01, 0.0);
  p->ensure_grad();
  p->grad.data[0] = 0.5;
  opt.step();
  // mhat = g, vhat = g^2 -> theta -= lr * g / (|g| + eps) ~= lr * sign(g)
  CHECK(p->val.data[0] == doctest::Approx(1.0 - 0.01 * (0.5 / (0.5 + 1e-8))).epsilon(1e-12));

  // Weight decay pulls parameters toward zero even with no gradient.
  Var q = autograd::leaf(Tensor::scalar(2.0), true);
  Adam opt2({q}, 0.01, 0.1);
  opt2.step();
  CHECK(q->val.data[0] < 2.0);
}

TEST_CASE("TrainConfig: JSON round-trip and unknown-key rejection") {
  TrainConfig cfg = small_config();
  cfg.lambda = 2.5;
  cfg.level_mask = {"mid", "high"};
  cfg.ranking_target = RankingTarget::Both;
  auto j = cfg.to_json();
  TrainConfig back = TrainConfig::from_json(j);
  CHECK(back.lambda == 2.5);
  CHECK(back.level_mask == std::vector<std::string>{"mid", "high"});
  CHECK(back.ranking_target == RankingTarget::Both);
  CHECK(back.model.decoder_width == 8);

  j["not_a_key"] = 1;
  CHECK_THROWS_AS(TrainConfig::from_json(j), InvalidParameter);

  nlohmann::json bad{{"lambda", -1.0}};
  CHECK_THROWS_AS(TrainConfig::from_json(bad), InvalidParameter);
}

TEST_CASE("fit: zero steps leave the model unchanged") {
  const auto dir = temp_dir("rankpyr_fit0_data");
  data::SynthConfig scfg;
  scfg.width = 96;
  scfg.height = 96;
  data::synth_corpus(dir, 8, 4, 10, 3, scfg);
  data::Corpus corpus = data::Corpus::load(dir);
  auto index = data::split(corpus, 0.5, 1);

  TrainConfig cfg = small_config();
  cfg.steps = 0;
  model::CrowdCounter m(cfg.model, 19);
  auto before = snapshot(m);
  auto result = fit(m, corpus, index, cfg, temp_dir("rankpyr_fit0_out"));
  auto after = snapshot(m);
  for (size_t i = 0; i < before.size(); ++i) REQUIRE(before[i].data == after[i].data);
  CHECK(fs::exists(result.final_checkpoint));
}

TEST_CASE("fit: deterministic repeat gives identical checkpoints and logs") {
  const auto dir = temp_dir("rankpyr_fitd_data");
  data::SynthConfig scfg;
  scfg.width = 96;
  scfg.height = 96;
  data::synth_corpus(dir, 10, 4, 10, 5, scfg);
  data::Corpus corpus = data::Corpus::load(dir);
  auto index = data::split(corpus, 0.5, 2);

  TrainConfig cfg = small_config();
  cfg.steps = 6;
  cfg.seed = 99;
  cfg.eval_every = 3;
  cfg.val_fraction = 0.25;

  model::CrowdCounter m1(cfg.model, cfg.seed);
  auto r1 = fit(m1, corpus, index, cfg, temp_dir("rankpyr_fitd_out1"));
  model::CrowdCounter m2(cfg.model, cfg.seed);
  auto r2 = fit(m2, corpus, index, cfg, temp_dir("rankpyr_fitd_out2"));

  REQUIRE(file_bytes(r1.final_checkpoint) == file_bytes(r2.final_checkpoint));
  REQUIRE(file_bytes(r1.log_path) == file_bytes(r2.log_path));
  CHECK(r1.best_val_mae == r2.best_val_mae);
}

TEST_CASE("fit: level-mask ablation changes the training log") {
  const auto dir = temp_dir("rankpyr_fitm_data");
  data::SynthConfig scfg;
  scfg.width = 96;
  scfg.height = 96;
  data::synth_corpus(dir, 8, 4, 10, 7, scfg);
  data::Corpus corpus = data::Corpus::load(dir);
  auto index = data::split(corpus, 0.5, 3);

  TrainConfig cfg = small_config();
  cfg.steps = 2;
  cfg.seed = 4;

  TrainConfig high_only = cfg;
  high_only.level_mask = {"high"};

  model::CrowdCounter m1(cfg.model, cfg.seed);
  auto r1 = fit(m1, corpus, index, cfg, temp_dir("rankpyr_fitm_out1"));
  model::CrowdCounter m2(cfg.model, cfg.seed);
  auto r2 = fit(m2, corpus, index, high_only, temp_dir("rankpyr_fitm_out2"));
  CHECK(file_bytes(r1.log_path) != file_bytes(r2.log_path));

  // high-only logs 10 pair terms per step, the full mask 30.
  std::ifstream log2(r2.log_path);
  std::string line;
  std::getline(log2, line);
  auto j = nlohmann::json::parse(line);
  CHECK(j.at("pair_terms").size() == 10);
}

TEST_CASE("fit: ranking disabled when no unlabeled data is available") {
  const auto dir = temp_dir("rankpyr_fitnd_data");
  data::SynthConfig scfg;
  scfg.width = 96;
  scfg.height = 96;
  data::synth_corpus(dir, 6, 4, 10, 11, scfg);
  data::Corpus corpus = data::Corpus::load(dir);
  auto index = data::split(corpus, 1.0, 4);  // everything labeled

  TrainConfig cfg = small_config();
  cfg.steps = 2;
  model::CrowdCounter m(cfg.model, 23);
  auto r = fit(m, corpus, index, cfg, temp_dir("rankpyr_fitnd_out"));
  CHECK(!r.ranking_active);

  // With an external unlabeled corpus attached, ranking turns back on.
  const auto extra_dir = temp_dir("rankpyr_fitnd_extra");
  data::synth_corpus(extra_dir, 4, 4, 10, 12, scfg);
  data::Corpus extra = data::Corpus::load(extra_dir);
  model::CrowdCounter m2(cfg.model, 23);
  auto r2 = fit(m2, corpus, index, cfg, temp_dir("rankpyr_fitnd_out2"), &extra);
  CHECK(r2.ranking_active);
}

TEST_CASE("checkpoint manifest carries optimizer settings verbatim") {
  const auto dir = temp_dir("rankpyr_fitmf_data");
  data::SynthConfig scfg;
  scfg.width = 96;
  scfg.height = 96;
  data::synth_corpus(dir, 6, 4, 10, 13, scfg);
  data::Corpus corpus = data::Corpus::load(dir);
  auto index = data::split(corpus, 0.5, 5);

  TrainConfig cfg = small_config();
  cfg.steps = 1;
  cfg.lr = 3e-4;
  cfg.weight_decay = 2e-4;
  model::CrowdCounter m(cfg.model, 29);
  auto r = fit(m, corpus, index, cfg, temp_dir("rankpyr_fitmf_out"));

  nlohmann::json extra;
  model::CrowdCounter::load_checkpoint(r.final_checkpoint, &extra);
  CHECK(extra.at("optimizer").at("lr").get<double>() == 3e-4);
  CHECK(extra.at("optimizer").at("weight_decay").get<double>() == 2e-4);
  CHECK(extra.at("train_config").at("lr").get<double>() == 3e-4);
  CHECK(extra.at("train_config").at("weight_decay").get<double>() == 2e-4);
}
