#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "rankpyr/errors.hpp"
#include "rankpyr/eval.hpp"
#include "rankpyr/image_io.hpp"

using namespace rankpyr;
using namespace rankpyr::eval;

namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("mae_rmse: hand values") {
  auto [mae, rmse] = mae_rmse({10, 20}, {12, 16});
  CHECK(mae == doctest::Approx(3.0));
  CHECK(rmse == doctest::Approx(std::sqrt(10.0)));

  auto [z1, z2] = mae_rmse({5, 6, 7}, {5, 6, 7});
  CHECK(z1 == 0.0);
  CHECK(z2 == 0.0);

  auto [m1, r1] = mae_rmse({15}, {10});
  CHECK(m1 == 5.0);
  CHECK(r1 == 5.0);

  CHECK_THROWS_AS(mae_rmse({1, 2}, {1}), InvalidInput);
  CHECK_THROWS_AS(mae_rmse({}, {}), InvalidInput);
}

TEST_CASE("mae <= rmse on random vectors; permutation invariance") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(0, 30));
    std::vector<double> pred(n), truth(n);
    for (int i = 0; i < n; ++i) {
      pred[i] = rng.uniform(0, 100);
      truth[i] = rng.uniform(0, 100);
    }
    auto [mae, rmse] = mae_rmse(pred, truth);
    CHECK(mae <= rmse + 1e-12);

    std::vector<size_t> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    for (size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.next_u64() % i]);
    std::vector<double> pred_p(n), truth_p(n);
    for (int i = 0; i < n; ++i) {
      pred_p[i] = pred[perm[i]];
      truth_p[i] = truth[perm[i]];
    }
    auto [mae_p, rmse_p] = mae_rmse(pred_p, truth_p);
    CHECK(mae_p == doctest::Approx(mae).epsilon(1e-12));
    CHECK(rmse_p == doctest::Approx(rmse).epsilon(1e-12));
  }
}

TEST_CASE("rank audit over a ground-truth density map reports zero violations") {
  Rng rng(5);
  density::HeadPointSet pts;
  pts.height = 128;
  pts.width = 128;
  for (int i = 0; i < 40; ++i) pts.points.push_back({rng.uniform(0, 127.0), rng.uniform(0, 127.0)});
  auto map = density::fixed_kernel_density(pts, 4.0);
  auto audit = rank_audit_density(map, 4, 0.75, 25, 7);
  CHECK(audit.pairs == 25 * 10);
  CHECK(audit.violation_rate == 0.0);
  CHECK(audit.mean_hinge == 0.0);
}

TEST_CASE("rank audit on an untrained model is finite and deterministic") {
  const auto dir = temp_dir("rankpyr_eval_audit");
  data::SynthConfig scfg;
  scfg.width = 96;
  scfg.height = 96;
  data::synth_corpus(dir, 3, 4, 12, 17, scfg);
  data::Corpus corpus = data::Corpus::load(dir);

  model::ModelConfig mcfg;
  mcfg.decoder_width = 8;
  model::CrowdCounter m(mcfg, 11);
  auto audit = rank_audit(m, corpus, {0, 1, 2}, 4, 0.75, 2, 13);
  CHECK(audit.pairs == 3 * 2 * 3 * 10);  // images x centers x levels x pairs
  CHECK(audit.violation_rate >= 0.0);
  CHECK(audit.violation_rate <= 1.0);
  CHECK(std::isfinite(audit.mean_hinge));

  auto again = rank_audit(m, corpus, {0, 1, 2}, 4, 0.75, 2, 13);
  CHECK(again.violation_rate == audit.violation_rate);
  CHECK(again.mean_hinge == audit.mean_hinge);
}

TEST_CASE("evaluate_oracle: ground-truth masses give near-zero MAE") {
  const auto dir = temp_dir("rankpyr_eval_oracle");
  data::SynthConfig scfg;
  scfg.width = 96;
  scfg.height = 96;
  data::synth_corpus(dir, 5, 4, 12, 19, scfg);
  data::Corpus corpus = data::Corpus::load(dir);
  density::KernelConfig kernel;
  kernel.sigma = 3.0;
  auto report = evaluate_oracle(corpus, {0, 1, 2, 3, 4}, kernel);
  CHECK(report.mae <= 0.02);
  CHECK(report.mae <= report.rmse + 1e-12);
  CHECK(report.per_image.size() == 5);

  const auto j = report.to_json();
  CHECK(j.at("per_image").size() == 5);
  const auto csv = fs::temp_directory_path() / "rankpyr_eval.csv";
  report.save_csv(csv);
  CHECK(fs::exists(csv));
}

TEST_CASE("evaluate: full-image counts from the model are finite") {
  const auto dir = temp_dir("rankpyr_eval_model");
  data::SynthConfig scfg;
  scfg.width = 96;
  scfg.height = 96;
  data::synth_corpus(dir, 3, 4, 12, 23, scfg);
  data::Corpus corpus = data::Corpus::load(dir);
  model::ModelConfig mcfg;
  mcfg.decoder_width = 8;
  model::CrowdCounter m(mcfg, 31);
  auto report = evaluate(m, corpus, {0, 1, 2});
  CHECK(report.per_image.size() == 3);
  for (const auto& row : report.per_image) {
    CHECK(std::isfinite(row.predicted));
    CHECK(row.predicted >= 0.0);  // non-negative density head
    CHECK(row.abs_error == doctest::Approx(std::abs(row.predicted - row.actual)));
  }
}

TEST_CASE("export_overlay: zero map leaves the image untouched; mass lands in tEXt") {
  Rng rng(7);
  Tensor img(3, 40, 40);
  for (double& v : img.data) v = rng.uniform(0, 1);

  const auto base_path = fs::temp_directory_path() / "rankpyr_base.png";
  io::write_png(img, base_path);

  density::DensityMap zero(20, 20);
  const auto zero_path = fs::temp_directory_path() / "rankpyr_overlay_zero.png";
  export_overlay(img, zero, zero_path);
  Tensor base_back = io::read_png(base_path);
  Tensor zero_back = io::read_png(zero_path);
  REQUIRE(base_back.data == zero_back.data);

  density::HeadPointSet pts;
  pts.height = 40;
  pts.width = 40;
  pts.points = {{20, 20}, {10, 30}};
  auto map = density::fixed_kernel_density(pts, 3.0);
  const auto path = fs::temp_directory_path() / "rankpyr_overlay.png";
  export_overlay(img, map, path);
  auto text = io::read_png_text(path);
  REQUIRE(!text.empty());
  CHECK(text[0].first == "mass");
  CHECK(std::abs(std::stod(text[0].second) - map.mass()) <= 0.01);
}

TEST_CASE("export_density round-trips through the DMAP raster") {
  density::HeadPointSet pts;
  pts.height = 32;
  pts.width = 48;
  pts.points = {{10, 10}, {40, 20}};
  auto map = density::fixed_kernel_density(pts, 2.5);
  const auto path = fs::temp_directory_path() / "rankpyr_export.dmap";
  export_density(map, path);
  auto back = density::read_dmap(path);
  REQUIRE(back.grid == map.grid);
}
