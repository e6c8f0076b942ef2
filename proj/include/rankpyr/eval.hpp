#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "rankpyr/data.hpp"
#include "rankpyr/density.hpp"
#include "rankpyr/model.hpp"

namespace rankpyr::eval {

// MAE = mean |pred - truth|, RMSE = sqrt(mean (pred - truth)^2).
std::pair<double, double> mae_rmse(const std::vector<double>& pred_counts,
                                   const std::vector<double>& true_counts);

struct EvalRow {
  std::string id;
  double predicted = 0.0;
  double actual = 0.0;
  double abs_error = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> per_image;
  double mae = 0.0;
  double rmse = 0.0;
  double violation_rate = 0.0;  // filled when a rank audit accompanies the eval

  nlohmann::json to_json() const;
  void save_csv(const std::filesystem::path& path) const;
};

struct EvalOptions {
  int resize_cap_px = 1920;
  std::array<double, 3> mean = {0.485, 0.456, 0.406};
  std::array<double, 3> stddev = {0.229, 0.224, 0.225};
};

// Full-image counts (no crops); the predicted count is the mass of the
// predicted density map, the actual count the number of annotated points.
EvalReport evaluate(const model::CrowdCounter& model, const data::Corpus& corpus, const std::vector<int>& ids,
                    const EvalOptions& opts = {});

// GT-oracle variant: "predictions" are the ground-truth density masses.
EvalReport evaluate_oracle(const data::Corpus& corpus, const std::vector<int>& ids,
                           const density::KernelConfig& kernel, int resize_cap_px = 1920);

struct RankAuditResult {
  double violation_rate = 0.0;
  double mean_hinge = 0.0;
  long pairs = 0;

  nlohmann::json to_json() const;
};

// Samples centers on every image, evaluates all pyramid pairs with the
// model's counts, and reports the violated fraction and mean violation.
RankAuditResult rank_audit(const model::CrowdCounter& model, const data::Corpus& corpus,
                           const std::vector<int>& ids, int m_patches, double ratio, int n_centers,
                           uint64_t seed, const EvalOptions& opts = {});

// Counts-oracle variant over one density map: integrate() supplies the
// counts, so the audit must report zero violations.
RankAuditResult rank_audit_density(const density::DensityMap& map, int m_patches, double ratio, int n_centers,
                                   uint64_t seed);

// Bit-exact density raster (see density::write_dmap).
void export_density(const density::DensityMap& map, const std::filesystem::path& path);

// Heatmap alpha-blended over the image; the map's mass is recorded in the
// PNG "mass" tEXt chunk.
void export_overlay(const Tensor& image, const density::DensityMap& map, const std::filesystem::path& path);

}  // namespace rankpyr::eval
