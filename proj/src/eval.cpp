#include "rankpyr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "rankpyr/errors.hpp"
#include "rankpyr/image_io.hpp"
#include "rankpyr/pyramid.hpp"

namespace rankpyr::eval {

namespace fs = std::filesystem;
using nlohmann::json;

std::pair<double, double> mae_rmse(const std::vector<double>& pred_counts,
                                   const std::vector<double>& true_counts) {
  if (pred_counts.empty() || pred_counts.size() != true_counts.size())
    throw InvalidInput("mae_rmse: length mismatch (" + std::to_string(pred_counts.size()) + " vs " +
                       std::to_string(true_counts.size()) + ")");
  double abs_sum = 0.0, sq_sum = 0.0;
  for (size_t i = 0; i < pred_counts.size(); ++i) {
    const double e = pred_counts[i] - true_counts[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
  }
  const double n = static_cast<double>(pred_counts.size());
  return {abs_sum / n, std::sqrt(sq_sum / n)};
}

json EvalReport::to_json() const {
  auto rows = json::array();
  for (const auto& r : per_image)
    rows.push_back({{"id", r.id}, {"predicted", r.predicted}, {"actual", r.actual}, {"abs_error", r.abs_error}});
  return json{{"mae", mae}, {"rmse", rmse}, {"violation_rate", violation_rate}, {"per_image", std::move(rows)}};
}

void EvalReport::save_csv(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "id,predicted,actual,abs_error\n";
  for (const auto& r : per_image)
    out << r.id << "," << r.predicted << "," << r.actual << "," << r.abs_error << "\n";
}

namespace {

Tensor normalized(const Tensor& image, const EvalOptions& opts) {
  Tensor out = image;
  for (int ci = 0; ci < 3; ++ci) {
    double* ch = out.channel(ci);
    const size_t plane = static_cast<size_t>(out.h) * out.w;
    for (size_t i = 0; i < plane; ++i) ch[i] = (ch[i] - opts.mean[ci]) / opts.stddev[ci];
  }
  return out;
}

EvalReport finalize(std::vector<EvalRow> rows) {
  EvalReport report;
  report.per_image = std::move(rows);
  std::vector<double> pred, truth;
  for (const auto& r : report.per_image) {
    pred.push_back(r.predicted);
    truth.push_back(r.actual);
  }
  std::tie(report.mae, report.rmse) = mae_rmse(pred, truth);
  return report;
}

}  // namespace

EvalReport evaluate(const model::CrowdCounter& model, const data::Corpus& corpus, const std::vector<int>& ids,
                    const EvalOptions& opts) {
  if (ids.empty()) throw InvalidInput("evaluate: no images");
  std::vector<EvalRow> rows;
  data::LoadOptions load_opts;
  load_opts.resize_cap_px = opts.resize_cap_px;
  for (int id : ids) {
    data::Sample s = data::load_sample(corpus, id, true, load_opts);
    EvalRow row;
    row.id = s.id;
    row.predicted = model.predict_count(normalized(s.image, opts));
    row.actual = static_cast<double>(s.points->points.size());
    row.abs_error = std::abs(row.predicted - row.actual);
    rows.push_back(std::move(row));
  }
  return finalize(std::move(rows));
}

EvalReport evaluate_oracle(const data::Corpus& corpus, const std::vector<int>& ids,
                           const density::KernelConfig& kernel, int resize_cap_px) {
  if (ids.empty()) throw InvalidInput("evaluate: no images");
  std::vector<EvalRow> rows;
  data::LoadOptions load_opts;
  load_opts.resize_cap_px = resize_cap_px;
  load_opts.kernel = kernel;
  for (int id : ids) {
    data::Sample s = data::load_sample(corpus, id, true, load_opts);
    EvalRow row;
    row.id = s.id;
    row.predicted = s.density->mass();
    row.actual = static_cast<double>(s.points->points.size());
    row.abs_error = std::abs(row.predicted - row.actual);
    rows.push_back(std::move(row));
  }
  return finalize(std::move(rows));
}

json RankAuditResult::to_json() const {
  return json{{"violation_rate", violation_rate}, {"mean_hinge", mean_hinge}, {"pairs", pairs}};
}

RankAuditResult rank_audit(const model::CrowdCounter& model, const data::Corpus& corpus,
                           const std::vector<int>& ids, int m_patches, double ratio, int n_centers,
                           uint64_t seed, const EvalOptions& opts) {
  if (n_centers < 1) throw InvalidParameter("rank_audit: n_centers must be >= 1");
  Rng rng(seed);
  data::LoadOptions load_opts;
  load_opts.resize_cap_px = opts.resize_cap_px;
  RankAuditResult result;
  long violated = 0;
  double hinge_sum = 0.0;
  for (int id : ids) {
    data::Sample s = data::load_sample(corpus, id, false, load_opts);
    const auto feats = model.extract(normalized(s.image, opts));
    for (int c = 0; c < n_centers; ++c) {
      const auto draw = pyramid::draw_center(rng);
      for (int level = 0; level < feats.k(); ++level) {
        const auto& fmap = feats.levels[level];
        const pyramid::LevelShape shape{fmap->val.c, fmap->val.h, fmap->val.w};
        std::pair<int, int> center;
        try {
          center = pyramid::center_for_level(shape, draw);
        } catch (const LevelTooSmall&) {
          continue;
        }
        const auto set = pyramid::generate_nested_boxes(shape, center, m_patches, ratio);
        std::vector<double> counts;
        for (const auto& box : set.boxes)
          counts.push_back(model.count_from_patch(pyramid::crop_and_resize(fmap, box), level)->scalar());
        for (const auto& [m, n] : pyramid::build_pair_set(set).pairs) {
          const double h = std::max(0.0, counts[m] - counts[n]);
          hinge_sum += h;
          if (h > 0.0) ++violated;
          ++result.pairs;
        }
      }
    }
  }
  if (result.pairs > 0) {
    result.violation_rate = static_cast<double>(violated) / static_cast<double>(result.pairs);
    result.mean_hinge = hinge_sum / static_cast<double>(result.pairs);
  }
  return result;
}

RankAuditResult rank_audit_density(const density::DensityMap& map, int m_patches, double ratio, int n_centers,
                                   uint64_t seed) {
  if (n_centers < 1) throw InvalidParameter("rank_audit: n_centers must be >= 1");
  Rng rng(seed);
  RankAuditResult result;
  long violated = 0;
  double hinge_sum = 0.0;
  const pyramid::LevelShape shape{1, map.h, map.w};
  for (int c = 0; c < n_centers; ++c) {
    const auto center = pyramid::sample_center(shape, rng);
    const auto set = pyramid::generate_nested_boxes(shape, center, m_patches, ratio);
    std::vector<double> counts;
    for (const auto& box : set.boxes) counts.push_back(density::integrate(map, box));
    for (const auto& [m, n] : pyramid::build_pair_set(set).pairs) {
      const double h = std::max(0.0, counts[m] - counts[n]);
      hinge_sum += h;
      if (h > 0.0) ++violated;
      ++result.pairs;
    }
  }
  if (result.pairs > 0) {
    result.violation_rate = static_cast<double>(violated) / static_cast<double>(result.pairs);
    result.mean_hinge = hinge_sum / static_cast<double>(result.pairs);
  }
  return result;
}

void export_density(const density::DensityMap& map, const fs::path& path) { density::write_dmap(map, path); }

void export_overlay(const Tensor& image, const density::DensityMap& map, const fs::path& path) {
  if (image.c != 3) throw InvalidInput("export_overlay: expected a 3-channel image");
  // Heat layer resized to the image; alpha follows the local density, so an
  // all-zero map leaves the image untouched.
  Tensor heat(1, map.h, map.w);
  for (size_t i = 0; i < map.grid.size(); ++i) heat.data[i] = map.grid[i];
  Tensor heat_resized(1, image.h, image.w);
  kernels::bilinear_resize_forward(heat, heat_resized);
  double peak = 0.0;
  for (double v : heat_resized.data) peak = std::max(peak, v);

  Tensor out = image;
  if (peak > 0.0) {
    for (int y = 0; y < image.h; ++y) {
      for (int x = 0; x < image.w; ++x) {
        const double t = heat_resized.at(0, y, x) / peak;
        const double alpha = 0.85 * t;
        const double r = 1.0, g = 1.0 - t, b = 0.0;
        out.at(0, y, x) = (1.0 - alpha) * out.at(0, y, x) + alpha * r;
        out.at(1, y, x) = (1.0 - alpha) * out.at(1, y, x) + alpha * g;
        out.at(2, y, x) = (1.0 - alpha) * out.at(2, y, x) + alpha * b;
      }
    }
  }
  char mass_str[64];
  std::snprintf(mass_str, sizeof(mass_str), "%.4f", map.mass());
  io::write_png(out, path, {{"mass", mass_str}});
}

}  // namespace rankpyr::eval
