#include "rankpyr/losses.hpp"

#include <algorithm>

#include "rankpyr/errors.hpp"

namespace rankpyr::losses {

using autograd::Var;
using nlohmann::json;

json LossBreakdown::to_json() const {
  auto terms = json::array();
  for (const auto& t : pair_terms) terms.push_back({t.image, t.level, t.small_idx, t.large_idx, t.hinge});
  return json{{"supervised", supervised}, {"ranking", ranking},      {"total", total},
              {"lambda", lambda},         {"epsilon", epsilon},      {"pair_terms", std::move(terms)}};
}

double supervised_l2(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt) {
  if (pred.empty() || pred.size() != gt.size()) throw InvalidInput("supervised_l2: batch size mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (!pred[i].same_shape(gt[i])) throw InvalidInput("supervised_l2: shape mismatch in sample " + std::to_string(i));
    for (size_t j = 0; j < pred[i].size(); ++j) {
      const double d = pred[i].data[j] - gt[i].data[j];
      acc += d * d;
    }
  }
  return acc / (2.0 * static_cast<double>(pred.size()));
}

double margin_rank_pair(double count_small, double count_large, double epsilon) {
  if (epsilon < 0.0) throw InvalidParameter("margin_rank_pair: epsilon must be >= 0");
  return std::max(0.0, count_small - count_large + epsilon);
}

namespace {

// Validates the N x K x (M+1) layout and returns (K, M).
std::pair<int, int> check_counts_shape(size_t n_images, size_t k_levels, size_t m_plus_1) {
  if (n_images == 0) throw InvalidInput("pyramid_rank_loss: empty batch");
  if (k_levels == 0) throw InvalidInput("pyramid_rank_loss: missing levels");
  if (m_plus_1 < 2) throw InvalidInput("pyramid_rank_loss: need at least 2 patches per level");
  return {static_cast<int>(k_levels), static_cast<int>(m_plus_1 - 1)};
}

}  // namespace

double pyramid_rank_loss(const std::vector<std::vector<std::vector<double>>>& counts, double epsilon,
                         std::vector<PairTerm>* terms) {
  if (counts.empty() || counts[0].empty() || counts[0][0].empty())
    throw InvalidInput("pyramid_rank_loss: empty counts");
  const auto [k_levels, m_patches] = check_counts_shape(counts.size(), counts[0].size(), counts[0][0].size());
  double sum = 0.0;
  for (size_t n = 0; n < counts.size(); ++n) {
    if (static_cast<int>(counts[n].size()) != k_levels)
      throw InvalidInput("pyramid_rank_loss: image " + std::to_string(n) + " is missing levels");
    for (size_t k = 0; k < counts[n].size(); ++k) {
      const auto& patch_counts = counts[n][k];
      if (static_cast<int>(patch_counts.size()) != m_patches + 1)
        throw InvalidInput("pyramid_rank_loss: image " + std::to_string(n) + " level " + std::to_string(k) +
                           " is missing patches");
      for (int m = 0; m < m_patches; ++m) {
        for (int l = m + 1; l <= m_patches; ++l) {
          const double h = margin_rank_pair(patch_counts[m], patch_counts[l], epsilon);
          sum += h;
          if (terms) terms->push_back({static_cast<int>(n), static_cast<int>(k), m, l, h});
        }
      }
    }
  }
  const double norm = 2.0 / (static_cast<double>(counts.size()) * k_levels * m_patches * (m_patches + 1));
  return norm * sum;
}

double total_loss(double supervised, double ranking, double lambda) {
  if (lambda < 0.0) throw InvalidParameter("total_loss: lambda must be >= 0");
  return supervised + lambda * ranking;
}

Var supervised_l2_var(const std::vector<Var>& preds, const std::vector<Tensor>& gts) {
  if (preds.empty() || preds.size() != gts.size()) throw InvalidInput("supervised_l2: batch size mismatch");
  Var acc;
  for (size_t i = 0; i < preds.size(); ++i) {
    Var term = autograd::sq_norm_half(preds[i], gts[i]);
    acc = acc ? autograd::add(acc, term) : term;
  }
  return autograd::scale(acc, 1.0 / static_cast<double>(preds.size()));
}

Var hinge_var(const Var& count_small, const Var& count_large, double epsilon) {
  if (epsilon < 0.0) throw InvalidParameter("hinge: epsilon must be >= 0");
  return autograd::relu(autograd::add_const(autograd::sub(count_small, count_large), epsilon));
}

Var pyramid_rank_loss_var(const std::vector<std::vector<std::vector<Var>>>& counts, double epsilon,
                          std::vector<PairTerm>* terms) {
  if (counts.empty() || counts[0].empty() || counts[0][0].empty())
    throw InvalidInput("pyramid_rank_loss: empty counts");
  const auto [k_levels, m_patches] = check_counts_shape(counts.size(), counts[0].size(), counts[0][0].size());
  Var acc;
  for (size_t n = 0; n < counts.size(); ++n) {
    if (static_cast<int>(counts[n].size()) != k_levels)
      throw InvalidInput("pyramid_rank_loss: image " + std::to_string(n) + " is missing levels");
    for (size_t k = 0; k < counts[n].size(); ++k) {
      const auto& patch_counts = counts[n][k];
      if (static_cast<int>(patch_counts.size()) != m_patches + 1)
        throw InvalidInput("pyramid_rank_loss: image " + std::to_string(n) + " level " + std::to_string(k) +
                           " is missing patches");
      for (int m = 0; m < m_patches; ++m) {
        for (int l = m + 1; l <= m_patches; ++l) {
          Var h = hinge_var(patch_counts[m], patch_counts[l], epsilon);
          if (terms)
            terms->push_back({static_cast<int>(n), static_cast<int>(k), m, l, h->scalar()});
          acc = acc ? autograd::add(acc, h) : h;
        }
      }
    }
  }
  const double norm = 2.0 / (static_cast<double>(counts.size()) * k_levels * m_patches * (m_patches + 1));
  return autograd::scale(acc, norm);
}

}  // namespace rankpyr::losses
