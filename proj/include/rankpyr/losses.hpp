#pragma once

#include <vector>

#include <json.hpp>

#include "rankpyr/autograd.hpp"
#include "rankpyr/tensor.hpp"

namespace rankpyr::losses {

struct PairTerm {
  int image = 0;
  int level = 0;
  int small_idx = 0;
  int large_idx = 0;
  double hinge = 0.0;
};

// One training step's loss record; serialized per step into the JSONL log.
// total == supervised + lambda * ranking to machine precision.
struct LossBreakdown {
  double supervised = 0.0;
  double ranking = 0.0;
  double total = 0.0;
  double lambda = 0.0;
  double epsilon = 0.0;
  std::vector<PairTerm> pair_terms;

  nlohmann::json to_json() const;
};

// (1/2N) sum_i ||pred_i - gt_i||^2 over all pixels.
double supervised_l2(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt);

// max(0, count_small - count_large + epsilon); zero iff the pair is ranked
// correctly with margin epsilon.
double margin_rank_pair(double count_small, double count_large, double epsilon);

// counts[n][k][m]: N images x K levels x (M+1) patch counts, patch 0 the
// smallest. Mean hinge over all N*K*M(M+1)/2 pairs, i.e. the pair-hinge sum
// scaled by 2/(N*K*M*(M+1)).
double pyramid_rank_loss(const std::vector<std::vector<std::vector<double>>>& counts, double epsilon,
                         std::vector<PairTerm>* terms = nullptr);

double total_loss(double supervised, double ranking, double lambda);

// Autograd builders used by the trainer; values agree with the scalar
// functions above.
autograd::Var supervised_l2_var(const std::vector<autograd::Var>& preds, const std::vector<Tensor>& gts);
autograd::Var hinge_var(const autograd::Var& count_small, const autograd::Var& count_large, double epsilon);
autograd::Var pyramid_rank_loss_var(const std::vector<std::vector<std::vector<autograd::Var>>>& counts,
                                    double epsilon, std::vector<PairTerm>* terms = nullptr);

}  // namespace rankpyr::losses
