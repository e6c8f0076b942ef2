#pragma once

#include <utility>
#include <vector>

#include "rankpyr/autograd.hpp"
#include "rankpyr/geometry.hpp"
#include "rankpyr/rng.hpp"
#include "rankpyr/tensor.hpp"

namespace rankpyr::pyramid {

struct LevelShape {
  int c = 0;
  int h = 0;
  int w = 0;
};

// M nested crops of one feature map plus the full map. boxes[0] is the
// smallest patch, boxes[M] the full map; every box is contained in the next.
struct NestedPatchSet {
  std::vector<CropBox> boxes;
  LevelShape level_shape;
  int center_row = 0;
  int center_col = 0;

  int patch_count() const { return static_cast<int>(boxes.size()); }  // M + 1
  void validate() const;                                              // throws on broken invariants
};

// Ordered index pairs (small m, large n) with m < n; cardinality M(M+1)/2.
struct RankPairSet {
  std::vector<std::pair<int, int>> pairs;
};

constexpr long pair_count(int m) { return static_cast<long>(m) * (m + 1) / 2; }

// One center draw shared by all pyramid levels: the normalized offset is
// drawn once and mapped into each level's central region, so every level
// ranks the same spatial neighborhood.
struct CenterDraw {
  double t_row = 0.5;
  double t_col = 0.5;
};

CenterDraw draw_center(Rng& rng);

// Maps a draw into this level's sampling region: uniform over the
// ceil(H/8) x ceil(W/8) box centered at (H/2, W/2).
// Throws LevelTooSmall when H < 8 or W < 8.
std::pair<int, int> center_for_level(const LevelShape& shape, const CenterDraw& draw);

std::pair<int, int> sample_center(const LevelShape& shape, Rng& rng);

// Sides shrink by ratio r per step (round half up, floor min_side), all
// boxes share the center up to the 1-cell integer adjustment and are
// clamped inside the map. boxes[M] is the full map.
NestedPatchSet generate_nested_boxes(const LevelShape& shape, std::pair<int, int> center, int m_patches,
                                     double ratio, int min_side = 2);

RankPairSet build_pair_set(const NestedPatchSet& set);

// Channelwise bilinear resize of the cropped region back to the feature
// map's own spatial dims. Cropping the full box is the identity.
autograd::Var crop_and_resize(const autograd::Var& feature, const CropBox& box);
Tensor crop_and_resize(const Tensor& feature, const CropBox& box);

}  // namespace rankpyr::pyramid
