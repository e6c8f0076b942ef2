#include "rankpyr/pyramid.hpp"

#include <cmath>

#include "rankpyr/errors.hpp"

namespace rankpyr::pyramid {

void NestedPatchSet::validate() const {
  if (boxes.size() < 2) throw InvalidParameter("NestedPatchSet: needs at least 2 boxes");
  const CropBox full = CropBox::full(level_shape.h, level_shape.w);
  if (!(boxes.back() == full)) throw InvalidParameter("NestedPatchSet: last box must cover the full map");
  for (size_t i = 0; i < boxes.size(); ++i) {
    if (boxes[i].height < 1 || boxes[i].width < 1 || !boxes[i].fits(level_shape.h, level_shape.w))
      throw InvalidParameter("NestedPatchSet: box outside feature map");
    if (i + 1 < boxes.size() && !boxes[i + 1].contains(boxes[i]))
      throw InvalidParameter("NestedPatchSet: boxes not nested");
  }
}

CenterDraw draw_center(Rng& rng) {
  CenterDraw d;
  d.t_row = rng.uniform();
  d.t_col = rng.uniform();
  return d;
}

namespace {

int axis_center(int extent, double t) {
  const int region = (extent + 7) / 8;  // ceil(extent / 8)
  const int start = (extent - region) / 2;
  int offset = static_cast<int>(t * region);
  if (offset >= region) offset = region - 1;  // t == 1.0 guard
  return start + offset;
}

}  // namespace

std::pair<int, int> center_for_level(const LevelShape& shape, const CenterDraw& draw) {
  if (shape.h < 8 || shape.w < 8)
    throw LevelTooSmall("level " + std::to_string(shape.h) + "x" + std::to_string(shape.w) +
                        " is below the 8x8 minimum for center sampling");
  return {axis_center(shape.h, draw.t_row), axis_center(shape.w, draw.t_col)};
}

std::pair<int, int> sample_center(const LevelShape& shape, Rng& rng) {
  return center_for_level(shape, draw_center(rng));
}

NestedPatchSet generate_nested_boxes(const LevelShape& shape, std::pair<int, int> center, int m_patches,
                                     double ratio, int min_side) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidParameter("generate_nested_boxes: ratio must be in (0,1)");
  if (m_patches < 1) throw InvalidParameter("generate_nested_boxes: M must be >= 1");
  if (min_side < 1) throw InvalidParameter("generate_nested_boxes: min_side must be >= 1");
  if (shape.h < 1 || shape.w < 1) throw InvalidParameter("generate_nested_boxes: empty feature map");

  const int cr = std::clamp(center.first, 0, shape.h - 1);
  const int cc = std::clamp(center.second, 0, shape.w - 1);

  // Sides for v_M .. v_0: round half up, never below min_side (or the parent).
  std::vector<int> hs(m_patches + 1), ws(m_patches + 1);
  hs[m_patches] = shape.h;
  ws[m_patches] = shape.w;
  for (int m = m_patches - 1; m >= 0; --m) {
    hs[m] = std::min(hs[m + 1], std::max(min_side, static_cast<int>(std::floor(ratio * hs[m + 1] + 0.5))));
    ws[m] = std::min(ws[m + 1], std::max(min_side, static_cast<int>(std::floor(ratio * ws[m + 1] + 0.5))));
  }

  NestedPatchSet set;
  set.level_shape = shape;
  set.center_row = cr;
  set.center_col = cc;
  set.boxes.resize(m_patches + 1);
  for (int m = 0; m <= m_patches; ++m) {
    const int h = hs[m], w = ws[m];
    const int top = std::clamp(cr - h / 2, 0, shape.h - h);
    const int left = std::clamp(cc - w / 2, 0, shape.w - w);
    set.boxes[m] = {top, left, h, w};
  }
  set.validate();
  return set;
}

RankPairSet build_pair_set(const NestedPatchSet& set) {
  set.validate();
  const int m_patches = set.patch_count() - 1;
  RankPairSet pairs;
  pairs.pairs.reserve(pair_count(m_patches));
  for (int m = 0; m < m_patches; ++m)
    for (int n = m + 1; n <= m_patches; ++n) pairs.pairs.emplace_back(m, n);
  return pairs;
}

autograd::Var crop_and_resize(const autograd::Var& feature, const CropBox& box) {
  const int h = feature->val.h, w = feature->val.w;
  auto patch = autograd::crop(feature, box.top, box.left, box.height, box.width);
  return autograd::resize_bilinear(patch, h, w);
}

Tensor crop_and_resize(const Tensor& feature, const CropBox& box) {
  auto var = crop_and_resize(autograd::leaf(feature), box);
  return var->val;
}

}  // namespace rankpyr::pyramid
