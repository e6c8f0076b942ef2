#pragma once

#include <algorithm>

namespace rankpyr {

// Axis-aligned box in integer cell coordinates, local to one grid or
// feature map.
struct CropBox {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;

  int bottom() const { return top + height; }  // exclusive
  int right() const { return left + width; }   // exclusive
  long area() const { return static_cast<long>(height) * width; }

  bool fits(int grid_h, int grid_w) const {
    return top >= 0 && left >= 0 && height >= 0 && width >= 0 && bottom() <= grid_h && right() <= grid_w;
  }

  bool contains(const CropBox& o) const {
    return o.top >= top && o.left >= left && o.bottom() <= bottom() && o.right() <= right();
  }

  bool operator==(const CropBox& o) const = default;

  static CropBox full(int grid_h, int grid_w) { return {0, 0, grid_h, grid_w}; }
};

// Input-space region covered by a level-space box: scale by the level's
// cumulative stride and expand by its receptive-field radius. Monotone in
// the box bounds, so nesting is preserved.
inline CropBox input_region(const CropBox& box, int stride, int rf_radius, int input_h, int input_w) {
  const int top = std::max(0, box.top * stride - rf_radius);
  const int left = std::max(0, box.left * stride - rf_radius);
  const int bottom = std::min(input_h, (box.bottom() - 1) * stride + rf_radius + 1);
  const int right = std::min(input_w, (box.right() - 1) * stride + rf_radius + 1);
  return {top, left, std::max(0, bottom - top), std::max(0, right - left)};
}

}  // namespace rankpyr
