#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <vector>

namespace rankpyr {

// Dense CHW tensor of doubles. Convolution weights are stored as
// (out_channels, in_channels, k*k) using the same container.
struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int c_, int h_, int w_, double fill = 0.0)
      : c(c_), h(h_), w(w_), data(static_cast<size_t>(c_) * h_ * w_, fill) {}

  size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  double& at(int ci, int yi, int xi) {
    assert(ci >= 0 && ci < c && yi >= 0 && yi < h && xi >= 0 && xi < w);
    return data[(static_cast<size_t>(ci) * h + yi) * w + xi];
  }
  double at(int ci, int yi, int xi) const {
    assert(ci >= 0 && ci < c && yi >= 0 && yi < h && xi >= 0 && xi < w);
    return data[(static_cast<size_t>(ci) * h + yi) * w + xi];
  }

  double* channel(int ci) { return data.data() + static_cast<size_t>(ci) * h * w; }
  const double* channel(int ci) const { return data.data() + static_cast<size_t>(ci) * h * w; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }

  static Tensor zeros_like(const Tensor& o) { return Tensor(o.c, o.h, o.w); }

  static Tensor scalar(double v) {
    Tensor t(1, 1, 1);
    t.data[0] = v;
    return t;
  }
};

}  // namespace rankpyr
