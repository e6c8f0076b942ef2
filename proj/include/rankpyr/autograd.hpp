#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "rankpyr/kernels.hpp"
#include "rankpyr/tensor.hpp"

namespace rankpyr::autograd {

// Reverse-mode tape. A graph is built per training step and dropped after
// backward(); parameters are long-lived leaves whose grads the optimizer
// zeroes between steps.
struct Node {
  Tensor val;
  Tensor grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  void ensure_grad() {
    if (grad.empty()) grad = Tensor(val.c, val.h, val.w);
  }
  void accumulate(const Tensor& g);
  double scalar() const { return val.data[0]; }
};

using Var = std::shared_ptr<Node>;

Var leaf(Tensor v, bool requires_grad = false);

Var conv2d(const Var& x, const Var& w, const Var& b, const kernels::ConvSpec& spec);
Var relu(const Var& x);
Var maxpool2(const Var& x);
Var resize_bilinear(const Var& x, int out_h, int out_w);
Var crop(const Var& x, int top, int left, int height, int width);

Var sum(const Var& x);  // scalar: sum of all cells
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_const(const Var& a, double cst);

// 0.5 * ||pred - target||^2 as a scalar.
Var sq_norm_half(const Var& pred, const Tensor& target);

// Seeds d(root) = 1 and propagates to all leaves with requires_grad.
// root must be scalar-shaped.
void backward(const Var& root);

}  // namespace rankpyr::autograd
