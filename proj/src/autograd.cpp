#include "rankpyr/autograd.hpp"

#include <unordered_set>

#include "rankpyr/errors.hpp"

namespace rankpyr::autograd {

void Node::accumulate(const Tensor& g) {
  ensure_grad();
  for (size_t i = 0; i < grad.size(); ++i) grad.data[i] += g.data[i];
}

Var leaf(Tensor v, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->val = std::move(v);
  n->requires_grad = requires_grad;
  return n;
}

namespace {

Var make_op(Tensor val, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, const kernels::ConvSpec& spec) {
  if (x->val.c != spec.in_ch)
    throw InvalidInput("conv2d: input has " + std::to_string(x->val.c) + " channels, expected " +
                       std::to_string(spec.in_ch));
  Tensor y;
  kernels::conv2d_forward(spec, x->val, w->val.data.data(), b->val.data.data(), y);
  return make_op(std::move(y), {x, w, b}, [spec](Node& self) {
    const auto& x_ = self.parents[0];
    const auto& w_ = self.parents[1];
    const auto& b_ = self.parents[2];
    if (w_->requires_grad || b_->requires_grad) {
      w_->ensure_grad();
      b_->ensure_grad();
      kernels::conv2d_backward_weights(spec, x_->val, self.grad, w_->grad.data.data(), b_->grad.data.data());
    }
    if (x_->requires_grad) {
      Tensor dx;
      kernels::conv2d_backward_data(spec, self.grad, w_->val.data.data(), dx);
      x_->accumulate(dx);
    }
  });
}

Var relu(const Var& x) {
  Tensor y;
  kernels::relu_forward(x->val, y);
  return make_op(std::move(y), {x}, [](Node& self) {
    const auto& x_ = self.parents[0];
    if (!x_->requires_grad) return;
    Tensor dx;
    kernels::relu_backward(x_->val, self.grad, dx);
    x_->accumulate(dx);
  });
}

Var maxpool2(const Var& x) {
  if (x->val.h < 2 || x->val.w < 2) throw InvalidInput("maxpool2: input smaller than 2x2");
  Tensor y;
  auto argmax = std::make_shared<std::vector<int32_t>>();
  kernels::maxpool2_forward(x->val, y, *argmax);
  return make_op(std::move(y), {x}, [argmax](Node& self) {
    const auto& x_ = self.parents[0];
    if (!x_->requires_grad) return;
    x_->ensure_grad();
    kernels::maxpool2_backward(self.grad, *argmax, x_->grad);
  });
}

Var resize_bilinear(const Var& x, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw InvalidInput("resize_bilinear: non-positive output dims");
  Tensor y(x->val.c, out_h, out_w);
  kernels::bilinear_resize_forward(x->val, y);
  return make_op(std::move(y), {x}, [](Node& self) {
    const auto& x_ = self.parents[0];
    if (!x_->requires_grad) return;
    x_->ensure_grad();
    kernels::bilinear_resize_backward(self.grad, x_->grad);
  });
}

Var crop(const Var& x, int top, int left, int height, int width) {
  const Tensor& v = x->val;
  if (top < 0 || left < 0 || height < 1 || width < 1 || top + height > v.h || left + width > v.w)
    throw InvalidRegion("crop: box (" + std::to_string(top) + "," + std::to_string(left) + "," +
                        std::to_string(height) + "," + std::to_string(width) + ") outside " +
                        std::to_string(v.h) + "x" + std::to_string(v.w));
  Tensor y(v.c, height, width);
  for (int ci = 0; ci < v.c; ++ci)
    for (int yi = 0; yi < height; ++yi)
      for (int xi = 0; xi < width; ++xi) y.at(ci, yi, xi) = v.at(ci, top + yi, left + xi);
  return make_op(std::move(y), {x}, [top, left, height, width](Node& self) {
    const auto& x_ = self.parents[0];
    if (!x_->requires_grad) return;
    x_->ensure_grad();
    for (int ci = 0; ci < self.grad.c; ++ci)
      for (int yi = 0; yi < height; ++yi)
        for (int xi = 0; xi < width; ++xi) x_->grad.at(ci, top + yi, left + xi) += self.grad.at(ci, yi, xi);
  });
}

Var sum(const Var& x) {
  Tensor y = Tensor::scalar(kernels::reduce_sum(x->val.data.data(), x->val.size()));
  return make_op(std::move(y), {x}, [](Node& self) {
    const auto& x_ = self.parents[0];
    if (!x_->requires_grad) return;
    x_->ensure_grad();
    const double g = self.grad.data[0];
    for (size_t i = 0; i < x_->grad.size(); ++i) x_->grad.data[i] += g;
  });
}

Var add(const Var& a, const Var& b) {
  if (!a->val.same_shape(b->val)) throw InvalidInput("add: shape mismatch");
  Tensor y = a->val;
  for (size_t i = 0; i < y.size(); ++i) y.data[i] += b->val.data[i];
  return make_op(std::move(y), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  if (!a->val.same_shape(b->val)) throw InvalidInput("sub: shape mismatch");
  Tensor y = a->val;
  for (size_t i = 0; i < y.size(); ++i) y.data[i] -= b->val.data[i];
  return make_op(std::move(y), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    const auto& b_ = self.parents[1];
    if (b_->requires_grad) {
      b_->ensure_grad();
      for (size_t i = 0; i < b_->grad.size(); ++i) b_->grad.data[i] -= self.grad.data[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor y = a->val;
  for (double& v : y.data) v *= s;
  return make_op(std::move(y), {a}, [s](Node& self) {
    const auto& a_ = self.parents[0];
    if (!a_->requires_grad) return;
    a_->ensure_grad();
    for (size_t i = 0; i < a_->grad.size(); ++i) a_->grad.data[i] += s * self.grad.data[i];
  });
}

Var add_const(const Var& a, double cst) {
  Tensor y = a->val;
  for (double& v : y.data) v += cst;
  return make_op(std::move(y), {a}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
  });
}

Var sq_norm_half(const Var& pred, const Tensor& target) {
  if (!pred->val.same_shape(target)) throw InvalidInput("sq_norm_half: prediction/target shape mismatch");
  auto diff = std::make_shared<Tensor>(pred->val);
  for (size_t i = 0; i < diff->size(); ++i) diff->data[i] -= target.data[i];
  double acc = 0.0;
  for (size_t i = 0; i < diff->size(); ++i) acc += diff->data[i] * diff->data[i];
  return make_op(Tensor::scalar(0.5 * acc), {pred}, [diff](Node& self) {
    const auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    const double g = self.grad.data[0];
    for (size_t i = 0; i < p->grad.size(); ++i) p->grad.data[i] += g * diff->data[i];
  });
}

void backward(const Var& root) {
  if (root->val.size() != 1) throw InvalidInput("backward: root must be scalar");
  // Iterative DFS topological order over parents.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    size_t next_parent;
  };
  std::vector<Frame> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node* p = f.node->parents[f.next_parent++].get();
      if (!visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad.data[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

}  // namespace rankpyr::autograd
