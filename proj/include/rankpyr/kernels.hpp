#pragma once

#include <cstdint>
#include <vector>

#include "rankpyr/tensor.hpp"

namespace rankpyr::kernels {

// Every kernel has two implementations: a plain serial reference in
// kernels::serial and an OpenMP one in kernels::par. Both decompose work by
// output ownership, so results are deterministic for any thread count; the
// dispatching wrappers below pick the active backend. Tests compare the two
// backends, bench/ times them.
enum class Backend { Serial, Parallel };

Backend active();
void set_backend(Backend b);
const char* backend_name(Backend b);

// Work threshold (in inner-loop operations) below which the parallel
// kernels fall back to the serial body; fork/join overhead dwarfs the work
// on small feature maps. 0 forces the parallel path (tests, bench).
size_t parallel_cutoff();
void set_parallel_cutoff(size_t ops);

// All convolutions are stride 1; downsampling goes through maxpool2.
//
// Contracts:
//   conv2d_forward / conv2d_backward_data  allocate their output tensor.
//   conv2d_backward_weights                accumulates into dw / db.
//   maxpool2_backward, bilinear_resize_backward
//     scatter-accumulate into a caller-provided dx of the input shape.
struct ConvSpec {
  int in_ch = 0;
  int out_ch = 0;
  int k = 3;
  int pad = 1;
  int dilation = 1;

  int out_h(int in_h) const { return in_h + 2 * pad - dilation * (k - 1); }
  int out_w(int in_w) const { return in_w + 2 * pad - dilation * (k - 1); }
  size_t weight_count() const { return static_cast<size_t>(out_ch) * in_ch * k * k; }
};

namespace serial {

void conv2d_forward(const ConvSpec& s, const Tensor& x, const double* w, const double* b, Tensor& y);
void conv2d_backward_data(const ConvSpec& s, const Tensor& dy, const double* w, Tensor& dx);
void conv2d_backward_weights(const ConvSpec& s, const Tensor& x, const Tensor& dy, double* dw, double* db);

void relu_forward(const Tensor& x, Tensor& y);
void relu_backward(const Tensor& x, const Tensor& dy, Tensor& dx);

void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<int32_t>& argmax);
void maxpool2_backward(const Tensor& dy, const std::vector<int32_t>& argmax, Tensor& dx);

void bilinear_resize_forward(const Tensor& x, Tensor& y);
void bilinear_resize_backward(const Tensor& dy, Tensor& dx);

double reduce_sum(const double* v, size_t n);

void gaussian_splat(const double* xs, const double* ys, const double* sigmas, int n_points,
                    int h, int w, float* grid);

}  // namespace serial

namespace par {

void conv2d_forward(const ConvSpec& s, const Tensor& x, const double* w, const double* b, Tensor& y);
void conv2d_backward_data(const ConvSpec& s, const Tensor& dy, const double* w, Tensor& dx);
void conv2d_backward_weights(const ConvSpec& s, const Tensor& x, const Tensor& dy, double* dw, double* db);

void relu_forward(const Tensor& x, Tensor& y);
void relu_backward(const Tensor& x, const Tensor& dy, Tensor& dx);

void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<int32_t>& argmax);
void maxpool2_backward(const Tensor& dy, const std::vector<int32_t>& argmax, Tensor& dx);

void bilinear_resize_forward(const Tensor& x, Tensor& y);
void bilinear_resize_backward(const Tensor& dy, Tensor& dx);

double reduce_sum(const double* v, size_t n);

void gaussian_splat(const double* xs, const double* ys, const double* sigmas, int n_points,
                    int h, int w, float* grid);

}  // namespace par

// Dispatching wrappers.
void conv2d_forward(const ConvSpec& s, const Tensor& x, const double* w, const double* b, Tensor& y);
void conv2d_backward_data(const ConvSpec& s, const Tensor& dy, const double* w, Tensor& dx);
void conv2d_backward_weights(const ConvSpec& s, const Tensor& x, const Tensor& dy, double* dw, double* db);
void relu_forward(const Tensor& x, Tensor& y);
void relu_backward(const Tensor& x, const Tensor& dy, Tensor& dx);
void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<int32_t>& argmax);
void maxpool2_backward(const Tensor& dy, const std::vector<int32_t>& argmax, Tensor& dx);
void bilinear_resize_forward(const Tensor& x, Tensor& y);
void bilinear_resize_backward(const Tensor& dy, Tensor& dx);
double reduce_sum(const double* v, size_t n);
void gaussian_splat(const double* xs, const double* ys, const double* sigmas, int n_points,
                    int h, int w, float* grid);

}  // namespace rankpyr::kernels
