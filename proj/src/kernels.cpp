#include "rankpyr/kernels.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rankpyr::kernels {

namespace {

Backend g_backend = Backend::Parallel;

size_t default_cutoff() {
  if (const char* env = std::getenv("RANKPYR_PAR_CUTOFF")) return std::strtoull(env, nullptr, 10);
  // Fork/join overhead dwarfs the work below ~256k inner ops.
  return 256u << 10;
}

size_t g_parallel_cutoff = default_cutoff();

}  // namespace

Backend active() { return g_backend; }
void set_backend(Backend b) { g_backend = b; }
const char* backend_name(Backend b) { return b == Backend::Serial ? "serial" : "parallel"; }

size_t parallel_cutoff() { return g_parallel_cutoff; }
void set_parallel_cutoff(size_t ops) { g_parallel_cutoff = ops; }

// ---------------------------------------------------------------------------
// Serial reference implementations. Kept deliberately naive; the parallel
// kernels are validated against these.
// ---------------------------------------------------------------------------
namespace serial {

void conv2d_forward(const ConvSpec& s, const Tensor& x, const double* w, const double* b, Tensor& y) {
  const int ih = x.h, iw = x.w;
  const int oh = s.out_h(ih), ow = s.out_w(iw);
  assert(x.c == s.in_ch);
  y = Tensor(s.out_ch, oh, ow);
  for (int oc = 0; oc < s.out_ch; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = b ? b[oc] : 0.0;
        for (int ci = 0; ci < s.in_ch; ++ci) {
          for (int ky = 0; ky < s.k; ++ky) {
            const int iy = oy - s.pad + ky * s.dilation;
            if (iy < 0 || iy >= ih) continue;
            for (int kx = 0; kx < s.k; ++kx) {
              const int ix = ox - s.pad + kx * s.dilation;
              if (ix < 0 || ix >= iw) continue;
              acc += w[((static_cast<size_t>(oc) * s.in_ch + ci) * s.k + ky) * s.k + kx] * x.at(ci, iy, ix);
            }
          }
        }
        y.at(oc, oy, ox) = acc;
      }
    }
  }
}

void conv2d_backward_data(const ConvSpec& s, const Tensor& dy, const double* w, Tensor& dx) {
  const int oh = dy.h, ow = dy.w;
  const int ih = oh - 2 * s.pad + s.dilation * (s.k - 1);
  const int iw = ow - 2 * s.pad + s.dilation * (s.k - 1);
  dx = Tensor(s.in_ch, ih, iw);
  for (int ci = 0; ci < s.in_ch; ++ci) {
    for (int iy = 0; iy < ih; ++iy) {
      for (int ix = 0; ix < iw; ++ix) {
        double acc = 0.0;
        for (int oc = 0; oc < s.out_ch; ++oc) {
          for (int ky = 0; ky < s.k; ++ky) {
            const int oy = iy + s.pad - ky * s.dilation;
            if (oy < 0 || oy >= oh) continue;
            for (int kx = 0; kx < s.k; ++kx) {
              const int ox = ix + s.pad - kx * s.dilation;
              if (ox < 0 || ox >= ow) continue;
              acc += w[((static_cast<size_t>(oc) * s.in_ch + ci) * s.k + ky) * s.k + kx] * dy.at(oc, oy, ox);
            }
          }
        }
        dx.at(ci, iy, ix) = acc;
      }
    }
  }
}

void conv2d_backward_weights(const ConvSpec& s, const Tensor& x, const Tensor& dy, double* dw, double* db) {
  const int ih = x.h, iw = x.w;
  const int oh = dy.h, ow = dy.w;
  for (int oc = 0; oc < s.out_ch; ++oc) {
    double bacc = 0.0;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) bacc += dy.at(oc, oy, ox);
    if (db) db[oc] += bacc;
    for (int ci = 0; ci < s.in_ch; ++ci) {
      for (int ky = 0; ky < s.k; ++ky) {
        for (int kx = 0; kx < s.k; ++kx) {
          double acc = 0.0;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy - s.pad + ky * s.dilation;
            if (iy < 0 || iy >= ih) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox - s.pad + kx * s.dilation;
              if (ix < 0 || ix >= iw) continue;
              acc += dy.at(oc, oy, ox) * x.at(ci, iy, ix);
            }
          }
          dw[((static_cast<size_t>(oc) * s.in_ch + ci) * s.k + ky) * s.k + kx] += acc;
        }
      }
    }
  }
}

void relu_forward(const Tensor& x, Tensor& y) {
  y = Tensor(x.c, x.h, x.w);
  for (size_t i = 0; i < x.size(); ++i) y.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
}

void relu_backward(const Tensor& x, const Tensor& dy, Tensor& dx) {
  dx = Tensor(x.c, x.h, x.w);
  for (size_t i = 0; i < x.size(); ++i) dx.data[i] = x.data[i] > 0.0 ? dy.data[i] : 0.0;
}

void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<int32_t>& argmax) {
  const int oh = x.h / 2, ow = x.w / 2;
  y = Tensor(x.c, oh, ow);
  argmax.assign(y.size(), 0);
  for (int ci = 0; ci < x.c; ++ci) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        int best = -1;
        double bv = 0.0;
        for (int dy_ = 0; dy_ < 2; ++dy_) {
          for (int dx_ = 0; dx_ < 2; ++dx_) {
            const int iy = 2 * oy + dy_, ix = 2 * ox + dx_;
            const int idx = (ci * x.h + iy) * x.w + ix;
            if (best < 0 || x.data[idx] > bv) {
              best = idx;
              bv = x.data[idx];
            }
          }
        }
        y.at(ci, oy, ox) = bv;
        argmax[(static_cast<size_t>(ci) * oh + oy) * ow + ox] = best;
      }
    }
  }
}

void maxpool2_backward(const Tensor& dy, const std::vector<int32_t>& argmax, Tensor& dx) {
  for (size_t i = 0; i < dy.size(); ++i) dx.data[argmax[i]] += dy.data[i];
}

namespace detail {

struct Lerp {
  int lo, hi;
  double frac;
};

inline Lerp axis_lerp(int out_i, int in_n, int out_n) {
  // Half-pixel centers; identity when in_n == out_n.
  const double src = (out_i + 0.5) * (static_cast<double>(in_n) / out_n) - 0.5;
  const double f = std::floor(src);
  Lerp l;
  l.frac = src - f;
  const int i0 = static_cast<int>(f);
  l.lo = std::clamp(i0, 0, in_n - 1);
  l.hi = std::clamp(i0 + 1, 0, in_n - 1);
  return l;
}

}  // namespace detail

void bilinear_resize_forward(const Tensor& x, Tensor& y) {
  const int oh = y.h, ow = y.w;
  for (int ci = 0; ci < x.c; ++ci) {
    for (int oy = 0; oy < oh; ++oy) {
      const auto ly = detail::axis_lerp(oy, x.h, oh);
      for (int ox = 0; ox < ow; ++ox) {
        const auto lx = detail::axis_lerp(ox, x.w, ow);
        const double v = (1.0 - ly.frac) * ((1.0 - lx.frac) * x.at(ci, ly.lo, lx.lo) + lx.frac * x.at(ci, ly.lo, lx.hi)) +
                         ly.frac * ((1.0 - lx.frac) * x.at(ci, ly.hi, lx.lo) + lx.frac * x.at(ci, ly.hi, lx.hi));
        y.at(ci, oy, ox) = v;
      }
    }
  }
}

void bilinear_resize_backward(const Tensor& dy, Tensor& dx) {
  const int oh = dy.h, ow = dy.w;
  for (int ci = 0; ci < dy.c; ++ci) {
    for (int oy = 0; oy < oh; ++oy) {
      const auto ly = detail::axis_lerp(oy, dx.h, oh);
      for (int ox = 0; ox < ow; ++ox) {
        const auto lx = detail::axis_lerp(ox, dx.w, ow);
        const double g = dy.at(ci, oy, ox);
        dx.at(ci, ly.lo, lx.lo) += (1.0 - ly.frac) * (1.0 - lx.frac) * g;
        dx.at(ci, ly.lo, lx.hi) += (1.0 - ly.frac) * lx.frac * g;
        dx.at(ci, ly.hi, lx.lo) += ly.frac * (1.0 - lx.frac) * g;
        dx.at(ci, ly.hi, lx.hi) += ly.frac * lx.frac * g;
      }
    }
  }
}

double reduce_sum(const double* v, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += v[i];
  return acc;
}

namespace detail {

// Normalization sum of one truncated kernel over its in-image support.
inline double splat_norm(double px, double py, double sigma, int h, int w) {
  const double radius = 4.0 * sigma;
  const double r2 = radius * radius;
  const int y0 = std::max(0, static_cast<int>(std::ceil(py - radius)));
  const int y1 = std::min(h - 1, static_cast<int>(std::floor(py + radius)));
  const int x0 = std::max(0, static_cast<int>(std::ceil(px - radius)));
  const int x1 = std::min(w - 1, static_cast<int>(std::floor(px + radius)));
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  double s = 0.0;
  for (int yi = y0; yi <= y1; ++yi) {
    for (int xi = x0; xi <= x1; ++xi) {
      const double d2 = (yi - py) * (yi - py) + (xi - px) * (xi - px);
      if (d2 <= r2) s += std::exp(-d2 * inv2s2);
    }
  }
  return s;
}

// Deposit the rows [row_begin, row_end) of one unit-mass kernel.
inline void splat_rows(double px, double py, double sigma, double norm, int row_begin, int row_end,
                       int h, int w, float* grid) {
  const double radius = 4.0 * sigma;
  const double r2 = radius * radius;
  if (norm <= 0.0) {
    // Degenerate support (sub-cell sigma between grid points): nearest cell.
    const int yi = std::clamp(static_cast<int>(std::lround(py)), 0, h - 1);
    const int xi = std::clamp(static_cast<int>(std::lround(px)), 0, w - 1);
    if (yi >= row_begin && yi < row_end) grid[static_cast<size_t>(yi) * w + xi] += 1.0f;
    return;
  }
  const int y0 = std::max(row_begin, static_cast<int>(std::ceil(py - radius)));
  const int y1 = std::min(row_end - 1, static_cast<int>(std::floor(py + radius)));
  const int x0 = std::max(0, static_cast<int>(std::ceil(px - radius)));
  const int x1 = std::min(w - 1, static_cast<int>(std::floor(px + radius)));
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  const double inv_norm = 1.0 / norm;
  for (int yi = y0; yi <= y1; ++yi) {
    for (int xi = x0; xi <= x1; ++xi) {
      const double d2 = (yi - py) * (yi - py) + (xi - px) * (xi - px);
      if (d2 <= r2) grid[static_cast<size_t>(yi) * w + xi] += static_cast<float>(std::exp(-d2 * inv2s2) * inv_norm);
    }
  }
}

}  // namespace detail

void gaussian_splat(const double* xs, const double* ys, const double* sigmas, int n_points,
                    int h, int w, float* grid) {
  for (int p = 0; p < n_points; ++p) {
    const double norm = detail::splat_norm(xs[p], ys[p], sigmas[p], h, w);
    detail::splat_rows(xs[p], ys[p], sigmas[p], norm, 0, h, h, w, grid);
  }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP kernels. Work is split by output ownership (rows, channels or output
// elements), so no cell is written by two threads and results do not depend
// on thread count or schedule.
// ---------------------------------------------------------------------------
namespace par {

void conv2d_forward(const ConvSpec& s, const Tensor& x, const double* w, const double* b, Tensor& y) {
  const int ih = x.h, iw = x.w;
  const int oh = s.out_h(ih), ow = s.out_w(iw);
  if (static_cast<size_t>(oh) * ow * s.out_ch * s.in_ch * s.k * s.k < g_parallel_cutoff)
    return serial::conv2d_forward(s, x, w, b, y);
  assert(x.c == s.in_ch);
  y = Tensor(s.out_ch, oh, ow);
#pragma omp parallel for collapse(2) schedule(static)
  for (int oc = 0; oc < s.out_ch; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      double* yrow = y.channel(oc) + static_cast<size_t>(oy) * ow;
      const double init = b ? b[oc] : 0.0;
      for (int ox = 0; ox < ow; ++ox) yrow[ox] = init;
      for (int ci = 0; ci < s.in_ch; ++ci) {
        const double* xch = x.channel(ci);
        for (int ky = 0; ky < s.k; ++ky) {
          const int iy = oy - s.pad + ky * s.dilation;
          if (iy < 0 || iy >= ih) continue;
          const double* xrow = xch + static_cast<size_t>(iy) * iw;
          const double* wrow = w + ((static_cast<size_t>(oc) * s.in_ch + ci) * s.k + ky) * s.k;
          for (int kx = 0; kx < s.k; ++kx) {
            const int shift = kx * s.dilation - s.pad;
            const int lo = std::max(0, -shift);
            const int hi = std::min(ow - 1, iw - 1 - shift);
            const double wv = wrow[kx];
            for (int ox = lo; ox <= hi; ++ox) yrow[ox] += wv * xrow[ox + shift];
          }
        }
      }
    }
  }
}

void conv2d_backward_data(const ConvSpec& s, const Tensor& dy, const double* w, Tensor& dx) {
  const int oh = dy.h, ow = dy.w;
  const int ih = oh - 2 * s.pad + s.dilation * (s.k - 1);
  const int iw = ow - 2 * s.pad + s.dilation * (s.k - 1);
  if (static_cast<size_t>(ih) * iw * s.in_ch * s.out_ch * s.k * s.k < g_parallel_cutoff)
    return serial::conv2d_backward_data(s, dy, w, dx);
  dx = Tensor(s.in_ch, ih, iw);
#pragma omp parallel for collapse(2) schedule(static)
  for (int ci = 0; ci < s.in_ch; ++ci) {
    for (int iy = 0; iy < ih; ++iy) {
      double* dxrow = dx.channel(ci) + static_cast<size_t>(iy) * iw;
      for (int oc = 0; oc < s.out_ch; ++oc) {
        const double* dych = dy.channel(oc);
        for (int ky = 0; ky < s.k; ++ky) {
          const int oy = iy + s.pad - ky * s.dilation;
          if (oy < 0 || oy >= oh) continue;
          const double* dyrow = dych + static_cast<size_t>(oy) * ow;
          const double* wrow = w + ((static_cast<size_t>(oc) * s.in_ch + ci) * s.k + ky) * s.k;
          for (int kx = 0; kx < s.k; ++kx) {
            const int shift = s.pad - kx * s.dilation;
            const int lo = std::max(0, -shift);
            const int hi = std::min(iw - 1, ow - 1 - shift);
            const double wv = wrow[kx];
            for (int ix = lo; ix <= hi; ++ix) dxrow[ix] += wv * dyrow[ix + shift];
          }
        }
      }
    }
  }
}

void conv2d_backward_weights(const ConvSpec& s, const Tensor& x, const Tensor& dy, double* dw, double* db) {
  const int ih = x.h, iw = x.w;
  const int oh = dy.h, ow = dy.w;
  if (static_cast<size_t>(oh) * ow * s.out_ch * s.in_ch * s.k * s.k < g_parallel_cutoff)
    return serial::conv2d_backward_weights(s, x, dy, dw, db);
#pragma omp parallel for schedule(static)
  for (int oc = 0; oc < s.out_ch; ++oc) {
    const double* dych = dy.channel(oc);
    if (db) {
      double bacc = 0.0;
      for (size_t i = 0; i < static_cast<size_t>(oh) * ow; ++i) bacc += dych[i];
      db[oc] += bacc;
    }
    for (int ci = 0; ci < s.in_ch; ++ci) {
      const double* xch = x.channel(ci);
      for (int ky = 0; ky < s.k; ++ky) {
        for (int kx = 0; kx < s.k; ++kx) {
          double acc = 0.0;
          const int sy = ky * s.dilation - s.pad;
          const int sx = kx * s.dilation - s.pad;
          const int oy_lo = std::max(0, -sy), oy_hi = std::min(oh - 1, ih - 1 - sy);
          const int ox_lo = std::max(0, -sx), ox_hi = std::min(ow - 1, iw - 1 - sx);
          for (int oy = oy_lo; oy <= oy_hi; ++oy) {
            const double* dyrow = dych + static_cast<size_t>(oy) * ow;
            const double* xrow = xch + static_cast<size_t>(oy + sy) * iw + sx;
            double row_acc = 0.0;
#pragma omp simd reduction(+ : row_acc)
            for (int ox = ox_lo; ox <= ox_hi; ++ox) row_acc += dyrow[ox] * xrow[ox];
            acc += row_acc;
          }
          dw[((static_cast<size_t>(oc) * s.in_ch + ci) * s.k + ky) * s.k + kx] += acc;
        }
      }
    }
  }
}

void relu_forward(const Tensor& x, Tensor& y) {
  if (x.size() < g_parallel_cutoff) return serial::relu_forward(x, y);
  y = Tensor(x.c, x.h, x.w);
  const int64_t n = static_cast<int64_t>(x.size());
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) y.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
}

void relu_backward(const Tensor& x, const Tensor& dy, Tensor& dx) {
  if (x.size() < g_parallel_cutoff) return serial::relu_backward(x, dy, dx);
  dx = Tensor(x.c, x.h, x.w);
  const int64_t n = static_cast<int64_t>(x.size());
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) dx.data[i] = x.data[i] > 0.0 ? dy.data[i] : 0.0;
}

void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<int32_t>& argmax) {
  if (x.size() < g_parallel_cutoff) return serial::maxpool2_forward(x, y, argmax);
  const int oh = x.h / 2, ow = x.w / 2;
  y = Tensor(x.c, oh, ow);
  argmax.assign(y.size(), 0);
#pragma omp parallel for collapse(2) schedule(static)
  for (int ci = 0; ci < x.c; ++ci) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        int best = -1;
        double bv = 0.0;
        for (int dy_ = 0; dy_ < 2; ++dy_) {
          for (int dx_ = 0; dx_ < 2; ++dx_) {
            const int idx = (ci * x.h + 2 * oy + dy_) * x.w + 2 * ox + dx_;
            if (best < 0 || x.data[idx] > bv) {
              best = idx;
              bv = x.data[idx];
            }
          }
        }
        y.at(ci, oy, ox) = bv;
        argmax[(static_cast<size_t>(ci) * oh + oy) * ow + ox] = best;
      }
    }
  }
}

void maxpool2_backward(const Tensor& dy, const std::vector<int32_t>& argmax, Tensor& dx) {
  // Argmax indices from channel c land in channel c of dx, so channels are
  // independent.
  if (dy.size() < g_parallel_cutoff) return serial::maxpool2_backward(dy, argmax, dx);
  const size_t plane = static_cast<size_t>(dy.h) * dy.w;
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < dy.c; ++ci) {
    for (size_t i = ci * plane; i < (ci + 1) * plane; ++i) dx.data[argmax[i]] += dy.data[i];
  }
}

void bilinear_resize_forward(const Tensor& x, Tensor& y) {
  if (y.size() * 4 < g_parallel_cutoff) return serial::bilinear_resize_forward(x, y);
  const int oh = y.h, ow = y.w;
  std::vector<serial::detail::Lerp> lys(oh), lxs(ow);
  for (int oy = 0; oy < oh; ++oy) lys[oy] = serial::detail::axis_lerp(oy, x.h, oh);
  for (int ox = 0; ox < ow; ++ox) lxs[ox] = serial::detail::axis_lerp(ox, x.w, ow);
#pragma omp parallel for collapse(2) schedule(static)
  for (int ci = 0; ci < x.c; ++ci) {
    for (int oy = 0; oy < oh; ++oy) {
      const auto& ly = lys[oy];
      const double* row0 = x.channel(ci) + static_cast<size_t>(ly.lo) * x.w;
      const double* row1 = x.channel(ci) + static_cast<size_t>(ly.hi) * x.w;
      double* yrow = y.channel(ci) + static_cast<size_t>(oy) * ow;
      for (int ox = 0; ox < ow; ++ox) {
        const auto& lx = lxs[ox];
        yrow[ox] = (1.0 - ly.frac) * ((1.0 - lx.frac) * row0[lx.lo] + lx.frac * row0[lx.hi]) +
                   ly.frac * ((1.0 - lx.frac) * row1[lx.lo] + lx.frac * row1[lx.hi]);
      }
    }
  }
}

void bilinear_resize_backward(const Tensor& dy, Tensor& dx) {
  if (dy.size() * 4 < g_parallel_cutoff) return serial::bilinear_resize_backward(dy, dx);
  // Scatter; channels are independent.
  const int oh = dy.h, ow = dy.w;
  std::vector<serial::detail::Lerp> lys(oh), lxs(ow);
  for (int oy = 0; oy < oh; ++oy) lys[oy] = serial::detail::axis_lerp(oy, dx.h, oh);
  for (int ox = 0; ox < ow; ++ox) lxs[ox] = serial::detail::axis_lerp(ox, dx.w, ow);
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < dy.c; ++ci) {
    for (int oy = 0; oy < oh; ++oy) {
      const auto& ly = lys[oy];
      double* row0 = dx.channel(ci) + static_cast<size_t>(ly.lo) * dx.w;
      double* row1 = dx.channel(ci) + static_cast<size_t>(ly.hi) * dx.w;
      const double* grow = dy.channel(ci) + static_cast<size_t>(oy) * ow;
      for (int ox = 0; ox < ow; ++ox) {
        const auto& lx = lxs[ox];
        const double g = grow[ox];
        row0[lx.lo] += (1.0 - ly.frac) * (1.0 - lx.frac) * g;
        row0[lx.hi] += (1.0 - ly.frac) * lx.frac * g;
        row1[lx.lo] += ly.frac * (1.0 - lx.frac) * g;
        row1[lx.hi] += ly.frac * lx.frac * g;
      }
    }
  }
}

double reduce_sum(const double* v, size_t n) {
  // Fixed-size chunks combined in order: deterministic for any thread count.
  constexpr size_t kChunk = 4096;
  const size_t n_chunks = (n + kChunk - 1) / kChunk;
  if (n_chunks <= 1) return serial::reduce_sum(v, n);
  std::vector<double> partial(n_chunks, 0.0);
#pragma omp parallel for schedule(static)
  for (int64_t ch = 0; ch < static_cast<int64_t>(n_chunks); ++ch) {
    const size_t lo = ch * kChunk;
    const size_t hi = std::min(n, lo + kChunk);
    double acc = 0.0;
    for (size_t i = lo; i < hi; ++i) acc += v[i];
    partial[ch] = acc;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

void gaussian_splat(const double* xs, const double* ys, const double* sigmas, int n_points,
                    int h, int w, float* grid) {
  size_t work = 0;
  for (int p = 0; p < n_points; ++p) {
    const double side = 8.0 * sigmas[p] + 1.0;
    work += static_cast<size_t>(side * side);
  }
  if (work < g_parallel_cutoff) return serial::gaussian_splat(xs, ys, sigmas, n_points, h, w, grid);
  std::vector<double> norms(n_points);
#pragma omp parallel for schedule(static)
  for (int p = 0; p < n_points; ++p) norms[p] = serial::detail::splat_norm(xs[p], ys[p], sigmas[p], h, w);
  // Each thread owns a band of rows and walks points in order, so every cell
  // accumulates contributions in the same order as the serial kernel.
#pragma omp parallel
  {
#ifdef _OPENMP
    const int nt = omp_get_num_threads();
    const int tid = omp_get_thread_num();
#else
    const int nt = 1, tid = 0;
#endif
    const int rows_per = (h + nt - 1) / nt;
    const int row_begin = std::min(h, tid * rows_per);
    const int row_end = std::min(h, row_begin + rows_per);
    for (int p = 0; p < n_points; ++p)
      serial::detail::splat_rows(xs[p], ys[p], sigmas[p], norms[p], row_begin, row_end, h, w, grid);
  }
}

}  // namespace par

// ---------------------------------------------------------------------------
// Dispatch.
// ---------------------------------------------------------------------------
#define RANKPYR_DISPATCH(fn, ...)                     \
  do {                                                \
    if (g_backend == Backend::Serial)                 \
      serial::fn(__VA_ARGS__);                        \
    else                                              \
      par::fn(__VA_ARGS__);                           \
  } while (0)

void conv2d_forward(const ConvSpec& s, const Tensor& x, const double* w, const double* b, Tensor& y) {
  RANKPYR_DISPATCH(conv2d_forward, s, x, w, b, y);
}
void conv2d_backward_data(const ConvSpec& s, const Tensor& dy, const double* w, Tensor& dx) {
  RANKPYR_DISPATCH(conv2d_backward_data, s, dy, w, dx);
}
void conv2d_backward_weights(const ConvSpec& s, const Tensor& x, const Tensor& dy, double* dw, double* db) {
  RANKPYR_DISPATCH(conv2d_backward_weights, s, x, dy, dw, db);
}
void relu_forward(const Tensor& x, Tensor& y) { RANKPYR_DISPATCH(relu_forward, x, y); }
void relu_backward(const Tensor& x, const Tensor& dy, Tensor& dx) { RANKPYR_DISPATCH(relu_backward, x, dy, dx); }
void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<int32_t>& argmax) {
  RANKPYR_DISPATCH(maxpool2_forward, x, y, argmax);
}
void maxpool2_backward(const Tensor& dy, const std::vector<int32_t>& argmax, Tensor& dx) {
  RANKPYR_DISPATCH(maxpool2_backward, dy, argmax, dx);
}
void bilinear_resize_forward(const Tensor& x, Tensor& y) { RANKPYR_DISPATCH(bilinear_resize_forward, x, y); }
void bilinear_resize_backward(const Tensor& dy, Tensor& dx) { RANKPYR_DISPATCH(bilinear_resize_backward, dy, dx); }
double reduce_sum(const double* v, size_t n) {
  return g_backend == Backend::Serial ? serial::reduce_sum(v, n) : par::reduce_sum(v, n);
}
void gaussian_splat(const double* xs, const double* ys, const double* sigmas, int n_points,
                    int h, int w, float* grid) {
  RANKPYR_DISPATCH(gaussian_splat, xs, ys, sigmas, n_points, h, w, grid);
}

#undef RANKPYR_DISPATCH

}  // namespace rankpyr::kernels
