#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "rankpyr/geometry.hpp"
#include "rankpyr/tensor.hpp"

namespace rankpyr::density {

// Pixel-coordinate head annotations for one image.
struct HeadPointSet {
  std::vector<std::array<double, 2>> points;  // (x, y)
  int height = 0;
  int width = 0;

  // Throws InvalidAnnotation if any point is outside [0,w) x [0,h).
  void validate() const;
};

// Non-negative grid whose integral is the person count. cell_scale is the
// ratio of grid resolution to image resolution (1 for ground truth).
struct DensityMap {
  int h = 0;
  int w = 0;
  double cell_scale = 1.0;
  std::vector<float> grid;

  DensityMap() = default;
  DensityMap(int h_, int w_) : h(h_), w(w_), grid(static_cast<size_t>(h_) * w_, 0.0f) {}

  float& at(int y, int x) { return grid[static_cast<size_t>(y) * w + x]; }
  float at(int y, int x) const { return grid[static_cast<size_t>(y) * w + x]; }

  double mass() const;
  Tensor to_tensor() const;  // (1, h, w)
  static DensityMap from_tensor(const Tensor& t, double cell_scale = 1.0);
};

// One unit-mass truncated Gaussian per head. Truncation radius 4*sigma,
// renormalized over the in-image support, so mass equals the point count
// even when kernels are clipped by the border.
DensityMap fixed_kernel_density(const HeadPointSet& points, double sigma);

// Per-point sigma = beta * mean distance to the k nearest other points.
// With fewer than k+1 points every sigma falls back to fallback_sigma.
DensityMap geometry_adaptive_density(const HeadPointSet& points, double beta = 0.3, int k = 3,
                                     double fallback_sigma = 15.0);

struct KernelConfig {
  enum class Mode { Fixed, Adaptive };
  Mode mode = Mode::Fixed;
  double sigma = 15.0;  // fixed mode
  double beta = 0.3;    // adaptive mode
  int k = 3;
  double fallback_sigma = 15.0;
};

DensityMap make_density(const HeadPointSet& points, const KernelConfig& cfg);

// Sum of cells inside box; box may have zero area.
double integrate(const DensityMap& map, const CropBox& box);

// Binary raster: "DMAP", u32 height, u32 width, u32 reserved=0, then
// row-major little-endian float32.
void write_dmap(const DensityMap& map, const std::filesystem::path& path);
DensityMap read_dmap(const std::filesystem::path& path);

// One JSON document per image:
// {"image": <relative path>, "width": int, "height": int, "points": [[x,y],...]}
struct Annotation {
  std::string image;
  HeadPointSet points;
};

void save_annotation(const Annotation& ann, const std::filesystem::path& path);
Annotation load_annotation(const std::filesystem::path& path);

}  // namespace rankpyr::density
