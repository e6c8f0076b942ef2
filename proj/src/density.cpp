#include "rankpyr/density.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "rankpyr/errors.hpp"
#include "rankpyr/kernels.hpp"

namespace rankpyr::density {

using nlohmann::json;

void HeadPointSet::validate() const {
  for (const auto& p : points) {
    if (!(p[0] >= 0.0 && p[0] < width && p[1] >= 0.0 && p[1] < height))
      throw InvalidAnnotation("point (" + std::to_string(p[0]) + "," + std::to_string(p[1]) +
                              ") outside " + std::to_string(width) + "x" + std::to_string(height));
  }
}

double DensityMap::mass() const {
  double acc = 0.0;
  for (float v : grid) acc += v;
  return acc;
}

Tensor DensityMap::to_tensor() const {
  Tensor t(1, h, w);
  for (size_t i = 0; i < grid.size(); ++i) t.data[i] = grid[i];
  return t;
}

DensityMap DensityMap::from_tensor(const Tensor& t, double cell_scale) {
  DensityMap m(t.h, t.w);
  m.cell_scale = cell_scale;
  for (size_t i = 0; i < m.grid.size(); ++i) m.grid[i] = static_cast<float>(t.data[i]);
  return m;
}

namespace {

struct Head {
  double x, y, sigma;
};

// Deposit order is canonicalized so that shuffling the input points yields a
// bitwise-identical map.
DensityMap splat(std::vector<Head> heads, int h, int w) {
  std::sort(heads.begin(), heads.end(), [](const Head& a, const Head& b) {
    if (a.y != b.y) return a.y < b.y;
    if (a.x != b.x) return a.x < b.x;
    return a.sigma < b.sigma;
  });
  std::vector<double> xs(heads.size()), ys(heads.size()), sigmas(heads.size());
  for (size_t i = 0; i < heads.size(); ++i) {
    xs[i] = heads[i].x;
    ys[i] = heads[i].y;
    sigmas[i] = heads[i].sigma;
  }
  DensityMap map(h, w);
  kernels::gaussian_splat(xs.data(), ys.data(), sigmas.data(), static_cast<int>(heads.size()), h, w,
                          map.grid.data());
  return map;
}

}  // namespace

DensityMap fixed_kernel_density(const HeadPointSet& points, double sigma) {
  if (sigma <= 0.0) throw InvalidParameter("fixed_kernel_density: sigma must be positive");
  points.validate();
  std::vector<Head> heads;
  heads.reserve(points.points.size());
  for (const auto& p : points.points) heads.push_back({p[0], p[1], sigma});
  return splat(std::move(heads), points.height, points.width);
}

DensityMap geometry_adaptive_density(const HeadPointSet& points, double beta, int k, double fallback_sigma) {
  if (beta <= 0.0) throw InvalidParameter("geometry_adaptive_density: beta must be positive");
  if (k < 1) throw InvalidParameter("geometry_adaptive_density: k must be >= 1");
  if (fallback_sigma <= 0.0) throw InvalidParameter("geometry_adaptive_density: fallback sigma must be positive");
  points.validate();
  const auto& pts = points.points;
  const int n = static_cast<int>(pts.size());
  std::vector<Head> heads(n);
  for (int i = 0; i < n; ++i) {
    double sigma = fallback_sigma;
    if (n >= k + 1) {
      std::vector<double> d2;
      d2.reserve(n - 1);
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        const double dx = pts[i][0] - pts[j][0];
        const double dy = pts[i][1] - pts[j][1];
        d2.push_back(dx * dx + dy * dy);
      }
      std::partial_sort(d2.begin(), d2.begin() + k, d2.end());
      double mean = 0.0;
      for (int j = 0; j < k; ++j) mean += std::sqrt(d2[j]);
      mean /= k;
      sigma = beta * mean;
      if (sigma <= 0.0) sigma = fallback_sigma;  // coincident duplicates
    }
    heads[i] = {pts[i][0], pts[i][1], sigma};
  }
  return splat(std::move(heads), points.height, points.width);
}

DensityMap make_density(const HeadPointSet& points, const KernelConfig& cfg) {
  if (cfg.mode == KernelConfig::Mode::Fixed) return fixed_kernel_density(points, cfg.sigma);
  return geometry_adaptive_density(points, cfg.beta, cfg.k, cfg.fallback_sigma);
}

double integrate(const DensityMap& map, const CropBox& box) {
  if (!box.fits(map.h, map.w))
    throw InvalidRegion("integrate: box outside " + std::to_string(map.h) + "x" + std::to_string(map.w));
  double acc = 0.0;
  for (int y = box.top; y < box.bottom(); ++y)
    for (int x = box.left; x < box.right(); ++x) acc += map.at(y, x);
  return acc;
}

void write_dmap(const DensityMap& map, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const char magic[4] = {'D', 'M', 'A', 'P'};
  const uint32_t h = static_cast<uint32_t>(map.h), w = static_cast<uint32_t>(map.w), reserved = 0;
  out.write(magic, 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(&reserved), 4);
  out.write(reinterpret_cast<const char*>(map.grid.data()), static_cast<std::streamsize>(map.grid.size() * 4));
  if (!out) throw IoError("short write to " + path.string());
}

DensityMap read_dmap(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  uint32_t h = 0, w = 0, reserved = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&h), 4);
  in.read(reinterpret_cast<char*>(&w), 4);
  in.read(reinterpret_cast<char*>(&reserved), 4);
  if (!in || std::memcmp(magic, "DMAP", 4) != 0) throw IoError("bad DMAP header in " + path.string());
  DensityMap map(static_cast<int>(h), static_cast<int>(w));
  in.read(reinterpret_cast<char*>(map.grid.data()), static_cast<std::streamsize>(map.grid.size() * 4));
  if (!in) throw IoError("truncated DMAP in " + path.string());
  return map;
}

void save_annotation(const Annotation& ann, const std::filesystem::path& path) {
  json j;
  j["image"] = ann.image;
  j["width"] = ann.points.width;
  j["height"] = ann.points.height;
  auto pts = json::array();
  for (const auto& p : ann.points.points) pts.push_back({p[0], p[1]});
  j["points"] = std::move(pts);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
}

Annotation load_annotation(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("bad annotation JSON in " + path.string() + ": " + e.what());
  }
  Annotation ann;
  ann.image = j.at("image").get<std::string>();
  ann.points.width = j.at("width").get<int>();
  ann.points.height = j.at("height").get<int>();
  for (const auto& p : j.at("points")) ann.points.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  ann.points.validate();
  return ann;
}

}  // namespace rankpyr::density
