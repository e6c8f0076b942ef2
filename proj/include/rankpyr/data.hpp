#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rankpyr/density.hpp"
#include "rankpyr/rng.hpp"
#include "rankpyr/tensor.hpp"

namespace rankpyr::data {

struct CorpusEntry {
  std::string id;
  std::filesystem::path image_path;
  std::optional<std::filesystem::path> annotation_path;
};

struct Corpus {
  std::filesystem::path root;
  std::vector<CorpusEntry> entries;

  size_t size() const { return entries.size(); }
  // Reads corpus.json when present, otherwise pairs images/ with
  // annotations/ by stem.
  static Corpus load(const std::filesystem::path& dir);
};

// Disjoint labeled/unlabeled id sets over a corpus.
struct CorpusIndex {
  std::vector<int> labeled_ids;
  std::vector<int> unlabeled_ids;
  uint64_t split_seed = 0;

  nlohmann::json to_json() const;
  static CorpusIndex from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static CorpusIndex load(const std::filesystem::path& path);
};

// floor(ratio * |corpus|) labeled ids drawn (deterministically in seed) from
// the annotated entries; everything else is unlabeled.
CorpusIndex split(const Corpus& corpus, double labeled_ratio, uint64_t seed);

struct Sample {
  std::string id;
  Tensor image;  // (3, H, W); in [0,1] on load, normalized after augment()
  std::optional<density::HeadPointSet> points;
  std::optional<density::DensityMap> density;  // present iff labeled
};

// Downscale so the shorter side does not exceed cap; identity otherwise.
// Point coordinates scale by the same factor.
std::pair<Tensor, density::HeadPointSet> resize_cap(const Tensor& image, const density::HeadPointSet& points,
                                                    int cap = 1920);

struct LoadOptions {
  int resize_cap_px = 1920;
  density::KernelConfig kernel;
};

Sample load_sample(const Corpus& corpus, int id, bool labeled, const LoadOptions& opts);

struct AugmentConfig {
  int crop_h = 224;
  int crop_w = 224;
  bool hflip = true;
  bool normalize = true;
  std::array<double, 3> mean = {0.485, 0.456, 0.406};
  std::array<double, 3> stddev = {0.229, 0.224, 0.225};
  density::KernelConfig kernel;
};

// Random crop + random horizontal flip + per-channel normalization. The
// density is regenerated from the points that survive the crop, so its mass
// equals the in-frame point count.
Sample augment(const Sample& sample, const AugmentConfig& cfg, Rng& rng);

Tensor hflip_image(const Tensor& image);
density::HeadPointSet hflip_points(const density::HeadPointSet& points);

struct SynthConfig {
  int width = 256;
  int height = 256;
  int clutter_min = 3;
  int clutter_max = 8;
  double blob_radius_min = 2.0;
  double blob_radius_max = 5.0;
};

// Writes images/, annotations/ and corpus.json under dir: randomly placed
// blob "people" on cluttered noise, with exact head-point annotations.
// Deterministic in seed.
void synth_corpus(const std::filesystem::path& dir, int n_images, int count_min, int count_max, uint64_t seed,
                  const SynthConfig& cfg = {});

}  // namespace rankpyr::data
