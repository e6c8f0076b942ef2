#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "rankpyr/autograd.hpp"
#include "rankpyr/rng.hpp"
#include "rankpyr/tensor.hpp"

namespace rankpyr::model {

enum class LevelTag { Low, Mid, High };

const char* to_string(LevelTag tag);

struct LevelGeometry {
  int stride = 1;  // cumulative downsampling vs the input
  int rf = 1;      // receptive-field extent in input pixels
};

struct ModelConfig {
  enum class Backbone { Toy, Vgg16Truncated };
  Backbone backbone = Backbone::Toy;
  // Which tappable backbone stages emit the pyramid levels, ordered.
  std::vector<int> level_taps = {0, 1, 2};
  int decoder_width = 32;
  // Per-level projection widths; the shared decoder requires them equal to
  // decoder_width.
  std::vector<int> adapter_widths;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// The K per-level latent feature maps of one image.
struct PyramidFeatures {
  std::vector<autograd::Var> levels;
  std::vector<LevelGeometry> geometry;
  std::vector<LevelTag> tags;

  int k() const { return static_cast<int>(levels.size()); }
};

// Feature extractor plus shared density estimator. The same decoder
// parameters evaluate every level's adapted patches and the labeled
// forward pass.
class CrowdCounter {
 public:
  CrowdCounter(const ModelConfig& cfg, uint64_t seed);

  // K feature maps. Throws InvalidInput when the image is under the
  // backbone minimum (64x64).
  PyramidFeatures extract(const autograd::Var& image) const;
  PyramidFeatures extract(const Tensor& image) const;

  // Adapter -> dilated decoder -> non-negative head -> bilinear upsample by
  // the level's stride. Throws InvalidInput on channel mismatch.
  autograd::Var estimate_density(const autograd::Var& patch, int level) const;
  autograd::Var count_from_patch(const autograd::Var& patch, int level) const;

  // Full supervised pass: highest level decoded to the input resolution.
  autograd::Var forward_density(const autograd::Var& image) const;

  // Inference conveniences.
  Tensor predict_density(const Tensor& image) const;
  double predict_count(const Tensor& image) const;

  int min_input() const { return 64; }
  int levels() const { return static_cast<int>(config_.level_taps.size()); }
  std::vector<LevelGeometry> level_geometry() const { return geometry_; }
  const ModelConfig& config() const { return config_; }
  uint64_t init_seed() const { return init_seed_; }

  std::vector<autograd::Var> parameters() const;
  std::vector<std::pair<std::string, autograd::Var>> named_parameters() const;

  void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& extra = {}) const;
  static CrowdCounter load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

  // Copies arrays with matching name and shape (e.g. externally supplied
  // backbone weights); returns how many arrays were used.
  int load_matching_weights(const std::filesystem::path& path);

 private:
  struct ConvLayer {
    std::string name;
    kernels::ConvSpec spec;
    autograd::Var w, b;
  };

  // Backbone execution plan: convs are followed by ReLU; a step may emit a
  // pyramid level (tap >= 0 names the tappable-stage index).
  struct Step {
    enum class Kind { Conv, Pool };
    Kind kind;
    int conv_idx = -1;
    int tap = -1;
  };

  ConvLayer make_conv(const std::string& name, int in_ch, int out_ch, int k, int pad, int dilation, Rng& rng);
  autograd::Var run_conv(const ConvLayer& layer, const autograd::Var& x) const;
  autograd::Var decode_to(const autograd::Var& patch, int level, int out_h, int out_w) const;
  void build(Rng& rng);

  ModelConfig config_;
  uint64_t init_seed_ = 0;
  std::vector<ConvLayer> backbone_;
  std::vector<Step> plan_;
  std::vector<ConvLayer> adapters_;      // one 1x1 projection per level
  std::vector<ConvLayer> decoder_;       // six dilated convs + 1x1 head
  std::vector<LevelGeometry> geometry_;  // per tapped level, ordered by taps
};

}  // namespace rankpyr::model
