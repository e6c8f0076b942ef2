#include "rankpyr/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "rankpyr/errors.hpp"

namespace rankpyr::model {

using autograd::Var;
using nlohmann::json;

const char* to_string(LevelTag tag) {
  switch (tag) {
    case LevelTag::Low: return "low";
    case LevelTag::Mid: return "mid";
    default: return "high";
  }
}

void ModelConfig::validate() const {
  if (decoder_width < 4) throw InvalidParameter("ModelConfig: decoder_width must be >= 4");
  if (level_taps.empty() || level_taps.size() > 3) throw InvalidParameter("ModelConfig: 1..3 level taps");
  for (size_t i = 0; i < level_taps.size(); ++i) {
    if (level_taps[i] < 0 || level_taps[i] > 2) throw InvalidParameter("ModelConfig: tap index out of range");
    if (i > 0 && level_taps[i] <= level_taps[i - 1])
      throw InvalidParameter("ModelConfig: level taps must be distinct and ordered");
  }
  if (!adapter_widths.empty()) {
    if (adapter_widths.size() != level_taps.size())
      throw InvalidParameter("ModelConfig: adapter_widths must match level count");
    for (int w : adapter_widths)
      if (w != decoder_width)
        throw InvalidParameter("ModelConfig: adapters must project to decoder_width (shared decoder)");
  }
}

json ModelConfig::to_json() const {
  return json{{"backbone", backbone == Backbone::Toy ? "toy" : "vgg16-truncated"},
              {"level_taps", level_taps},
              {"decoder_width", decoder_width}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig cfg;
  const std::string bb = j.value("backbone", "toy");
  if (bb == "toy")
    cfg.backbone = Backbone::Toy;
  else if (bb == "vgg16-truncated")
    cfg.backbone = Backbone::Vgg16Truncated;
  else
    throw InvalidParameter("ModelConfig: unknown backbone '" + bb + "'");
  if (j.contains("level_taps")) cfg.level_taps = j.at("level_taps").get<std::vector<int>>();
  cfg.decoder_width = j.value("decoder_width", cfg.decoder_width);
  cfg.validate();
  return cfg;
}

CrowdCounter::ConvLayer CrowdCounter::make_conv(const std::string& name, int in_ch, int out_ch, int k, int pad,
                                                int dilation, Rng& rng) {
  ConvLayer layer;
  layer.name = name;
  layer.spec = {in_ch, out_ch, k, pad, dilation};
  Tensor w(out_ch, in_ch, k * k);
  const double stddev = std::sqrt(2.0 / (static_cast<double>(in_ch) * k * k));
  for (double& v : w.data) v = rng.normal(0.0, stddev);
  layer.w = autograd::leaf(std::move(w), true);
  layer.b = autograd::leaf(Tensor(out_ch, 1, 1), true);
  return layer;
}

Var CrowdCounter::run_conv(const ConvLayer& layer, const Var& x) const {
  return autograd::conv2d(x, layer.w, layer.b, layer.spec);
}

CrowdCounter::CrowdCounter(const ModelConfig& cfg, uint64_t seed) : config_(cfg), init_seed_(seed) {
  config_.validate();
  if (config_.adapter_widths.empty())
    config_.adapter_widths.assign(config_.level_taps.size(), config_.decoder_width);
  Rng rng(seed);
  build(rng);
}

void CrowdCounter::build(Rng& rng) {
  // Tappable stage outputs: (channels, geometry) in tap order 0..2.
  std::vector<int> stage_channels;
  std::vector<LevelGeometry> stage_geometry;
  LevelGeometry g{1, 1};

  auto add_conv = [&](const std::string& name, int in_ch, int out_ch) {
    backbone_.push_back(make_conv(name, in_ch, out_ch, 3, 1, 1, rng));
    plan_.push_back({Step::Kind::Conv, static_cast<int>(backbone_.size()) - 1, -1});
    g.rf += 2 * g.stride;
  };
  auto add_pool = [&] {
    plan_.push_back({Step::Kind::Pool, -1, -1});
    g.rf += g.stride;
    g.stride *= 2;
  };
  auto add_tap = [&](int stage, int channels) {
    plan_.back().tap = stage;
    stage_channels.push_back(channels);
    stage_geometry.push_back(g);
  };

  if (config_.backbone == ModelConfig::Backbone::Toy) {
    // Three stages of conv3x3 -> ReLU -> maxpool2; taps after each pool.
    const int widths[3] = {16, 32, 64};
    int in_ch = 3;
    for (int s = 0; s < 3; ++s) {
      add_conv("backbone.conv" + std::to_string(s + 1), in_ch, widths[s]);
      add_pool();
      add_tap(s, widths[s]);
      in_ch = widths[s];
    }
  } else {
    // First ten VGG-16 convs; taps after the last conv of stages 2..4.
    auto stage = [&](int blocks, int in_ch, int out_ch, int idx) {
      for (int b = 0; b < blocks; ++b) {
        add_conv("backbone.conv" + std::to_string(idx) + "_" + std::to_string(b + 1), b == 0 ? in_ch : out_ch,
                 out_ch);
      }
    };
    stage(2, 3, 64, 1);
    add_pool();
    stage(2, 64, 128, 2);
    add_tap(0, 128);  // conv2_2 output, stride 2
    add_pool();
    stage(3, 128, 256, 3);
    add_tap(1, 256);  // conv3_3 output, stride 4
    add_pool();
    stage(3, 256, 512, 4);
    add_tap(2, 512);  // conv4_3 output, stride 8
  }

  for (size_t i = 0; i < config_.level_taps.size(); ++i) {
    const int tap = config_.level_taps[i];
    adapters_.push_back(make_conv("adapter" + std::to_string(i), stage_channels[tap], config_.decoder_width, 1,
                                  0, 1, rng));
    geometry_.push_back(stage_geometry[tap]);
  }

  // Six dilated 3x3 convs (dilation 2) with tapering widths, then a 1x1
  // head; every conv but the head is followed by ReLU, the head by the
  // non-negative activation.
  const int w0 = config_.decoder_width;
  const int plan[6] = {w0, w0, w0, std::max(4, w0 / 2), std::max(4, w0 / 4), std::max(4, w0 / 4)};
  int in_ch = w0;
  for (int i = 0; i < 6; ++i) {
    decoder_.push_back(make_conv("decoder.conv" + std::to_string(i + 1), in_ch, plan[i], 3, 2, 2, rng));
    in_ch = plan[i];
  }
  decoder_.push_back(make_conv("decoder.head", in_ch, 1, 1, 0, 1, rng));
}

PyramidFeatures CrowdCounter::extract(const Var& image) const {
  const Tensor& img = image->val;
  if (img.c != 3) throw InvalidInput("extract: expected a 3-channel image");
  if (img.h < min_input() || img.w < min_input())
    throw InvalidInput("extract: input " + std::to_string(img.h) + "x" + std::to_string(img.w) +
                       " below the " + std::to_string(min_input()) + " minimum");

  std::vector<Var> stage_out(3);
  Var x = image;
  for (const Step& step : plan_) {
    if (step.kind == Step::Kind::Conv)
      x = autograd::relu(run_conv(backbone_[step.conv_idx], x));
    else
      x = autograd::maxpool2(x);
    if (step.tap >= 0) stage_out[step.tap] = x;
  }

  PyramidFeatures feats;
  static const LevelTag kTags[3] = {LevelTag::Low, LevelTag::Mid, LevelTag::High};
  for (size_t i = 0; i < config_.level_taps.size(); ++i) {
    feats.levels.push_back(stage_out[config_.level_taps[i]]);
    feats.geometry.push_back(geometry_[i]);
    feats.tags.push_back(kTags[config_.level_taps[i]]);
  }
  for (size_t i = 1; i < feats.levels.size(); ++i) {
    if (feats.geometry[i].stride <= feats.geometry[i - 1].stride)
      throw InvalidInput("extract: level strides must be strictly increasing");
    if (feats.levels[i]->val.h > feats.levels[i - 1]->val.h ||
        feats.levels[i]->val.w > feats.levels[i - 1]->val.w)
      throw InvalidInput("extract: level dims must be non-increasing");
  }
  return feats;
}

PyramidFeatures CrowdCounter::extract(const Tensor& image) const { return extract(autograd::leaf(image)); }

Var CrowdCounter::decode_to(const Var& patch, int level, int out_h, int out_w) const {
  if (level < 0 || level >= levels()) throw InvalidInput("decode: level index out of range");
  if (patch->val.c != adapters_[level].spec.in_ch)
    throw InvalidInput("decode: patch has " + std::to_string(patch->val.c) + " channels, level " +
                       std::to_string(level) + " expects " + std::to_string(adapters_[level].spec.in_ch));
  Var x = run_conv(adapters_[level], patch);
  for (size_t i = 0; i + 1 < decoder_.size(); ++i) x = autograd::relu(run_conv(decoder_[i], x));
  x = autograd::relu(run_conv(decoder_.back(), x));  // non-negative density head
  if (x->val.h != out_h || x->val.w != out_w) x = autograd::resize_bilinear(x, out_h, out_w);
  return x;
}

Var CrowdCounter::estimate_density(const Var& patch, int level) const {
  const int stride = geometry_.at(level).stride;
  return decode_to(patch, level, patch->val.h * stride, patch->val.w * stride);
}

Var CrowdCounter::count_from_patch(const Var& patch, int level) const {
  return autograd::sum(estimate_density(patch, level));
}

Var CrowdCounter::forward_density(const Var& image) const {
  PyramidFeatures feats = extract(image);
  return decode_to(feats.levels.back(), levels() - 1, image->val.h, image->val.w);
}

Tensor CrowdCounter::predict_density(const Tensor& image) const {
  return forward_density(autograd::leaf(image))->val;
}

double CrowdCounter::predict_count(const Tensor& image) const {
  const Tensor d = predict_density(image);
  return kernels::reduce_sum(d.data.data(), d.size());
}

std::vector<Var> CrowdCounter::parameters() const {
  std::vector<Var> out;
  for (const auto& [name, var] : named_parameters()) out.push_back(var);
  return out;
}

std::vector<std::pair<std::string, Var>> CrowdCounter::named_parameters() const {
  std::vector<std::pair<std::string, Var>> out;
  auto push = [&](const ConvLayer& l) {
    out.emplace_back(l.name + ".w", l.w);
    out.emplace_back(l.name + ".b", l.b);
  };
  for (const auto& l : backbone_) push(l);
  for (const auto& l : adapters_) push(l);
  for (const auto& l : decoder_) push(l);
  return out;
}

void CrowdCounter::save_checkpoint(const std::filesystem::path& path, const json& extra) const {
  json manifest;
  manifest["format"] = "rankpyr-checkpoint-v1";
  manifest["model"] = config_.to_json();
  manifest["init_seed"] = init_seed_;
  if (!extra.is_null() && !extra.empty()) manifest["extra"] = extra;
  auto arrays = json::array();
  const auto named = named_parameters();
  for (const auto& [name, var] : named)
    arrays.push_back({{"name", name}, {"shape", {var->val.c, var->val.h, var->val.w}}, {"dtype", "f64"}});
  manifest["arrays"] = std::move(arrays);

  const std::string mstr = manifest.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const char magic[4] = {'R', 'P', 'C', 'K'};
  const uint32_t mlen = static_cast<uint32_t>(mstr.size());
  out.write(magic, 4);
  out.write(reinterpret_cast<const char*>(&mlen), 4);
  out.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
  for (const auto& [name, var] : named)
    out.write(reinterpret_cast<const char*>(var->val.data.data()),
              static_cast<std::streamsize>(var->val.size() * sizeof(double)));
  if (!out) throw IoError("short write to " + path.string());
}

namespace {

json read_manifest(std::ifstream& in, const std::filesystem::path& path) {
  char magic[4];
  uint32_t mlen = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&mlen), 4);
  if (!in || std::memcmp(magic, "RPCK", 4) != 0) throw IoError("bad checkpoint header in " + path.string());
  std::string mstr(mlen, '\0');
  in.read(mstr.data(), mlen);
  if (!in) throw IoError("truncated checkpoint manifest in " + path.string());
  return json::parse(mstr);
}

}  // namespace

CrowdCounter CrowdCounter::load_checkpoint(const std::filesystem::path& path, json* extra) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const json manifest = read_manifest(in, path);
  CrowdCounter model(ModelConfig::from_json(manifest.at("model")), manifest.value("init_seed", 0ULL));
  if (extra) *extra = manifest.value("extra", json::object());
  auto named = model.named_parameters();
  const auto& arrays = manifest.at("arrays");
  if (arrays.size() != named.size()) throw IoError("checkpoint array count mismatch in " + path.string());
  for (size_t i = 0; i < named.size(); ++i) {
    const auto& meta = arrays[i];
    auto& var = named[i].second;
    if (meta.at("name").get<std::string>() != named[i].first)
      throw IoError("checkpoint array order mismatch at '" + named[i].first + "'");
    in.read(reinterpret_cast<char*>(var->val.data.data()),
            static_cast<std::streamsize>(var->val.size() * sizeof(double)));
  }
  if (!in) throw IoError("truncated checkpoint arrays in " + path.string());
  return model;
}

int CrowdCounter::load_matching_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const json manifest = read_manifest(in, path);
  std::map<std::string, Var> mine;
  for (auto& [name, var] : named_parameters()) mine[name] = var;
  int used = 0;
  for (const auto& meta : manifest.at("arrays")) {
    const auto shape = meta.at("shape").get<std::vector<int>>();
    const size_t count = static_cast<size_t>(shape[0]) * shape[1] * shape[2];
    std::vector<double> buf(count);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw IoError("truncated checkpoint arrays in " + path.string());
    auto it = mine.find(meta.at("name").get<std::string>());
    if (it != mine.end() && it->second->val.c == shape[0] && it->second->val.h == shape[1] &&
        it->second->val.w == shape[2]) {
      it->second->val.data = std::move(buf);
      ++used;
    }
  }
  return used;
}

}  // namespace rankpyr::model
