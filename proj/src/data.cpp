#include "rankpyr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "rankpyr/errors.hpp"
#include "rankpyr/image_io.hpp"
#include "rankpyr/kernels.hpp"

namespace rankpyr::data {

namespace fs = std::filesystem;
using nlohmann::json;

Corpus Corpus::load(const fs::path& dir) {
  Corpus corpus;
  corpus.root = dir;
  const fs::path index_path = dir / "corpus.json";
  if (fs::exists(index_path)) {
    std::ifstream in(index_path);
    json j;
    in >> j;
    for (const auto& e : j.at("entries")) {
      CorpusEntry entry;
      entry.id = e.at("id").get<std::string>();
      entry.image_path = dir / e.at("image").get<std::string>();
      if (e.contains("annotation") && !e.at("annotation").is_null())
        entry.annotation_path = dir / e.at("annotation").get<std::string>();
      corpus.entries.push_back(std::move(entry));
    }
    return corpus;
  }
  // Fallback: pair images with annotations by stem.
  const fs::path img_dir = dir / "images";
  if (!fs::exists(img_dir)) throw IoError("no corpus.json or images/ under " + dir.string());
  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(img_dir))
    if (e.path().extension() == ".png") images.push_back(e.path());
  std::sort(images.begin(), images.end());
  for (const auto& img : images) {
    CorpusEntry entry;
    entry.id = img.stem().string();
    entry.image_path = img;
    const fs::path ann = dir / "annotations" / (img.stem().string() + ".json");
    if (fs::exists(ann)) entry.annotation_path = ann;
    corpus.entries.push_back(std::move(entry));
  }
  return corpus;
}

json CorpusIndex::to_json() const {
  return json{{"split_seed", split_seed}, {"labeled", labeled_ids}, {"unlabeled", unlabeled_ids}};
}

CorpusIndex CorpusIndex::from_json(const json& j) {
  CorpusIndex idx;
  idx.split_seed = j.at("split_seed").get<uint64_t>();
  idx.labeled_ids = j.at("labeled").get<std::vector<int>>();
  idx.unlabeled_ids = j.at("unlabeled").get<std::vector<int>>();
  return idx;
}

void CorpusIndex::save(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << to_json().dump(2) << "\n";
}

CorpusIndex CorpusIndex::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  in >> j;
  return from_json(j);
}

CorpusIndex split(const Corpus& corpus, double labeled_ratio, uint64_t seed) {
  if (corpus.entries.empty()) throw InvalidInput("split: empty corpus");
  if (!(labeled_ratio > 0.0 && labeled_ratio <= 1.0))
    throw InvalidParameter("split: labeled_ratio must be in (0,1]");

  std::vector<int> annotated, unannotated;
  for (size_t i = 0; i < corpus.entries.size(); ++i)
    (corpus.entries[i].annotation_path ? annotated : unannotated).push_back(static_cast<int>(i));

  const int n_labeled = static_cast<int>(std::floor(labeled_ratio * static_cast<double>(corpus.size())));
  if (n_labeled > static_cast<int>(annotated.size()))
    throw InvalidInput("split: ratio needs " + std::to_string(n_labeled) + " labeled entries but only " +
                       std::to_string(annotated.size()) + " are annotated");

  // Fisher-Yates on the annotated ids, deterministic in seed.
  Rng rng(seed);
  for (size_t i = annotated.size(); i > 1; --i)
    std::swap(annotated[i - 1], annotated[rng.next_u64() % i]);

  CorpusIndex idx;
  idx.split_seed = seed;
  idx.labeled_ids.assign(annotated.begin(), annotated.begin() + n_labeled);
  idx.unlabeled_ids.assign(annotated.begin() + n_labeled, annotated.end());
  idx.unlabeled_ids.insert(idx.unlabeled_ids.end(), unannotated.begin(), unannotated.end());
  std::sort(idx.labeled_ids.begin(), idx.labeled_ids.end());
  std::sort(idx.unlabeled_ids.begin(), idx.unlabeled_ids.end());
  return idx;
}

std::pair<Tensor, density::HeadPointSet> resize_cap(const Tensor& image, const density::HeadPointSet& points,
                                                    int cap) {
  if (cap <= 0) throw InvalidParameter("resize_cap: cap must be positive");
  const int short_side = std::min(image.h, image.w);
  if (short_side <= cap) return {image, points};
  const double scale = static_cast<double>(cap) / short_side;
  const int nh = static_cast<int>(std::lround(image.h * scale));
  const int nw = static_cast<int>(std::lround(image.w * scale));
  Tensor resized(image.c, nh, nw);
  kernels::bilinear_resize_forward(image, resized);
  density::HeadPointSet scaled;
  scaled.height = nh;
  scaled.width = nw;
  scaled.points.reserve(points.points.size());
  for (const auto& p : points.points) {
    const double x = std::min(p[0] * scale, nw - 1e-3);
    const double y = std::min(p[1] * scale, nh - 1e-3);
    scaled.points.push_back({x, y});
  }
  return {std::move(resized), std::move(scaled)};
}

Sample load_sample(const Corpus& corpus, int id, bool labeled, const LoadOptions& opts) {
  if (id < 0 || id >= static_cast<int>(corpus.size())) throw InvalidInput("load_sample: id out of range");
  const CorpusEntry& entry = corpus.entries[id];
  Sample s;
  s.id = entry.id;
  s.image = io::read_png(entry.image_path);

  density::HeadPointSet points;
  points.height = s.image.h;
  points.width = s.image.w;
  if (entry.annotation_path) {
    const auto ann = density::load_annotation(*entry.annotation_path);
    points = ann.points;
  } else if (labeled) {
    throw InvalidInput("load_sample: entry '" + entry.id + "' has no annotation but was requested labeled");
  }

  auto [image, scaled] = resize_cap(s.image, points, opts.resize_cap_px);
  s.image = std::move(image);
  if (entry.annotation_path) s.points = scaled;
  if (labeled) s.density = density::make_density(scaled, opts.kernel);
  return s;
}

Tensor hflip_image(const Tensor& image) {
  Tensor out(image.c, image.h, image.w);
  for (int ci = 0; ci < image.c; ++ci)
    for (int y = 0; y < image.h; ++y)
      for (int x = 0; x < image.w; ++x) out.at(ci, y, x) = image.at(ci, y, image.w - 1 - x);
  return out;
}

density::HeadPointSet hflip_points(const density::HeadPointSet& points) {
  density::HeadPointSet out = points;
  for (auto& p : out.points) p[0] = std::clamp(points.width - 1.0 - p[0], 0.0, points.width - 1.0);
  return out;
}

Sample augment(const Sample& sample, const AugmentConfig& cfg, Rng& rng) {
  if (cfg.crop_h > sample.image.h || cfg.crop_w > sample.image.w)
    throw InvalidParameter("augment: crop " + std::to_string(cfg.crop_h) + "x" + std::to_string(cfg.crop_w) +
                           " larger than image " + std::to_string(sample.image.h) + "x" +
                           std::to_string(sample.image.w));

  const int top = static_cast<int>(rng.uniform_int(0, sample.image.h - cfg.crop_h));
  const int left = static_cast<int>(rng.uniform_int(0, sample.image.w - cfg.crop_w));
  const bool flip = cfg.hflip && rng.bernoulli(0.5);

  Sample out;
  out.id = sample.id;
  out.image = Tensor(sample.image.c, cfg.crop_h, cfg.crop_w);
  for (int ci = 0; ci < sample.image.c; ++ci)
    for (int y = 0; y < cfg.crop_h; ++y)
      for (int x = 0; x < cfg.crop_w; ++x) out.image.at(ci, y, x) = sample.image.at(ci, top + y, left + x);
  if (flip) out.image = hflip_image(out.image);

  if (sample.points) {
    density::HeadPointSet pts;
    pts.height = cfg.crop_h;
    pts.width = cfg.crop_w;
    for (const auto& p : sample.points->points) {
      const double x = p[0] - left, y = p[1] - top;
      if (x >= 0.0 && x < cfg.crop_w && y >= 0.0 && y < cfg.crop_h) pts.points.push_back({x, y});
    }
    if (flip) pts = hflip_points(pts);
    out.points = std::move(pts);
  }
  if (sample.density) {
    // Regenerated from the surviving points: mass stays equal to the
    // in-frame count.
    out.density = density::make_density(*out.points, cfg.kernel);
  }

  if (cfg.normalize) {
    for (int ci = 0; ci < 3; ++ci) {
      double* ch = out.image.channel(ci);
      const size_t plane = static_cast<size_t>(out.image.h) * out.image.w;
      for (size_t i = 0; i < plane; ++i) ch[i] = (ch[i] - cfg.mean[ci]) / cfg.stddev[ci];
    }
  }
  return out;
}

namespace {

void render_disc(Tensor& img, double cx, double cy, double radius, const std::array<double, 3>& color) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius - 1)));
  const int x1 = std::min(img.w - 1, static_cast<int>(std::ceil(cx + radius + 1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius - 1)));
  const int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(cy + radius + 1)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double d = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy));
      const double cover = std::clamp(radius - d + 0.5, 0.0, 1.0);  // soft edge
      if (cover <= 0.0) continue;
      for (int ci = 0; ci < 3; ++ci) {
        double& v = img.at(ci, y, x);
        v = std::max(v, cover * color[ci] + (1.0 - cover) * v);
      }
    }
  }
}

}  // namespace

void synth_corpus(const fs::path& dir, int n_images, int count_min, int count_max, uint64_t seed,
                  const SynthConfig& cfg) {
  if (n_images < 1) throw InvalidParameter("synth_corpus: n_images must be >= 1");
  if (count_min < 0 || count_max < count_min) throw InvalidParameter("synth_corpus: bad count range");

  fs::create_directories(dir / "images");
  fs::create_directories(dir / "annotations");

  Rng master(seed);
  json index;
  index["seed"] = seed;
  auto entries = json::array();

  for (int i = 0; i < n_images; ++i) {
    Rng rng = master.fork(static_cast<uint64_t>(i) + 1);
    const int h = cfg.height, w = cfg.width;
    Tensor img(3, h, w);

    // Cluttered background: base gray, per-pixel noise, a few dim discs.
    const double base = rng.uniform(0.25, 0.45);
    for (double& v : img.data) v = base;
    const int n_clutter = static_cast<int>(rng.uniform_int(cfg.clutter_min, cfg.clutter_max));
    for (int cl = 0; cl < n_clutter; ++cl) {
      const double r = rng.uniform(10.0, 40.0);
      const double g = rng.uniform(0.15, 0.5);
      render_disc(img, rng.uniform(0, w - 1), rng.uniform(0, h - 1), r, {g, g, g});
    }
    for (size_t px = 0; px < img.size(); ++px) img.data[px] += rng.uniform(-0.06, 0.06);

    // "People": bright blobs with exact center annotations.
    const int count = static_cast<int>(rng.uniform_int(count_min, count_max));
    density::HeadPointSet points;
    points.height = h;
    points.width = w;
    for (int p = 0; p < count; ++p) {
      const double r = rng.uniform(cfg.blob_radius_min, cfg.blob_radius_max);
      const double cx = rng.uniform(r, w - 1 - r);
      const double cy = rng.uniform(r, h - 1 - r);
      const double intensity = rng.uniform(0.55, 1.0);
      const double tint = rng.uniform(0.85, 1.0);
      render_disc(img, cx, cy, r, {intensity * tint, intensity, intensity * tint});
      points.points.push_back({cx, cy});
    }

    char name[32];
    std::snprintf(name, sizeof(name), "img_%05d", i);
    const std::string image_rel = std::string("images/") + name + ".png";
    const std::string ann_rel = std::string("annotations/") + name + ".json";
    io::write_png(img, dir / image_rel);
    density::save_annotation({image_rel, points}, dir / ann_rel);
    entries.push_back({{"id", name}, {"image", image_rel}, {"annotation", ann_rel}});
  }

  index["entries"] = std::move(entries);
  std::ofstream out(dir / "corpus.json");
  if (!out) throw IoError("cannot write corpus.json under " + dir.string());
  out << index.dump(2) << "\n";
}

}  // namespace rankpyr::data
