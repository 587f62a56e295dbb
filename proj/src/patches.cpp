#include "patternspace/patches.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

using nlohmann::json;

namespace ps {

void SamplerConfig::validate() const {
  if (!(scale_min > 0.0 && scale_min <= scale_max))
    throw std::invalid_argument("sampler: need 0 < scale_min <= scale_max");
  if (!(ratio_min > 0.0 && ratio_min <= ratio_max))
    throw std::invalid_argument("sampler: need 0 < ratio_min <= ratio_max");
  if (!(iou_min > 0.0 && iou_min < 1.0))
    throw std::invalid_argument("sampler: need 0 < iou_min < 1");
}

namespace {

constexpr int kMinSide = 2;

// Geometry rule: scale is the target patch height, width follows from the
// aspect ratio (= h/w), both clamped to the image.
std::optional<PatchSpec> place(double scale, double ratio, const ImageDims& dims, Rng& rng) {
  int h = static_cast<int>(std::lround(scale));
  h = std::min(h, dims.height);
  int w = static_cast<int>(std::lround(h / ratio));
  w = std::min(w, dims.width);
  if (h < kMinSide || w < kMinSide) return std::nullopt;

  PatchSpec s;
  s.x = rng.uniform_index(dims.width - w + 1);
  s.y = rng.uniform_index(dims.height - h + 1);
  s.w = w;
  s.h = h;
  s.scale = scale;
  s.ratio = ratio;
  return s;
}

}  // namespace

std::optional<PatchSpec> sample_patch(const ImageDims& dims, const SamplerConfig& cfg, Rng& rng) {
  double scale;
  if (cfg.log_uniform_scale) {
    scale = std::exp(rng.uniform(std::log(cfg.scale_min), std::log(cfg.scale_max)));
  } else {
    scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  }
  const double ratio = rng.uniform(cfg.ratio_min, cfg.ratio_max);
  return place(scale, ratio, dims, rng);
}

std::optional<PatchSpec> jitter_partner(const PatchSpec& base, const ImageDims& dims,
                                        const SamplerConfig& cfg, Rng& rng) {
  for (int attempt = 0; attempt < cfg.pair_retry_cap; ++attempt) {
    const double dx = rng.uniform(-cfg.pos_jitter, cfg.pos_jitter) * base.w;
    const double dy = rng.uniform(-cfg.pos_jitter, cfg.pos_jitter) * base.h;
    const double s = rng.uniform(cfg.scale_jitter_lo, cfg.scale_jitter_hi);

    int h = static_cast<int>(std::lround(base.h * s));
    h = std::clamp(h, kMinSide, dims.height);
    int w = static_cast<int>(std::lround(h / base.ratio));
    w = std::clamp(w, kMinSide, dims.width);

    PatchSpec p = base;
    p.w = w;
    p.h = h;
    p.scale = base.scale * s;
    p.x = std::clamp(static_cast<int>(std::lround(base.x + dx)), 0, dims.width - w);
    p.y = std::clamp(static_cast<int>(std::lround(base.y + dy)), 0, dims.height - h);
    if (iou(base.box(), p.box()) > cfg.iou_min) return p;
  }
  return std::nullopt;
}

std::pair<PatchSpec, PatchSpec> sample_pair(const ImageDims& dims, const SamplerConfig& cfg, Rng& rng) {
  // The outer loop only retries when an image is too small to host any
  // minimum-geometry patch pair; bail out rather than spin forever.
  for (int attempt = 0; attempt < 1000; ++attempt) {
    auto first = sample_patch(dims, cfg, rng);
    if (!first) continue;
    auto second = jitter_partner(*first, dims, cfg, rng);
    if (!second) continue;
    return {*first, *second};
  }
  throw std::runtime_error("sample_pair: image cannot host a patch pair under this sampler config");
}

PixelPatch extract(const ImageU8& pixels, const PatchSpec& spec) {
  if (spec.x < 0 || spec.y < 0 || spec.w < 1 || spec.h < 1 ||
      spec.x + spec.w > pixels.width || spec.y + spec.h > pixels.height)
    throw std::out_of_range("extract: patch outside image bounds");
  const ImageU8 region = crop(pixels, spec.x, spec.y, spec.w, spec.h);
  const ImageU8 resized = resize_bilinear(region, kPatchSize, kPatchSize);
  PixelPatch p;
  p.spec = spec;
  std::copy(resized.data.begin(), resized.data.end(), p.rgb.begin());
  return p;
}

PixelPatch extract(const ScaledImage& img, const PatchSpec& spec) { return extract(img.pixels, spec); }

GradientPatch sobel(const PixelPatch& p) {
  // luma in [0,1]
  float luma[kPatchSize][kPatchSize];
  for (int y = 0; y < kPatchSize; ++y)
    for (int x = 0; x < kPatchSize; ++x) {
      const uint8_t* px = p.rgb.data() + (y * kPatchSize + x) * 3;
      luma[y][x] = (0.299f * px[0] + 0.587f * px[1] + 0.114f * px[2]) / 255.0f;
    }

  auto at = [&](int x, int y) {  // replicate border
    x = std::clamp(x, 0, kPatchSize - 1);
    y = std::clamp(y, 0, kPatchSize - 1);
    return luma[y][x];
  };

  GradientPatch g;
  g.spec = p.spec;
  for (int y = 0; y < kPatchSize; ++y) {
    for (int x = 0; x < kPatchSize; ++x) {
      // correlation with the 3x3 Sobel kernels; max response is 4 for luma in [0,1]
      const float dx = (at(x + 1, y - 1) - at(x - 1, y - 1)) + 2.0f * (at(x + 1, y) - at(x - 1, y)) +
                       (at(x + 1, y + 1) - at(x - 1, y + 1));
      const float dy = (at(x - 1, y + 1) - at(x - 1, y - 1)) + 2.0f * (at(x, y + 1) - at(x, y - 1)) +
                       (at(x + 1, y + 1) - at(x + 1, y - 1));
      g.grads[y * kPatchSize + x] = std::clamp(dx / 4.0f, -1.0f, 1.0f);
      g.grads[kPatchSize * kPatchSize + y * kPatchSize + x] = std::clamp(dy / 4.0f, -1.0f, 1.0f);
    }
  }
  return g;
}

std::string patch_spec_to_json(const PatchSpec& spec) {
  json j;
  j["image_id"] = spec.image_id;
  j["x"] = spec.x;
  j["y"] = spec.y;
  j["w"] = spec.w;
  j["h"] = spec.h;
  j["scale"] = spec.scale;
  j["ratio"] = spec.ratio;
  return j.dump();
}

PatchSpec patch_spec_from_json(const std::string& line) {
  json j = json::parse(line);
  PatchSpec s;
  s.image_id = j.at("image_id").get<std::string>();
  s.x = j.at("x").get<int>();
  s.y = j.at("y").get<int>();
  s.w = j.at("w").get<int>();
  s.h = j.at("h").get<int>();
  s.scale = j.at("scale").get<double>();
  s.ratio = j.at("ratio").get<double>();
  return s;
}

void save_patch_specs(const std::string& path, const std::vector<PatchSpec>& specs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_patch_specs: cannot write '" + path + "'");
  for (const auto& s : specs) out << patch_spec_to_json(s) << "\n";
}

std::vector<PatchSpec> load_patch_specs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_patch_specs: cannot open '" + path + "'");
  std::vector<PatchSpec> specs;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) specs.push_back(patch_spec_from_json(line));
  return specs;
}

}  // namespace ps
