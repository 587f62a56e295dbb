#pragma once

#include "patternspace/dataset.hpp"
#include "patternspace/geometry.hpp"
#include "patternspace/image.hpp"
#include "patternspace/rng.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace ps {

constexpr int kPatchSize = 32;

struct PatchSpec {
  std::string image_id;
  int x = 0, y = 0;  // top-left, scaled-image pixels
  int w = 0, h = 0;
  double scale = 0.0;  // sampled scale parameter (target height)
  double ratio = 0.0;  // sampled h/w

  Box box() const { return Box{double(x), double(y), double(w), double(h)}; }
};

struct PixelPatch {
  PatchSpec spec;
  std::array<uint8_t, kPatchSize * kPatchSize * 3> rgb{};  // interleaved, row-major
};

struct GradientPatch {
  PatchSpec spec;
  // 2 channels (dx, dy), each 32x32 row-major, values in [-1, 1]
  std::array<float, 2 * kPatchSize * kPatchSize> grads{};
};

struct SamplerConfig {
  double scale_min = 20.0;
  double scale_max = 256.0;
  double ratio_min = 3.0;  // person discovery default; 1.67-2.0 for face+upper-body
  double ratio_max = 3.0;
  double iou_min = 0.75;
  double pos_jitter = 0.10;        // +- fraction of patch size
  double scale_jitter_lo = 0.93;   // multiplicative
  double scale_jitter_hi = 1.08;
  int pair_retry_cap = 50;
  bool log_uniform_scale = false;  // sensitivity option; main text says uniform

  void validate() const;
};

struct ImageDims {
  int width = 0;
  int height = 0;
};

// One random patch. Returns nullopt when no feasible placement exists after
// clamping (caller resamples).
std::optional<PatchSpec> sample_patch(const ImageDims& dims, const SamplerConfig& cfg, Rng& rng);

// Jittered copy of `base` accepted at iou > cfg.iou_min, nullopt when the
// retry cap is exhausted. Exposed separately so the pair statistics can be
// checked against brute-force enumeration of the jitter ranges.
std::optional<PatchSpec> jitter_partner(const PatchSpec& base, const ImageDims& dims,
                                        const SamplerConfig& cfg, Rng& rng);

// Overlapping pair; resamples the first patch whenever a partner cannot be
// placed within the retry cap.
std::pair<PatchSpec, PatchSpec> sample_pair(const ImageDims& dims, const SamplerConfig& cfg, Rng& rng);

// Crop + bilinear resize to 32x32.
PixelPatch extract(const ScaledImage& img, const PatchSpec& spec);
PixelPatch extract(const ImageU8& pixels, const PatchSpec& spec);

// Luma Sobel, replicate border, responses scaled by 1/4 into [-1, 1].
GradientPatch sobel(const PixelPatch& p);

// Line-delimited JSON cache format.
std::string patch_spec_to_json(const PatchSpec& spec);
PatchSpec patch_spec_from_json(const std::string& line);
void save_patch_specs(const std::string& path, const std::vector<PatchSpec>& specs);
std::vector<PatchSpec> load_patch_specs(const std::string& path);

}  // namespace ps
