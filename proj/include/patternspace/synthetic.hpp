#pragma once

#include "patternspace/dataset.hpp"
#include "patternspace/rng.hpp"

#include <string>
#include <vector>

namespace ps {

// Generator for self-contained demo/verification scenes: every image gets a
// fresh cool-toned gradient background plus a ground strip shared across
// the whole set, and 1..3 instances of one warm striped template with
// aspect ratio 3 (h/w). Ground truth is known by construction.
struct SyntheticConfig {
  int n_images = 100;
  int width = 384;   // portrait, like the bulk of the person datasets;
  int height = 512;  // keeps the scale range unclamped after width-256 scaling
  int min_instances = 2;
  int max_instances = 3;
  int obj_h_min = 240;  // original-resolution pixels
  int obj_h_max = 360;
  uint64_t seed = 777;
};

struct SyntheticScene {
  AnnotatedImage image;
};

// In-memory generation (used by tests).
std::vector<AnnotatedImage> generate_synthetic_dataset(const SyntheticConfig& cfg);

// Writes <dir>/images/*.png, <dir>/manifest.json and <dir>/annotations.jsonl.
// Returns total box count.
int write_synthetic_fixture(const std::string& dir, const SyntheticConfig& cfg);

}  // namespace ps
