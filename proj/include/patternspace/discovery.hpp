#pragma once

#include "patternspace/dataset.hpp"
#include "patternspace/model.hpp"
#include "patternspace/objectness.hpp"
#include "patternspace/patches.hpp"

#include <array>
#include <string>
#include <vector>

namespace ps {

struct PoolEntry {
  PatchSpec spec;
  int sample_index = 0;  // per-image sampling order, used as the tie-break
  std::array<float, kZDim> z_mean{};
  double hscore_raw = 0.0;
  double bscore_norm = 0.0;
  double lscore = 0.0;
};

struct PatternPool {
  std::vector<PoolEntry> entries;
  std::array<double, kZDim> center{};
  double mean_lscore = 0.0;
  int n_per_image = 0;
};

struct DiscoveryConfig {
  int n_per_image = 200;
  int n_candidate = 20;
  int max_keep = 5;    // N_predict
  double iou_nms = 0.5;
  bool post_objectness = true;
};

struct Detection {
  std::string image_id;
  Box box;           // scaled-image pixels
  double score = 0.0;  // lower = more object-like
  int rank = 0;        // 1-based within image
  double scale_factor = 1.0;
};

// Algorithm steps 1-3: sample n_per_image patches per image, embed, score
// objectness, 1-mean center (closed-form mean) and per-entry lscore.
PatternPool build_pool(const std::vector<ScaledImage>& dataset, PatternVae& model,
                       const BackgroundModel& bg, const SamplerConfig& sampler,
                       const ObjectnessConfig& ocfg, int n_per_image, Rng& rng);

// score = lscore + alpha_h*(1-hscore) + alpha_b*(1-bscore)
double po_score(double lscore, double hscore_raw, double bscore_norm, double alpha_h, double alpha_b);

struct Candidate {
  const PoolEntry* entry = nullptr;
  double score = 0.0;
};

// The n_candidate lowest-score patches of one image, ascending; ties broken
// by sampling index. With post_objectness off the score is the bare lscore.
std::vector<Candidate> select_candidates(const PatternPool& pool, const std::string& image_id,
                                         const DiscoveryConfig& cfg);

// Greedy keep-best-then-suppress on candidates sorted ascending by score.
std::vector<Detection> nms(const std::vector<Candidate>& candidates, double iou_thres, int max_keep);

// Full Algorithm: pool -> P-O -> candidates -> NMS, per image.
std::vector<Detection> discover(const std::vector<ScaledImage>& dataset, PatternVae& model,
                                const BackgroundModel& bg, const SamplerConfig& sampler,
                                const ObjectnessConfig& ocfg, const DiscoveryConfig& cfg, Rng& rng,
                                PatternPool* pool_out = nullptr);

struct NeighborHit {
  const PoolEntry* entry = nullptr;
  double distance = 0.0;
};

// k nearest entries in z_mean space, excluding (by default) entries from the
// query's own image.
std::vector<NeighborHit> nearest_neighbors(const PatternPool& pool, const PoolEntry& query, int k,
                                           bool exclude_same_image = true);

// Line-delimited detections plus a JSON meta sidecar path convention
// (<path> holds detections, caller writes meta).
void save_detections(const std::string& path, const std::vector<Detection>& dets);
std::vector<Detection> load_detections(const std::string& path);

void save_pool(const std::string& path, const PatternPool& pool);
PatternPool load_pool(const std::string& path);

}  // namespace ps
