#pragma once

#include "patternspace/discovery.hpp"
#include "patternspace/objectness.hpp"
#include "patternspace/patches.hpp"
#include "patternspace/training.hpp"

#include <string>
#include <vector>

namespace ps {

struct EvalConfig {
  std::vector<double> iou_thresholds = {0.5, 0.4};
  int n_runs = 10;
  bool corloc_top1 = false;
};

// Everything a full run needs, in one serializable unit. Flag overrides
// beat file values beat defaults; the hash of the effective config is
// stamped into every produced artifact.
struct PipelineConfig {
  std::string manifest;
  SamplerConfig sampler;
  ObjectnessConfig objectness;
  TrainConfig train;
  DiscoveryConfig discovery;
  EvalConfig eval;
  std::string output_dir = "out";
  uint64_t seed = 12345;

  void validate() const;
};

PipelineConfig load_pipeline_config(const std::string& path);
void save_pipeline_config(const std::string& path, const PipelineConfig& cfg);
std::string pipeline_config_to_json(const PipelineConfig& cfg);
PipelineConfig pipeline_config_from_json(const std::string& text);

// FNV-1a over the canonical serialization; provenance tag, not crypto.
std::string config_hash(const PipelineConfig& cfg);

}  // namespace ps
