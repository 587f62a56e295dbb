#pragma once

#include "patternspace/dataset.hpp"
#include "patternspace/losses.hpp"
#include "patternspace/model.hpp"
#include "patternspace/objectness.hpp"
#include "patternspace/patches.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ps {

enum class ModulationMode { None, Hist, Bgnd, Both };

std::string to_string(ModulationMode m);
ModulationMode modulation_from_string(const std::string& s);
inline bool uses_hist(ModulationMode m) { return m == ModulationMode::Hist || m == ModulationMode::Both; }
inline bool uses_bgnd(ModulationMode m) { return m == ModulationMode::Bgnd || m == ModulationMode::Both; }

struct TrainConfig {
  int batch_pairs = 256;  // B
  double tau = 0.2;
  double lambda_contrastive = 1.0;
  double lambda_recon = 1.0;
  double lambda_kld = 0.1;
  double lr = 3e-4;
  int epochs = 200;
  int patches_per_image = 40;  // pairs sampled per image per epoch
  ModulationMode modulation = ModulationMode::Both;
  int base_width = 64;

  void validate() const;
};

struct EpochStats {
  double total = 0.0;
  double contrastive = 0.0;
  double reconstruction = 0.0;
  double kld = 0.0;
};

struct CheckpointMeta {
  int epoch = 0;
  std::vector<EpochStats> loss_history;
  uint64_t master_seed = 0;
  std::string config_hash;
  std::string bg_model_ref;
  TrainConfig train_config;
  bool aborted_on_divergence = false;
};

struct Checkpoint {
  std::unique_ptr<PatternVae> model;
  CheckpointMeta meta;
  std::vector<nn::Tensor> adam_m, adam_v;
  int64_t adam_t = 0;
};

// Atomic write (temp + rename): weights, batch-norm buffers, optimizer
// state and a JSON header with the config and loss history.
void save_checkpoint(const std::string& path, Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

struct TrainInputs {
  const std::vector<ScaledImage>* dataset = nullptr;
  const BackgroundModel* bg_model = nullptr;  // required when modulation uses bscore
  SamplerConfig sampler;
  ObjectnessConfig objectness;
  TrainConfig cfg;
  uint64_t master_seed = 0;
  std::string config_hash;
  std::string bg_model_ref;
};

using EpochCallback = std::function<void(int epoch, const EpochStats&)>;

// Objectness-modulated contrastive VAE training. On divergence (non-finite
// loss) returns the checkpoint of the last finite epoch with
// aborted_on_divergence set. Deterministic for a fixed seed and thread count.
Checkpoint train(const TrainInputs& in, const Checkpoint* resume_from = nullptr,
                 const EpochCallback& on_epoch = nullptr);

// One training batch: sampled pair specs plus everything the loss needs.
struct TrainBatch {
  std::vector<PatchSpec> specs;       // 2B, pair-interleaved
  nn::Tensor inputs;                  // (2B,2,32,32)
  std::vector<double> pair_g;         // B modulation weights (1.0 when off)
  std::vector<double> hscore_raw;     // 2B, empty when hist modulation is off
  std::vector<double> bscore;         // 2B, empty when bgnd modulation is off
};

TrainBatch make_train_batch(const std::vector<ScaledImage>& dataset, const SamplerConfig& sampler,
                            const ObjectnessConfig& ocfg, ModulationMode mode,
                            const BackgroundModel* bg, double hscore_population_mean,
                            int batch_pairs, Rng& rng);

struct StepResult {
  BatchLossParts losses;
};

// Forward + backward + loss assembly for one batch. Throws on non-finite
// loss terms (the message carries the offending batch's first specs).
StepResult train_step(PatternVae& model, const TrainBatch& batch, const TrainConfig& cfg, Rng& rng,
                      nn::Adam& opt);

}  // namespace ps
