#pragma once

#include "patternspace/dataset.hpp"
#include "patternspace/patches.hpp"
#include "patternspace/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ps {

struct Histogram2D {
  int n_h = 0;  // hue bins
  int n_s = 0;  // saturation bins
  std::vector<double> bins;  // n_h * n_s counts, row-major over (h, s)

  double total() const;
  double& at(int hb, int sb) { return bins[hb * n_s + sb]; }
  double at(int hb, int sb) const { return bins[hb * n_s + sb]; }
};

struct ObjectnessScores {
  double hscore_raw = 0.0;   // [0,1]
  double hscore_adj = 0.0;   // raw - k * population mean, may be negative
  double bscore_norm = 0.0;  // [0,1]
};

struct BandGeometry {
  double band_factor = 0.35;  // each side of the outer rectangle grows by this fraction
};

struct ObjectnessConfig {
  int hue_bins = 30;
  int sat_bins = 32;
  BandGeometry band;
  double hscore_k = 0.5;  // mean-subtraction factor
  int bg_clusters = 5;
  int bg_pool_size = 2000;  // patches sampled for the k-means fit
  double k1 = 1.0;  // weight of the histogram term in g()
  double k2 = 1.0;  // weight of the background term in g()
};

// Hue in [0,360) binned into n_h, saturation in [0,1] into n_s. V unused.
Histogram2D hs_histogram(const uint8_t* rgb, size_t pixel_count, int n_h, int n_s);
Histogram2D hs_histogram(const std::vector<uint8_t>& rgb_interleaved, int n_h, int n_s);

// d = sqrt(1 - sum_I sqrt(H1*H2) / sqrt(mean(H1)*mean(H2)*N^2)), clamped to [0,1].
double hellinger(const Histogram2D& h1, const Histogram2D& h2);

struct HscoreResult {
  double value = 0.0;
  bool degenerate_band = false;  // band empty after clipping; value forced to 0
};

// Hellinger distance between the patch interior histogram and the histogram
// of the surrounding band (outer rectangle minus the patch, clipped).
HscoreResult hscore_raw(const ImageU8& image, const PatchSpec& spec, const ObjectnessConfig& cfg);
inline HscoreResult hscore_raw(const ScaledImage& img, const PatchSpec& spec, const ObjectnessConfig& cfg) {
  return hscore_raw(img.pixels, spec, cfg);
}

inline double hscore_adjusted(double raw, double population_mean, double k = 0.5) {
  return raw - k * population_mean;
}

inline double pair_score(double a, double b) { return 0.5 * (a + b); }

inline double combine_g(double hscore_like, double bscore_norm, double k1, double k2) {
  return k1 * hscore_like + k2 * bscore_norm;
}

// Rolling pool of raw hscores; the population mean used for mean
// subtraction is frozen between refresh() calls so batches within an epoch
// see one consistent value.
class HscorePool {
 public:
  explicit HscorePool(size_t capacity = 50000) : capacity_(capacity) {}

  void add(double hscore) {
    if (values_.size() < capacity_) {
      values_.push_back(hscore);
    } else {
      values_[head_] = hscore;
      head_ = (head_ + 1) % capacity_;
    }
  }
  // Recompute the frozen mean from the current pool (epoch boundary).
  void refresh();
  double mean() const { return mean_; }
  size_t size() const { return values_.size(); }

 private:
  size_t capacity_;
  size_t head_ = 0;
  std::vector<double> values_;
  double mean_ = 0.0;
};

constexpr int kPatchVecDim = kPatchSize * kPatchSize * 3;  // 3072

// Flattened pixel vector, channels scaled to [0,1], RGB interleaved row-major.
std::vector<float> flatten_patch(const PixelPatch& p);

struct BackgroundModel {
  int k = 5;
  std::vector<float> centers;  // k * kPatchVecDim
  double maxscore = 0.0;
  uint64_t fit_seed = 0;
  size_t pool_size = 0;

  const float* center(int i) const { return centers.data() + static_cast<size_t>(i) * kPatchVecDim; }
};

// K-means (k-means++ init, Lloyd iterations, <=300 iters, tol 1e-4 on the
// relative inertia change, best of 10 restarts). Throws on pools smaller
// than k and on degenerate pools (maxscore == 0).
BackgroundModel fit_background_model(const std::vector<PixelPatch>& pool, int k, Rng& rng);

double bscore_unnormalized(const PixelPatch& p, const BackgroundModel& m);

// Distance to the nearest center over maxscore, clamped to [0,1].
double bscore_norm(const PixelPatch& p, const BackgroundModel& m);

// Binary centers + JSON sidecar (<path>.json).
void save_background_model(const std::string& path, const BackgroundModel& m);
BackgroundModel load_background_model(const std::string& path);

}  // namespace ps
