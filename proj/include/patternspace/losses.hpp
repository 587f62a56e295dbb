#pragma once

#include "patternspace/tensor.hpp"

#include <vector>

namespace ps {

// Contrastive batch state. Embeddings come in as B positive pairs laid out
// [p1_0, p2_0, p1_1, p2_1, ...]; partner(i) = i ^ 1. Negatives for an
// anchor are the members of all other pairs; the positive similarity also
// appears in the normalizing sum (normalized-temperature cross-entropy).
struct NceResult {
  std::vector<double> per_anchor;  // 2B values
  std::vector<double> per_pair;    // B values, mean of the two anchors
  double mean_loss = 0.0;          // unweighted mean over pairs
};

class NceLoss {
 public:
  // z: (2B, D), B >= 2. sim is cosine similarity.
  NceResult forward(const nn::Tensor& z, double tau);

  // d(total)/dz for total = (1/B) * sum_t weight[t] * per_pair[t].
  // Call after forward; weights are per pair.
  nn::Tensor backward(const std::vector<double>& pair_weights);

 private:
  nn::Tensor z_;
  nn::Tensor unit_;           // row-normalized z
  std::vector<double> norms_;
  std::vector<float> sim_;    // (2B, 2B)
  double tau_ = 0.2;
};

struct KldResult {
  double loss = 0.0;  // batch mean of -0.5 * sum_d (1 + lv - m^2 - e^lv)
  nn::Tensor dmean;
  nn::Tensor dlogvar;
};

KldResult kld_loss(const nn::Tensor& mean, const nn::Tensor& logvar);

struct MseResult {
  double loss = 0.0;  // mean over all elements
  nn::Tensor drecon;
};

MseResult mse_loss(const nn::Tensor& recon, const nn::Tensor& target);

struct BatchLossParts {
  double total = 0.0;
  double contrastive = 0.0;  // weighted mean_t g_t * l_t
  double reconstruction = 0.0;
  double kld = 0.0;
};

}  // namespace ps
