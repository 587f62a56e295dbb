#include "patternspace/losses.hpp"

#include <cblas.h>

#include <cmath>
#include <stdexcept>

namespace ps {

using nn::Tensor;

NceResult NceLoss::forward(const Tensor& z, double tau) {
  if (z.shape.size() != 2) throw std::invalid_argument("nce: z must be 2-D");
  const int n = z.dim(0);
  const int d = z.dim(1);
  if (n < 4 || n % 2 != 0) throw std::invalid_argument("nce: need at least 2 pairs (B >= 2)");
  if (tau <= 0.0) throw std::invalid_argument("nce: tau must be positive");

  z_ = z;
  tau_ = tau;
  norms_.assign(n, 0.0);
  unit_ = Tensor({n, d});
  for (int i = 0; i < n; ++i) {
    const float* zi = z.ptr() + static_cast<size_t>(i) * d;
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += static_cast<double>(zi[j]) * zi[j];
    norms_[i] = std::max(std::sqrt(s), 1e-12);
    float* ui = unit_.data.data() + static_cast<size_t>(i) * d;
    for (int j = 0; j < d; ++j) ui[j] = static_cast<float>(zi[j] / norms_[i]);
  }

  sim_.assign(static_cast<size_t>(n) * n, 0.0f);
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, n, n, d, 1.0f, unit_.ptr(), d, unit_.ptr(),
              d, 0.0f, sim_.data(), n);

  NceResult res;
  res.per_anchor.assign(n, 0.0);
  res.per_pair.assign(n / 2, 0.0);
  for (int i = 0; i < n; ++i) {
    const int partner = i ^ 1;
    const float* row = sim_.data() + static_cast<size_t>(i) * n;
    double maxv = -1e30;
    for (int k = 0; k < n; ++k)
      if (k != i) maxv = std::max(maxv, static_cast<double>(row[k]) / tau);
    double lse = 0.0;
    for (int k = 0; k < n; ++k)
      if (k != i) lse += std::exp(static_cast<double>(row[k]) / tau - maxv);
    lse = maxv + std::log(lse);
    res.per_anchor[i] = -static_cast<double>(row[partner]) / tau + lse;
  }
  double acc = 0.0;
  for (int t = 0; t < n / 2; ++t) {
    res.per_pair[t] = 0.5 * (res.per_anchor[2 * t] + res.per_anchor[2 * t + 1]);
    acc += res.per_pair[t];
  }
  res.mean_loss = acc / (n / 2);
  return res;
}

Tensor NceLoss::backward(const std::vector<double>& pair_weights) {
  const int n = z_.dim(0);
  const int d = z_.dim(1);
  if (static_cast<int>(pair_weights.size()) != n / 2)
    throw std::invalid_argument("nce backward: weight count mismatch");

  // G[i][k] = d(total)/d(sim[i][k]); total = (1/B) sum_t g_t * 0.5*(l_2t + l_2t+1)
  // so each anchor contributes with coefficient g/(2B) ... here B = n/2 pairs
  // and the per-anchor factor is g_pair(i) / n.
  std::vector<float> g_mat(static_cast<size_t>(n) * n, 0.0f);
  for (int i = 0; i < n; ++i) {
    const double coeff = pair_weights[i / 2] / n;
    const int partner = i ^ 1;
    const float* row = sim_.data() + static_cast<size_t>(i) * n;
    double maxv = -1e30;
    for (int k = 0; k < n; ++k)
      if (k != i) maxv = std::max(maxv, static_cast<double>(row[k]) / tau_);
    double denom = 0.0;
    for (int k = 0; k < n; ++k)
      if (k != i) denom += std::exp(static_cast<double>(row[k]) / tau_ - maxv);
    float* grow = g_mat.data() + static_cast<size_t>(i) * n;
    for (int k = 0; k < n; ++k) {
      if (k == i) continue;
      const double soft = std::exp(static_cast<double>(row[k]) / tau_ - maxv) / denom;
      double val = soft / tau_;
      if (k == partner) val -= 1.0 / tau_;
      grow[k] = static_cast<float>(coeff * val);
    }
  }

  // dU = (G + G^T) * U
  std::vector<float> gsym(static_cast<size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k)
      gsym[static_cast<size_t>(i) * n + k] =
          g_mat[static_cast<size_t>(i) * n + k] + g_mat[static_cast<size_t>(k) * n + i];

  Tensor du({n, d});
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, n, d, n, 1.0f, gsym.data(), n,
              unit_.ptr(), d, 0.0f, du.data.data(), d);

  // project through the normalization: dz = (du - (du . u) u) / ||z||
  Tensor dz({n, d});
  for (int i = 0; i < n; ++i) {
    const float* ui = unit_.ptr() + static_cast<size_t>(i) * d;
    const float* dui = du.ptr() + static_cast<size_t>(i) * d;
    double dot = 0.0;
    for (int j = 0; j < d; ++j) dot += static_cast<double>(dui[j]) * ui[j];
    float* out = dz.data.data() + static_cast<size_t>(i) * d;
    for (int j = 0; j < d; ++j)
      out[j] = static_cast<float>((dui[j] - dot * ui[j]) / norms_[i]);
  }
  return dz;
}

KldResult kld_loss(const Tensor& mean, const Tensor& logvar) {
  const int n = mean.dim(0);
  KldResult r;
  r.dmean = Tensor(mean.shape);
  r.dlogvar = Tensor(logvar.shape);
  double acc = 0.0;
  for (size_t i = 0; i < mean.data.size(); ++i) {
    const double m = mean.data[i];
    const double lv = logvar.data[i];
    const double ev = std::exp(lv);
    acc += -0.5 * (1.0 + lv - m * m - ev);
    r.dmean.data[i] = static_cast<float>(m / n);
    r.dlogvar.data[i] = static_cast<float>(-0.5 * (1.0 - ev) / n);
  }
  r.loss = acc / n;
  return r;
}

MseResult mse_loss(const Tensor& recon, const Tensor& target) {
  if (recon.data.size() != target.data.size())
    throw std::invalid_argument("mse: shape mismatch");
  MseResult r;
  r.drecon = Tensor(recon.shape);
  const double inv = 1.0 / static_cast<double>(recon.data.size());
  double acc = 0.0;
  for (size_t i = 0; i < recon.data.size(); ++i) {
    const double diff = static_cast<double>(recon.data[i]) - target.data[i];
    acc += diff * diff;
    r.drecon.data[i] = static_cast<float>(2.0 * diff * inv);
  }
  r.loss = acc * inv;
  return r;
}

}  // namespace ps
