#include "patternspace/nn.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

extern "C" void openblas_set_num_threads(int);

namespace ps::nn {

void configure_blas_threads() { openblas_set_num_threads(1); }

namespace {

int omp_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

int omp_tid() {
#ifdef _OPENMP
  return omp_get_thread_num();
#else
  return 0;
#endif
}

// x: (C,H,W) single image -> col: (C*k*k, Ho*Wo)
void im2col(const float* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            float* col) {
  const int cols = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        float* dst = col + ((static_cast<size_t>(c) * k + ki) * k + kj) * cols;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) {
            std::fill(dst + static_cast<size_t>(oy) * Wo, dst + static_cast<size_t>(oy + 1) * Wo, 0.0f);
            continue;
          }
          const float* src_row = x + (static_cast<size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            dst[static_cast<size_t>(oy) * Wo + ox] = (ix >= 0 && ix < W) ? src_row[ix] : 0.0f;
          }
        }
      }
    }
  }
}

// col: (C*k*k, Ho*Wo) scatter-added back into x: (C,H,W)
void col2im_add(const float* col, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
                float* x) {
  const int cols = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const float* src = col + ((static_cast<size_t>(c) * k + ki) * k + kj) * cols;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) continue;
          float* dst_row = x + (static_cast<size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < W) dst_row[ix] += src[static_cast<size_t>(oy) * Wo + ox];
          }
        }
      }
    }
  }
}

void sgemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda,
           const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
              k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void he_normal_init(Tensor& t, int fan_in, Rng& rng, double scale = 1.0) {
  const double std = scale * std::sqrt(2.0 / fan_in);
  for (auto& v : t.data) v = static_cast<float>(rng.normal() * std);
}

}  // namespace

// ---------------- Conv2d ----------------

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int ksize, int stride, int pad, Rng& rng)
    : in_ch_(in_ch), out_ch_(out_ch), ksize_(ksize), stride_(stride), pad_(pad) {
  weight_.name = std::move(name) + ".weight";
  weight_.value = Tensor({out_ch, in_ch * ksize * ksize});
  weight_.grad = Tensor({out_ch, in_ch * ksize * ksize});
  he_normal_init(weight_.value, in_ch * ksize * ksize, rng);
}

Tensor Conv2d::forward(const Tensor& x, bool /*train*/) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (C != in_ch_) throw std::invalid_argument("Conv2d: channel mismatch");
  const int Ho = out_len(H), Wo = out_len(W);
  const int K = in_ch_ * ksize_ * ksize_;
  const int cols = Ho * Wo;

  x_cache_ = x;
  Tensor y({N, out_ch_, Ho, Wo});

#pragma omp parallel
  {
    std::vector<float> col(static_cast<size_t>(K) * cols);
#pragma omp for schedule(static)
    for (int n = 0; n < N; ++n) {
      im2col(x.ptr() + static_cast<size_t>(n) * C * H * W, C, H, W, ksize_, stride_, pad_, Ho, Wo,
             col.data());
      sgemm(false, false, out_ch_, cols, K, 1.0f, weight_.value.ptr(), K, col.data(), cols, 0.0f,
            y.ptr() + static_cast<size_t>(n) * out_ch_ * cols, cols);
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
  const Tensor& x = x_cache_;
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = dy.dim(2), Wo = dy.dim(3);
  const int K = in_ch_ * ksize_ * ksize_;
  const int cols = Ho * Wo;

  Tensor dx({N, C, H, W});
  const int nthreads = omp_threads();
  std::vector<std::vector<float>> dw_partial(nthreads,
                                             std::vector<float>(weight_.grad.data.size(), 0.0f));

#pragma omp parallel
  {
    std::vector<float> col(static_cast<size_t>(K) * cols);
    std::vector<float> dcol(static_cast<size_t>(K) * cols);
    float* dw = dw_partial[omp_tid()].data();
#pragma omp for schedule(static)
    for (int n = 0; n < N; ++n) {
      const float* dyn = dy.ptr() + static_cast<size_t>(n) * out_ch_ * cols;
      // dcol = W^T * dy_n
      sgemm(true, false, K, cols, out_ch_, 1.0f, weight_.value.ptr(), K, dyn, cols, 0.0f,
            dcol.data(), cols);
      col2im_add(dcol.data(), C, H, W, ksize_, stride_, pad_, Ho, Wo,
                 dx.data.data() + static_cast<size_t>(n) * C * H * W);
      // dW += dy_n * col^T
      im2col(x.ptr() + static_cast<size_t>(n) * C * H * W, C, H, W, ksize_, stride_, pad_, Ho, Wo,
             col.data());
      sgemm(false, true, out_ch_, K, cols, 1.0f, dyn, cols, col.data(), cols, 1.0f, dw, K);
    }
  }
  for (int t = 0; t < nthreads; ++t)
    for (size_t i = 0; i < weight_.grad.data.size(); ++i) weight_.grad.data[i] += dw_partial[t][i];
  return dx;
}

// ---------------- ConvTranspose2d ----------------

ConvTranspose2d::ConvTranspose2d(std::string name, int in_ch, int out_ch, int ksize, int stride,
                                 int pad, Rng& rng)
    : in_ch_(in_ch), out_ch_(out_ch), ksize_(ksize), stride_(stride), pad_(pad) {
  weight_.name = name + ".weight";
  weight_.value = Tensor({in_ch, out_ch * ksize * ksize});
  weight_.grad = Tensor({in_ch, out_ch * ksize * ksize});
  he_normal_init(weight_.value, in_ch * ksize * ksize, rng);
  bias_.name = name + ".bias";
  bias_.value = Tensor({out_ch});
  bias_.grad = Tensor({out_ch});
}

Tensor ConvTranspose2d::forward(const Tensor& x, bool /*train*/) {
  const int N = x.dim(0), C = x.dim(1), Hi = x.dim(2), Wi = x.dim(3);
  if (C != in_ch_) throw std::invalid_argument("ConvTranspose2d: channel mismatch");
  const int Ho = out_len(Hi), Wo = out_len(Wi);
  const int K = out_ch_ * ksize_ * ksize_;
  const int cols = Hi * Wi;

  x_cache_ = x;
  Tensor y({N, out_ch_, Ho, Wo});

#pragma omp parallel
  {
    std::vector<float> col(static_cast<size_t>(K) * cols);
#pragma omp for schedule(static)
    for (int n = 0; n < N; ++n) {
      // col = W^T * x_n, then scatter back through the forward-conv geometry
      sgemm(true, false, K, cols, in_ch_, 1.0f, weight_.value.ptr(), K,
            x.ptr() + static_cast<size_t>(n) * in_ch_ * cols, cols, 0.0f, col.data(), cols);
      float* yn = y.data.data() + static_cast<size_t>(n) * out_ch_ * Ho * Wo;
      col2im_add(col.data(), out_ch_, Ho, Wo, ksize_, stride_, pad_, Hi, Wi, yn);
      for (int c = 0; c < out_ch_; ++c) {
        const float b = bias_.value.data[c];
        float* row = yn + static_cast<size_t>(c) * Ho * Wo;
        for (int i = 0; i < Ho * Wo; ++i) row[i] += b;
      }
    }
  }
  return y;
}

Tensor ConvTranspose2d::backward(const Tensor& dy) {
  const Tensor& x = x_cache_;
  const int N = x.dim(0), Hi = x.dim(2), Wi = x.dim(3);
  const int Ho = dy.dim(2), Wo = dy.dim(3);
  const int K = out_ch_ * ksize_ * ksize_;
  const int cols = Hi * Wi;

  Tensor dx({N, in_ch_, Hi, Wi});
  const int nthreads = omp_threads();
  std::vector<std::vector<float>> dw_partial(nthreads,
                                             std::vector<float>(weight_.grad.data.size(), 0.0f));
  std::vector<std::vector<float>> db_partial(nthreads, std::vector<float>(out_ch_, 0.0f));

#pragma omp parallel
  {
    std::vector<float> dycol(static_cast<size_t>(K) * cols);
    float* dw = dw_partial[omp_tid()].data();
    float* db = db_partial[omp_tid()].data();
#pragma omp for schedule(static)
    for (int n = 0; n < N; ++n) {
      const float* dyn = dy.ptr() + static_cast<size_t>(n) * out_ch_ * Ho * Wo;
      im2col(dyn, out_ch_, Ho, Wo, ksize_, stride_, pad_, Hi, Wi, dycol.data());
      // dx_n = W * im2col(dy_n)
      sgemm(false, false, in_ch_, cols, K, 1.0f, weight_.value.ptr(), K, dycol.data(), cols, 0.0f,
            dx.data.data() + static_cast<size_t>(n) * in_ch_ * cols, cols);
      // dW += x_n * im2col(dy_n)^T
      sgemm(false, true, in_ch_, K, cols, 1.0f, x.ptr() + static_cast<size_t>(n) * in_ch_ * cols,
            cols, dycol.data(), cols, 1.0f, dw, K);
      for (int c = 0; c < out_ch_; ++c) {
        const float* row = dyn + static_cast<size_t>(c) * Ho * Wo;
        double acc = 0.0;
        for (int i = 0; i < Ho * Wo; ++i) acc += row[i];
        db[c] += static_cast<float>(acc);
      }
    }
  }
  for (int t = 0; t < nthreads; ++t) {
    for (size_t i = 0; i < weight_.grad.data.size(); ++i) weight_.grad.data[i] += dw_partial[t][i];
    for (int c = 0; c < out_ch_; ++c) bias_.grad.data[c] += db_partial[t][c];
  }
  return dx;
}

// ---------------- BatchNorm2d ----------------

BatchNorm2d::BatchNorm2d(std::string name, int channels, double momentum, double eps)
    : channels_(channels), momentum_(momentum), eps_(eps) {
  gamma_.name = name + ".gamma";
  gamma_.value = Tensor({channels});
  std::fill(gamma_.value.data.begin(), gamma_.value.data.end(), 1.0f);
  gamma_.grad = Tensor({channels});
  beta_.name = name + ".beta";
  beta_.value = Tensor({channels});
  beta_.grad = Tensor({channels});
  running_mean_.name = name + ".running_mean";
  running_mean_.value = Tensor({channels});
  running_mean_.trainable = false;
  running_var_.name = name + ".running_var";
  running_var_.value = Tensor({channels});
  std::fill(running_var_.value.data.begin(), running_var_.value.data.end(), 1.0f);
  running_var_.trainable = false;
}

Tensor BatchNorm2d::forward(const Tensor& x, bool train) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (C != channels_) throw std::invalid_argument("BatchNorm2d: channel mismatch");
  const int64_t m = static_cast<int64_t>(N) * H * W;
  Tensor y(x.shape);

  if (train) {
    xhat_cache_ = Tensor(x.shape);
    invstd_cache_.assign(C, 0.0f);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
      double sum = 0.0, sum2 = 0.0;
      for (int n = 0; n < N; ++n) {
        const float* p = x.ptr() + (static_cast<size_t>(n) * C + c) * H * W;
        for (int i = 0; i < H * W; ++i) {
          sum += p[i];
          sum2 += static_cast<double>(p[i]) * p[i];
        }
      }
      const double mean = sum / m;
      const double var = std::max(0.0, sum2 / m - mean * mean);
      const double invstd = 1.0 / std::sqrt(var + eps_);
      invstd_cache_[c] = static_cast<float>(invstd);

      const double unbiased = m > 1 ? var * m / (m - 1.0) : var;
      running_mean_.value.data[c] =
          static_cast<float>((1.0 - momentum_) * running_mean_.value.data[c] + momentum_ * mean);
      running_var_.value.data[c] =
          static_cast<float>((1.0 - momentum_) * running_var_.value.data[c] + momentum_ * unbiased);

      const float g = gamma_.value.data[c], b = beta_.value.data[c];
      for (int n = 0; n < N; ++n) {
        const float* p = x.ptr() + (static_cast<size_t>(n) * C + c) * H * W;
        float* xh = xhat_cache_.data.data() + (static_cast<size_t>(n) * C + c) * H * W;
        float* py = y.data.data() + (static_cast<size_t>(n) * C + c) * H * W;
        for (int i = 0; i < H * W; ++i) {
          xh[i] = static_cast<float>((p[i] - mean) * invstd);
          py[i] = g * xh[i] + b;
        }
      }
    }
  } else {
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
      const double invstd = 1.0 / std::sqrt(static_cast<double>(running_var_.value.data[c]) + eps_);
      const double mean = running_mean_.value.data[c];
      const float g = gamma_.value.data[c], b = beta_.value.data[c];
      for (int n = 0; n < N; ++n) {
        const float* p = x.ptr() + (static_cast<size_t>(n) * C + c) * H * W;
        float* py = y.data.data() + (static_cast<size_t>(n) * C + c) * H * W;
        for (int i = 0; i < H * W; ++i)
          py[i] = static_cast<float>(g * (p[i] - mean) * invstd + b);
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
  const int N = dy.dim(0), C = dy.dim(1), H = dy.dim(2), W = dy.dim(3);
  const int64_t m = static_cast<int64_t>(N) * H * W;
  Tensor dx(dy.shape);

#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < N; ++n) {
      const float* pdy = dy.ptr() + (static_cast<size_t>(n) * C + c) * H * W;
      const float* xh = xhat_cache_.ptr() + (static_cast<size_t>(n) * C + c) * H * W;
      for (int i = 0; i < H * W; ++i) {
        sum_dy += pdy[i];
        sum_dy_xhat += static_cast<double>(pdy[i]) * xh[i];
      }
    }
    gamma_.grad.data[c] += static_cast<float>(sum_dy_xhat);
    beta_.grad.data[c] += static_cast<float>(sum_dy);

    const double g_invstd = static_cast<double>(gamma_.value.data[c]) * invstd_cache_[c];
    for (int n = 0; n < N; ++n) {
      const float* pdy = dy.ptr() + (static_cast<size_t>(n) * C + c) * H * W;
      const float* xh = xhat_cache_.ptr() + (static_cast<size_t>(n) * C + c) * H * W;
      float* pdx = dx.data.data() + (static_cast<size_t>(n) * C + c) * H * W;
      for (int i = 0; i < H * W; ++i)
        pdx[i] = static_cast<float>(g_invstd * (pdy[i] - sum_dy / m - xh[i] * sum_dy_xhat / m));
    }
  }
  return dx;
}

// ---------------- ReLU ----------------

Tensor ReLU::forward(const Tensor& x, bool /*train*/) {
  Tensor y(x.shape);
  mask_.assign(x.data.size(), 0);
  for (size_t i = 0; i < x.data.size(); ++i) {
    if (x.data[i] > 0.0f) {
      y.data[i] = x.data[i];
      mask_[i] = 1;
    }
  }
  return y;
}

Tensor ReLU::backward(const Tensor& dy) {
  Tensor dx(dy.shape);
  for (size_t i = 0; i < dy.data.size(); ++i) dx.data[i] = mask_[i] ? dy.data[i] : 0.0f;
  return dx;
}

// ---------------- Linear ----------------

Linear::Linear(std::string name, int in_features, int out_features, Rng& rng, double init_scale)
    : in_f_(in_features), out_f_(out_features) {
  weight_.name = name + ".weight";
  weight_.value = Tensor({out_features, in_features});
  weight_.grad = Tensor({out_features, in_features});
  he_normal_init(weight_.value, in_features, rng, init_scale);
  bias_.name = name + ".bias";
  bias_.value = Tensor({out_features});
  bias_.grad = Tensor({out_features});
}

Tensor Linear::forward(const Tensor& x, bool /*train*/) {
  const int N = x.dim(0);
  if (x.dim(1) != in_f_) throw std::invalid_argument("Linear: feature mismatch");
  x_cache_ = x;
  Tensor y({N, out_f_});
  // y = x * W^T
  sgemm(false, true, N, out_f_, in_f_, 1.0f, x.ptr(), in_f_, weight_.value.ptr(), in_f_, 0.0f,
        y.data.data(), out_f_);
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < out_f_; ++o) y.data[static_cast<size_t>(n) * out_f_ + o] += bias_.value.data[o];
  return y;
}

Tensor Linear::backward(const Tensor& dy) {
  const int N = dy.dim(0);
  Tensor dx({N, in_f_});
  sgemm(false, false, N, in_f_, out_f_, 1.0f, dy.ptr(), out_f_, weight_.value.ptr(), in_f_, 0.0f,
        dx.data.data(), in_f_);
  sgemm(true, false, out_f_, in_f_, N, 1.0f, dy.ptr(), out_f_, x_cache_.ptr(), in_f_, 1.0f,
        weight_.grad.data.data(), in_f_);
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < out_f_; ++o) bias_.grad.data[o] += dy.data[static_cast<size_t>(n) * out_f_ + o];
  return dx;
}

// ---------------- GlobalAvgPool ----------------

Tensor GlobalAvgPool::forward(const Tensor& x, bool /*train*/) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  in_shape_ = x.shape;
  Tensor y({N, C});
  const float inv = 1.0f / (H * W);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const float* p = x.ptr() + (static_cast<size_t>(n) * C + c) * H * W;
      double acc = 0.0;
      for (int i = 0; i < H * W; ++i) acc += p[i];
      y.data[static_cast<size_t>(n) * C + c] = static_cast<float>(acc) * inv;
    }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) {
  const int N = in_shape_[0], C = in_shape_[1], H = in_shape_[2], W = in_shape_[3];
  Tensor dx(in_shape_);
  const float inv = 1.0f / (H * W);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const float g = dy.data[static_cast<size_t>(n) * C + c] * inv;
      float* p = dx.data.data() + (static_cast<size_t>(n) * C + c) * H * W;
      for (int i = 0; i < H * W; ++i) p[i] = g;
    }
  return dx;
}

// ---------------- Adam ----------------

Adam::Adam(std::vector<Param*> params, double lr_, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  lr = lr_;
  for (auto* p : params_) {
    m_.emplace_back(p->value.shape);
    v_.emplace_back(p->value.shape);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Param* p = params_[pi];
    if (!p->trainable) continue;
    float* w = p->value.data.data();
    const float* g = p->grad.data.data();
    float* m = m_[pi].data.data();
    float* v = v_[pi].data.data();
    const size_t n = p->value.data.size();
    for (size_t i = 0; i < n; ++i) {
      m[i] = static_cast<float>(beta1_ * m[i] + (1.0 - beta1_) * g[i]);
      v[i] = static_cast<float>(beta2_ * v[i] + (1.0 - beta2_) * static_cast<double>(g[i]) * g[i]);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

void Adam::zero_grad() {
  for (auto* p : params_) p->grad.zero();
}

}  // namespace ps::nn
