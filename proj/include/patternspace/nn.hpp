#pragma once

#include "patternspace/rng.hpp"
#include "patternspace/tensor.hpp"

#include <memory>
#include <string>
#include <vector>

namespace ps::nn {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;  // false for batch-norm running stats
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool train) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual void collect_params(std::vector<Param*>& out) = 0;
};

// 2D convolution, NCHW, square kernel, no bias (batch norm follows every
// conv in the encoder). im2col + sgemm; the column buffer is rebuilt in
// backward instead of cached.
class Conv2d : public Layer {
 public:
  Conv2d(std::string name, int in_ch, int out_ch, int ksize, int stride, int pad, Rng& rng);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(std::vector<Param*>& out) override { out.push_back(&weight_); }

  int out_len(int in_len) const { return (in_len + 2 * pad_ - ksize_) / stride_ + 1; }

 private:
  int in_ch_, out_ch_, ksize_, stride_, pad_;
  Param weight_;  // (out_ch, in_ch*k*k)
  Tensor x_cache_;
};

// Transposed convolution (stride-2 upsampler in the decoder). Bias included.
class ConvTranspose2d : public Layer {
 public:
  ConvTranspose2d(std::string name, int in_ch, int out_ch, int ksize, int stride, int pad, Rng& rng);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(std::vector<Param*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  int out_len(int in_len) const { return (in_len - 1) * stride_ - 2 * pad_ + ksize_; }

 private:
  int in_ch_, out_ch_, ksize_, stride_, pad_;
  Param weight_;  // (in_ch, out_ch*k*k)
  Param bias_;    // (out_ch)
  Tensor x_cache_;
};

class BatchNorm2d : public Layer {
 public:
  BatchNorm2d(std::string name, int channels, double momentum = 0.1, double eps = 1e-5);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(std::vector<Param*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
  }

 private:
  int channels_;
  double momentum_, eps_;
  Param gamma_, beta_;
  Param running_mean_, running_var_;  // buffers, not trainable
  Tensor xhat_cache_;
  std::vector<float> invstd_cache_;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(std::vector<Param*>&) override {}

 private:
  std::vector<uint8_t> mask_;
};

class Linear : public Layer {
 public:
  Linear(std::string name, int in_features, int out_features, Rng& rng, double init_scale = 1.0);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(std::vector<Param*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  int in_f_, out_f_;
  Param weight_;  // (out, in)
  Param bias_;    // (out)
  Tensor x_cache_;
};

// (N,C,H,W) -> (N,C) spatial mean.
class GlobalAvgPool : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(std::vector<Param*>&) override {}

 private:
  std::vector<int> in_shape_;
};

class Adam {
 public:
  Adam(std::vector<Param*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step();
  void zero_grad();

  int64_t t() const { return t_; }
  double lr = 3e-4;

  // exposed for checkpointing
  std::vector<Tensor>& m() { return m_; }
  std::vector<Tensor>& v() { return v_; }
  void set_t(int64_t t) { t_ = t; }

 private:
  std::vector<Param*> params_;
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

// Pins the BLAS backend to one thread; layer code parallelizes across
// images itself so results stay deterministic for a fixed thread count.
void configure_blas_threads();

}  // namespace ps::nn
