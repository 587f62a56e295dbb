#pragma once

#include "patternspace/nn.hpp"
#include "patternspace/patches.hpp"
#include "patternspace/rng.hpp"

#include <array>
#include <memory>
#include <string>
#include <vector>

namespace ps {

constexpr int kZDim = 100;

struct PatternVector {
  std::array<float, kZDim> z_mean{};
  std::array<float, kZDim> sigma{};  // strictly positive (exp of half log-variance)
};

namespace nn {

// Two 3x3 convs with batch norm; 1x1 downsample projection when the stride
// or channel count changes.
class BasicBlock {
 public:
  BasicBlock(const std::string& name, int in_ch, int out_ch, int stride, Rng& rng);
  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& dy);
  void collect_params(std::vector<Param*>& out);

 private:
  Conv2d conv1_;
  BatchNorm2d bn1_;
  ReLU relu1_;
  Conv2d conv2_;
  BatchNorm2d bn2_;
  std::unique_ptr<Conv2d> ds_conv_;
  std::unique_ptr<BatchNorm2d> ds_bn_;
  ReLU relu_out_;
};

}  // namespace nn

// 18-layer residual encoder for 2x32x32 gradient patches: 3x3 stem (no
// max-pool), four stages of two basic blocks, global average pooling, one
// fully connected layer emitting (z_mean, log-variance).
class Encoder {
 public:
  Encoder(int base_width, Rng& rng);

  // x: (N,2,32,32) -> mean (N,100), logvar (N,100)
  void forward(const nn::Tensor& x, bool train, nn::Tensor& mean, nn::Tensor& logvar);
  // dmean/dlogvar: (N,100) -> dx
  nn::Tensor backward(const nn::Tensor& dmean, const nn::Tensor& dlogvar);
  void collect_params(std::vector<nn::Param*>& out);

  int base_width() const { return base_width_; }

 private:
  int base_width_;
  nn::Conv2d stem_conv_;
  nn::BatchNorm2d stem_bn_;
  nn::ReLU stem_relu_;
  std::vector<std::unique_ptr<nn::BasicBlock>> blocks_;
  nn::GlobalAvgPool gap_;
  nn::Linear fc_;
};

// Two fully connected layers then four stride-2 transposed convolutions back
// to a 2x32x32 gradient patch.
class Decoder {
 public:
  Decoder(int base_width, Rng& rng);

  nn::Tensor forward(const nn::Tensor& z, bool train);  // (N,100) -> (N,2,32,32)
  nn::Tensor backward(const nn::Tensor& dy);            // -> dz (N,100)
  void collect_params(std::vector<nn::Param*>& out);

 private:
  int base_width_;
  nn::Linear fc1_;
  nn::ReLU relu1_;
  nn::Linear fc2_;
  nn::ReLU relu2_;
  nn::ConvTranspose2d up1_;
  nn::ReLU relu3_;
  nn::ConvTranspose2d up2_;
  nn::ReLU relu4_;
  nn::ConvTranspose2d up3_;
  nn::ReLU relu5_;
  nn::ConvTranspose2d up4_;
};

class PatternVae {
 public:
  PatternVae(int base_width, uint64_t init_seed);

  Encoder& encoder() { return *encoder_; }
  Decoder& decoder() { return *decoder_; }
  int base_width() const { return base_width_; }
  uint64_t init_seed() const { return init_seed_; }

  std::vector<nn::Param*> params();

  // Deterministic inference embedding (z_mean path, batch-norm in eval mode).
  std::vector<PatternVector> embed(const std::vector<GradientPatch>& patches, int batch_size = 256);
  PatternVector encode_one(const GradientPatch& g);

 private:
  int base_width_;
  uint64_t init_seed_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<Decoder> decoder_;
};

// z = mean + exp(0.5*logvar) * eps, eps ~ N(0, I). Returns eps for backprop.
void reparameterize(const nn::Tensor& mean, const nn::Tensor& logvar, Rng& rng, nn::Tensor& z,
                    nn::Tensor& eps);

nn::Tensor gradient_batch(const std::vector<GradientPatch>& patches, size_t offset, size_t count);

}  // namespace ps
