#include "patternspace/model.hpp"

#include <cmath>
#include <stdexcept>

namespace ps {

using nn::Param;
using nn::Tensor;

namespace nn {

BasicBlock::BasicBlock(const std::string& name, int in_ch, int out_ch, int stride, Rng& rng)
    : conv1_(name + ".conv1", in_ch, out_ch, 3, stride, 1, rng),
      bn1_(name + ".bn1", out_ch),
      conv2_(name + ".conv2", out_ch, out_ch, 3, 1, 1, rng),
      bn2_(name + ".bn2", out_ch) {
  if (stride != 1 || in_ch != out_ch) {
    ds_conv_ = std::make_unique<Conv2d>(name + ".ds", in_ch, out_ch, 1, stride, 0, rng);
    ds_bn_ = std::make_unique<BatchNorm2d>(name + ".ds_bn", out_ch);
  }
}

Tensor BasicBlock::forward(const Tensor& x, bool train) {
  Tensor a = relu1_.forward(bn1_.forward(conv1_.forward(x, train), train), train);
  Tensor b = bn2_.forward(conv2_.forward(a, train), train);
  Tensor sc = ds_conv_ ? ds_bn_->forward(ds_conv_->forward(x, train), train) : x;
  for (size_t i = 0; i < b.data.size(); ++i) b.data[i] += sc.data[i];
  return relu_out_.forward(b, train);
}

Tensor BasicBlock::backward(const Tensor& dy) {
  Tensor db = relu_out_.backward(dy);
  // residual path
  Tensor dx = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(db)))));
  // shortcut path
  if (ds_conv_) {
    Tensor dsc = ds_conv_->backward(ds_bn_->backward(db));
    for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dsc.data[i];
  } else {
    for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += db.data[i];
  }
  return dx;
}

void BasicBlock::collect_params(std::vector<Param*>& out) {
  conv1_.collect_params(out);
  bn1_.collect_params(out);
  conv2_.collect_params(out);
  bn2_.collect_params(out);
  if (ds_conv_) {
    ds_conv_->collect_params(out);
    ds_bn_->collect_params(out);
  }
}

}  // namespace nn

Encoder::Encoder(int base_width, Rng& rng)
    : base_width_(base_width),
      stem_conv_("enc.stem", 2, base_width, 3, 1, 1, rng),
      stem_bn_("enc.stem_bn", base_width),
      gap_(),
      fc_("enc.fc", base_width * 8, 2 * kZDim, rng) {
  const int w = base_width;
  auto add = [&](const std::string& n, int ic, int oc, int s) {
    blocks_.push_back(std::make_unique<nn::BasicBlock>(n, ic, oc, s, rng));
  };
  add("enc.l1b1", w, w, 1);
  add("enc.l1b2", w, w, 1);
  add("enc.l2b1", w, 2 * w, 2);
  add("enc.l2b2", 2 * w, 2 * w, 1);
  add("enc.l3b1", 2 * w, 4 * w, 2);
  add("enc.l3b2", 4 * w, 4 * w, 1);
  add("enc.l4b1", 4 * w, 8 * w, 2);
  add("enc.l4b2", 8 * w, 8 * w, 1);
}

void Encoder::forward(const Tensor& x, bool train, Tensor& mean, Tensor& logvar) {
  if (x.shape.size() != 4 || x.dim(1) != 2 || x.dim(2) != kPatchSize || x.dim(3) != kPatchSize)
    throw std::invalid_argument("Encoder: input must be (N,2,32,32)");
  Tensor h = stem_relu_.forward(stem_bn_.forward(stem_conv_.forward(x, train), train), train);
  for (auto& b : blocks_) h = b->forward(h, train);
  h = gap_.forward(h, train);
  Tensor out = fc_.forward(h, train);

  const int N = out.dim(0);
  mean = Tensor({N, kZDim});
  logvar = Tensor({N, kZDim});
  for (int n = 0; n < N; ++n) {
    const float* row = out.ptr() + static_cast<size_t>(n) * 2 * kZDim;
    std::copy_n(row, kZDim, mean.data.begin() + static_cast<size_t>(n) * kZDim);
    std::copy_n(row + kZDim, kZDim, logvar.data.begin() + static_cast<size_t>(n) * kZDim);
  }
}

Tensor Encoder::backward(const Tensor& dmean, const Tensor& dlogvar) {
  const int N = dmean.dim(0);
  Tensor dout({N, 2 * kZDim});
  for (int n = 0; n < N; ++n) {
    float* row = dout.data.data() + static_cast<size_t>(n) * 2 * kZDim;
    std::copy_n(dmean.ptr() + static_cast<size_t>(n) * kZDim, kZDim, row);
    std::copy_n(dlogvar.ptr() + static_cast<size_t>(n) * kZDim, kZDim, row + kZDim);
  }
  Tensor dh = gap_.backward(fc_.backward(dout));
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) dh = (*it)->backward(dh);
  return stem_conv_.backward(stem_bn_.backward(stem_relu_.backward(dh)));
}

void Encoder::collect_params(std::vector<Param*>& out) {
  stem_conv_.collect_params(out);
  stem_bn_.collect_params(out);
  for (auto& b : blocks_) b->collect_params(out);
  fc_.collect_params(out);
}

Decoder::Decoder(int base_width, Rng& rng)
    : base_width_(base_width),
      fc1_("dec.fc1", kZDim, 256, rng),
      fc2_("dec.fc2", 256, base_width * 8 * 2 * 2, rng),
      up1_("dec.up1", base_width * 8, base_width * 4, 4, 2, 1, rng),
      up2_("dec.up2", base_width * 4, base_width * 2, 4, 2, 1, rng),
      up3_("dec.up3", base_width * 2, base_width, 4, 2, 1, rng),
      up4_("dec.up4", base_width, 2, 4, 2, 1, rng) {}

Tensor Decoder::forward(const Tensor& z, bool train) {
  const int N = z.dim(0);
  Tensor h = relu1_.forward(fc1_.forward(z, train), train);
  h = relu2_.forward(fc2_.forward(h, train), train);
  h.reshape({N, base_width_ * 8, 2, 2});
  h = relu3_.forward(up1_.forward(h, train), train);
  h = relu4_.forward(up2_.forward(h, train), train);
  h = relu5_.forward(up3_.forward(h, train), train);
  return up4_.forward(h, train);  // linear output, gradients live in [-1,1]
}

Tensor Decoder::backward(const Tensor& dy) {
  Tensor d = up3_.backward(relu5_.backward(up4_.backward(dy)));
  d = up1_.backward(relu3_.backward(up2_.backward(relu4_.backward(d))));
  d.reshape({d.dim(0), base_width_ * 8 * 2 * 2});
  d = fc1_.backward(relu1_.backward(fc2_.backward(relu2_.backward(d))));
  return d;
}

void Decoder::collect_params(std::vector<Param*>& out) {
  fc1_.collect_params(out);
  fc2_.collect_params(out);
  up1_.collect_params(out);
  up2_.collect_params(out);
  up3_.collect_params(out);
  up4_.collect_params(out);
}

PatternVae::PatternVae(int base_width, uint64_t init_seed)
    : base_width_(base_width), init_seed_(init_seed) {
  Rng rng = substream(init_seed, "init");
  encoder_ = std::make_unique<Encoder>(base_width, rng);
  decoder_ = std::make_unique<Decoder>(base_width, rng);
}

std::vector<Param*> PatternVae::params() {
  std::vector<Param*> out;
  encoder_->collect_params(out);
  decoder_->collect_params(out);
  return out;
}

std::vector<PatternVector> PatternVae::embed(const std::vector<GradientPatch>& patches,
                                             int batch_size) {
  std::vector<PatternVector> out(patches.size());
  for (size_t off = 0; off < patches.size(); off += static_cast<size_t>(batch_size)) {
    const size_t count = std::min(static_cast<size_t>(batch_size), patches.size() - off);
    Tensor x = gradient_batch(patches, off, count);
    Tensor mean, logvar;
    encoder_->forward(x, /*train=*/false, mean, logvar);
    for (size_t i = 0; i < count; ++i) {
      for (int d = 0; d < kZDim; ++d) {
        out[off + i].z_mean[d] = mean.data[i * kZDim + d];
        out[off + i].sigma[d] = std::exp(0.5f * logvar.data[i * kZDim + d]);
      }
    }
  }
  return out;
}

PatternVector PatternVae::encode_one(const GradientPatch& g) {
  return embed(std::vector<GradientPatch>{g}, 1)[0];
}

void reparameterize(const Tensor& mean, const Tensor& logvar, Rng& rng, Tensor& z, Tensor& eps) {
  z = Tensor(mean.shape);
  eps = Tensor(mean.shape);
  for (size_t i = 0; i < mean.data.size(); ++i) {
    eps.data[i] = static_cast<float>(rng.normal());
    z.data[i] = mean.data[i] + std::exp(0.5f * logvar.data[i]) * eps.data[i];
  }
}

Tensor gradient_batch(const std::vector<GradientPatch>& patches, size_t offset, size_t count) {
  Tensor x({static_cast<int>(count), 2, kPatchSize, kPatchSize});
  for (size_t i = 0; i < count; ++i)
    std::copy(patches[offset + i].grads.begin(), patches[offset + i].grads.end(),
              x.data.begin() + i * patches[offset + i].grads.size());
  return x;
}

}  // namespace ps
