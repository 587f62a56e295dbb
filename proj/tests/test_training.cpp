#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "patternspace/synthetic.hpp"
#include "patternspace/training.hpp"

#include <cmath>
#include <filesystem>

using namespace ps;

namespace {

std::vector<ScaledImage> tiny_dataset(int n_images, uint64_t seed) {
  SyntheticConfig cfg;
  cfg.n_images = n_images;
  cfg.width = 256;
  cfg.height = 192;
  cfg.obj_h_min = 90;
  cfg.obj_h_max = 150;
  cfg.seed = seed;
  auto scenes = generate_synthetic_dataset(cfg);
  std::vector<ScaledImage> out;
  for (const auto& s : scenes) out.push_back(normalize_image(s));
  return out;
}

TrainConfig tiny_train_config() {
  TrainConfig cfg;
  cfg.batch_pairs = 4;
  cfg.epochs = 2;
  cfg.patches_per_image = 4;
  cfg.base_width = 8;
  cfg.modulation = ModulationMode::None;
  return cfg;
}

BackgroundModel fit_small_bg(const std::vector<ScaledImage>& ds, uint64_t seed) {
  SamplerConfig sampler;
  Rng rng = substream(seed, "bgfit");
  std::vector<PixelPatch> pool;
  for (int i = 0; i < 64; ++i) {
    const auto& img = ds[i % ds.size()];
    auto s = sample_patch({img.pixels.width, img.pixels.height}, sampler, rng);
    REQUIRE(s.has_value());
    pool.push_back(extract(img, *s));
  }
  return fit_background_model(pool, 5, rng);
}

}  // namespace

TEST_CASE("train: loss history recorded per epoch, all finite") {
  const auto ds = tiny_dataset(6, 1);
  TrainInputs in;
  in.dataset = &ds;
  in.cfg = tiny_train_config();
  in.sampler = SamplerConfig{};
  in.master_seed = 42;

  const Checkpoint ckpt = train(in);
  CHECK(ckpt.meta.epoch == 2);
  REQUIRE(ckpt.meta.loss_history.size() == 2);
  for (const auto& s : ckpt.meta.loss_history) {
    CHECK(std::isfinite(s.total));
    CHECK(std::isfinite(s.contrastive));
    CHECK(std::isfinite(s.reconstruction));
    CHECK(std::isfinite(s.kld));
    CHECK(s.kld >= 0.0);
  }
  CHECK_FALSE(ckpt.meta.aborted_on_divergence);
}

TEST_CASE("train: fixed seed reproduces the loss curve") {
  const auto ds = tiny_dataset(6, 2);
  TrainInputs in;
  in.dataset = &ds;
  in.cfg = tiny_train_config();
  in.master_seed = 77;

  const Checkpoint a = train(in);
  const Checkpoint b = train(in);
  REQUIRE(a.meta.loss_history.size() == b.meta.loss_history.size());
  for (size_t i = 0; i < a.meta.loss_history.size(); ++i) {
    const double va = a.meta.loss_history[i].total;
    const double vb = b.meta.loss_history[i].total;
    CHECK(std::abs(va - vb) <= 0.01 * std::max(std::abs(va), 1e-9));
  }
}

TEST_CASE("train: epochs = 0 returns the initialization") {
  const auto ds = tiny_dataset(4, 3);
  TrainInputs in;
  in.dataset = &ds;
  in.cfg = tiny_train_config();
  in.cfg.epochs = 0;
  in.master_seed = 91;

  Checkpoint ckpt = train(in);
  CHECK(ckpt.meta.epoch == 0);
  CHECK(ckpt.meta.loss_history.empty());

  PatternVae fresh(in.cfg.base_width, in.master_seed);
  auto got = ckpt.model->params();
  auto want = fresh.params();
  REQUIRE(got.size() == want.size());
  for (size_t i = 0; i < got.size(); ++i) CHECK(got[i]->value.data == want[i]->value.data);
}

TEST_CASE("train: resume continues the epoch count") {
  const auto ds = tiny_dataset(4, 4);
  TrainInputs in;
  in.dataset = &ds;
  in.cfg = tiny_train_config();
  in.master_seed = 13;

  Checkpoint first = train(in);
  CHECK(first.meta.epoch == 2);

  const std::string path = "/tmp/ps_test_resume.bin";
  save_checkpoint(path, first);
  const Checkpoint loaded = load_checkpoint(path);

  TrainInputs more = in;
  more.cfg.epochs = 4;
  const Checkpoint second = train(more, &loaded);
  CHECK(second.meta.epoch == 4);
  CHECK(second.meta.loss_history.size() == 4);
  std::filesystem::remove(path);
}

TEST_CASE("train: modulation modes produce valid weights and run end-to-end") {
  const auto ds = tiny_dataset(5, 5);
  const BackgroundModel bg = fit_small_bg(ds, 5);

  for (ModulationMode mode : {ModulationMode::Hist, ModulationMode::Bgnd, ModulationMode::Both}) {
    TrainInputs in;
    in.dataset = &ds;
    in.cfg = tiny_train_config();
    in.cfg.epochs = 1;
    in.cfg.modulation = mode;
    in.bg_model = &bg;
    in.master_seed = 1000 + static_cast<int>(mode);
    const Checkpoint ckpt = train(in);
    CHECK(ckpt.meta.epoch == 1);
    CHECK(std::isfinite(ckpt.meta.loss_history[0].total));
  }

  // bgnd modulation without a model is a fail-fast error
  TrainInputs bad;
  bad.dataset = &ds;
  bad.cfg = tiny_train_config();
  bad.cfg.modulation = ModulationMode::Bgnd;
  bad.master_seed = 3;
  CHECK_THROWS_AS(train(bad), std::invalid_argument);
}

TEST_CASE("make_train_batch: modulation-off weights are exactly one") {
  const auto ds = tiny_dataset(3, 6);
  Rng rng(8);
  const TrainBatch batch = make_train_batch(ds, SamplerConfig{}, ObjectnessConfig{},
                                            ModulationMode::None, nullptr, 0.0, 6, rng);
  REQUIRE(batch.pair_g.size() == 6);
  for (double g : batch.pair_g) CHECK(g == 1.0);
  CHECK(batch.specs.size() == 12);
  CHECK(batch.hscore_raw.empty());
  // pairs share an image and overlap
  for (int t = 0; t < 6; ++t) {
    CHECK(batch.specs[2 * t].image_id == batch.specs[2 * t + 1].image_id);
    CHECK(iou(batch.specs[2 * t].box(), batch.specs[2 * t + 1].box()) > 0.75);
  }
}

TEST_CASE("make_train_batch: hist weights equal the pair-averaged adjusted scores") {
  const auto ds = tiny_dataset(3, 7);
  ObjectnessConfig ocfg;
  const double pop_mean = 0.4;
  Rng rng(9);
  const TrainBatch batch = make_train_batch(ds, SamplerConfig{}, ocfg, ModulationMode::Hist,
                                            nullptr, pop_mean, 4, rng);
  REQUIRE(batch.hscore_raw.size() == 8);
  for (int t = 0; t < 4; ++t) {
    const double a1 = batch.hscore_raw[2 * t] - ocfg.hscore_k * pop_mean;
    const double a2 = batch.hscore_raw[2 * t + 1] - ocfg.hscore_k * pop_mean;
    CHECK(batch.pair_g[t] == doctest::Approx(ocfg.k1 * 0.5 * (a1 + a2)));
  }
}

TEST_CASE("train_step: constant modulation weight scales the contrastive gradient") {
  const auto ds = tiny_dataset(3, 10);
  TrainConfig cfg = tiny_train_config();
  cfg.lambda_recon = 0.0;
  cfg.lambda_kld = 0.0;

  Rng brng(12);
  TrainBatch batch = make_train_batch(ds, SamplerConfig{}, ObjectnessConfig{},
                                      ModulationMode::None, nullptr, 0.0, cfg.batch_pairs, brng);

  auto grads_with_g = [&](double g) {
    PatternVae model(cfg.base_width, 555);
    auto params = model.params();
    for (auto* p : params) p->grad.zero();
    nn::Tensor mean, logvar;
    model.encoder().forward(batch.inputs, true, mean, logvar);
    nn::Tensor z, eps;
    Rng rrng(77);
    reparameterize(mean, logvar, rrng, z, eps);
    NceLoss nce;
    nce.forward(z, cfg.tau);
    std::vector<double> w(cfg.batch_pairs, g);
    nn::Tensor dz = nce.backward(w);
    nn::Tensor dlogvar(logvar.shape);
    for (size_t i = 0; i < dz.data.size(); ++i)
      dlogvar.data[i] = dz.data[i] * 0.5f * std::exp(0.5f * logvar.data[i]) * eps.data[i];
    model.encoder().backward(dz, dlogvar);
    std::vector<float> flat;
    for (auto* p : params)
      if (p->trainable) flat.insert(flat.end(), p->grad.data.begin(), p->grad.data.end());
    return flat;
  };

  const auto g1 = grads_with_g(1.0);
  const double c = 2.5;
  const auto gc = grads_with_g(c);
  REQUIRE(g1.size() == gc.size());
  double max_dev = 0.0, max_mag = 0.0;
  for (size_t i = 0; i < g1.size(); ++i) {
    max_dev = std::max(max_dev, std::abs(gc[i] - c * g1[i]));
    max_mag = std::max(max_mag, std::abs(static_cast<double>(g1[i])));
  }
  CHECK(max_dev <= 1e-4 * std::max(1.0, c * max_mag));
}

TEST_CASE("synthetic dataset invariants") {
  SyntheticConfig cfg;
  cfg.n_images = 8;
  cfg.seed = 2;
  const auto scenes = generate_synthetic_dataset(cfg);
  REQUIRE(scenes.size() == 8);
  for (const auto& s : scenes) {
    CHECK(s.gt_boxes.size() >= 1);
    CHECK(s.gt_boxes.size() <= 3);
    for (const auto& b : s.gt_boxes) {
      CHECK(b.x >= 0);
      CHECK(b.y >= 0);
      CHECK(b.x2() <= s.pixels.width);
      CHECK(b.y2() <= s.pixels.height);
      CHECK(b.h / b.w == doctest::Approx(3.0).epsilon(0.02));
    }
  }
}
