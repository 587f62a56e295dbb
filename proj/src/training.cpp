#include "patternspace/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

using nlohmann::json;

namespace ps {

using nn::Tensor;

std::string to_string(ModulationMode m) {
  switch (m) {
    case ModulationMode::None: return "none";
    case ModulationMode::Hist: return "hist";
    case ModulationMode::Bgnd: return "bgnd";
    case ModulationMode::Both: return "both";
  }
  return "none";
}

ModulationMode modulation_from_string(const std::string& s) {
  if (s == "none") return ModulationMode::None;
  if (s == "hist") return ModulationMode::Hist;
  if (s == "bgnd") return ModulationMode::Bgnd;
  if (s == "both") return ModulationMode::Both;
  throw std::invalid_argument("unknown modulation mode '" + s + "' (want none|hist|bgnd|both)");
}

void TrainConfig::validate() const {
  if (batch_pairs < 2) throw std::invalid_argument("train: batch_pairs must be >= 2 (NCE needs negatives)");
  if (tau <= 0.0) throw std::invalid_argument("train: tau must be > 0");
  if (lambda_contrastive < 0.0 || lambda_recon < 0.0 || lambda_kld < 0.0)
    throw std::invalid_argument("train: loss weights must be >= 0");
  if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (patches_per_image < 1) throw std::invalid_argument("train: patches_per_image must be >= 1");
  if (base_width < 1) throw std::invalid_argument("train: base_width must be >= 1");
  if (lr <= 0.0) throw std::invalid_argument("train: lr must be > 0");
}

TrainBatch make_train_batch(const std::vector<ScaledImage>& dataset, const SamplerConfig& sampler,
                            const ObjectnessConfig& ocfg, ModulationMode mode,
                            const BackgroundModel* bg, double hscore_population_mean,
                            int batch_pairs, Rng& rng) {
  const int B = batch_pairs;
  TrainBatch batch;
  batch.specs.reserve(2 * B);
  std::vector<const ScaledImage*> images(2 * B);

  // rng consumed serially here; the heavy per-patch work below is parallel
  for (int t = 0; t < B; ++t) {
    const auto& img = dataset[rng.uniform_index(static_cast<int>(dataset.size()))];
    auto [s1, s2] = sample_pair({img.pixels.width, img.pixels.height}, sampler, rng);
    s1.image_id = img.image_id;
    s2.image_id = img.image_id;
    images[2 * t] = &img;
    images[2 * t + 1] = &img;
    batch.specs.push_back(s1);
    batch.specs.push_back(s2);
  }

  const bool want_h = uses_hist(mode);
  const bool want_b = uses_bgnd(mode);
  if (want_b && bg == nullptr)
    throw std::invalid_argument("make_train_batch: background model required for this modulation mode");

  batch.inputs = Tensor({2 * B, 2, kPatchSize, kPatchSize});
  if (want_h) batch.hscore_raw.assign(2 * B, 0.0);
  if (want_b) batch.bscore.assign(2 * B, 0.0);

#pragma omp parallel for schedule(static)
  for (int i = 0; i < 2 * B; ++i) {
    const PixelPatch px = extract(*images[i], batch.specs[i]);
    const GradientPatch gp = sobel(px);
    std::copy(gp.grads.begin(), gp.grads.end(),
              batch.inputs.data.begin() + static_cast<size_t>(i) * gp.grads.size());
    if (want_h) batch.hscore_raw[i] = hscore_raw(*images[i], batch.specs[i], ocfg).value;
    if (want_b) batch.bscore[i] = bscore_norm(px, *bg);
  }

  batch.pair_g.assign(B, 1.0);
  if (mode != ModulationMode::None) {
    const double k1 = want_h ? ocfg.k1 : 0.0;
    const double k2 = want_b ? ocfg.k2 : 0.0;
    for (int t = 0; t < B; ++t) {
      double h_pair = 0.0, b_pair = 0.0;
      if (want_h) {
        const double a1 = hscore_adjusted(batch.hscore_raw[2 * t], hscore_population_mean, ocfg.hscore_k);
        const double a2 = hscore_adjusted(batch.hscore_raw[2 * t + 1], hscore_population_mean, ocfg.hscore_k);
        h_pair = pair_score(a1, a2);
      }
      if (want_b) b_pair = pair_score(batch.bscore[2 * t], batch.bscore[2 * t + 1]);
      batch.pair_g[t] = combine_g(h_pair, b_pair, k1, k2);
    }
  }
  return batch;
}

namespace {

std::string dump_specs(const TrainBatch& batch, size_t limit = 4) {
  std::ostringstream os;
  for (size_t i = 0; i < std::min(limit, batch.specs.size()); ++i)
    os << " " << patch_spec_to_json(batch.specs[i]);
  return os.str();
}

}  // namespace

StepResult train_step(PatternVae& model, const TrainBatch& batch, const TrainConfig& cfg, Rng& rng,
                      nn::Adam& opt) {
  const int B = static_cast<int>(batch.pair_g.size());
  opt.zero_grad();

  Tensor mean, logvar;
  model.encoder().forward(batch.inputs, /*train=*/true, mean, logvar);

  Tensor z, eps;
  reparameterize(mean, logvar, rng, z, eps);

  Tensor recon = model.decoder().forward(z, /*train=*/true);

  MseResult mse = mse_loss(recon, batch.inputs);
  KldResult kld = kld_loss(mean, logvar);

  // The contrastive branch runs on z_mean (the inference embedding); the
  // sampled z only feeds the decoder. Driving the NCE through the
  // reparameterization noise floor (sigma starts at 1) drowns the cosine
  // similarities and stalls training.
  NceLoss nce;
  NceResult nce_res = nce.forward(mean, cfg.tau);
  double contrastive = 0.0;
  for (int t = 0; t < B; ++t) contrastive += batch.pair_g[t] * nce_res.per_pair[t];
  contrastive /= B;

  StepResult out;
  out.losses.contrastive = contrastive;
  out.losses.reconstruction = mse.loss;
  out.losses.kld = kld.loss;
  out.losses.total = cfg.lambda_contrastive * contrastive + cfg.lambda_recon * mse.loss +
                     cfg.lambda_kld * kld.loss;
  if (!std::isfinite(out.losses.total) || !std::isfinite(contrastive) || !std::isfinite(mse.loss) ||
      !std::isfinite(kld.loss)) {
    throw std::runtime_error("train_step: non-finite loss (contrastive=" + std::to_string(contrastive) +
                             " recon=" + std::to_string(mse.loss) + " kld=" + std::to_string(kld.loss) +
                             "); batch head:" + dump_specs(batch));
  }

  // backward: the decoder path reaches mean/logvar through z = mean +
  // exp(lv/2)*eps; the contrastive path hits mean directly
  std::vector<double> pair_weights(batch.pair_g);
  for (auto& w : pair_weights) w *= cfg.lambda_contrastive;
  Tensor dmean = nce.backward(pair_weights);

  for (auto& v : mse.drecon.data) v *= static_cast<float>(cfg.lambda_recon);
  Tensor dz_dec = model.decoder().backward(mse.drecon);

  Tensor dlogvar(logvar.shape);
  for (size_t i = 0; i < dmean.data.size(); ++i) {
    dmean.data[i] += dz_dec.data[i] + static_cast<float>(cfg.lambda_kld) * kld.dmean.data[i];
    dlogvar.data[i] = dz_dec.data[i] * 0.5f * std::exp(0.5f * logvar.data[i]) * eps.data[i] +
                      static_cast<float>(cfg.lambda_kld) * kld.dlogvar.data[i];
  }
  model.encoder().backward(dmean, dlogvar);

  opt.step();
  return out;
}

namespace {

struct ParamSnapshot {
  std::vector<Tensor> values;
  std::vector<Tensor> adam_m, adam_v;
  int64_t adam_t = 0;
};

ParamSnapshot snapshot(std::vector<nn::Param*>& params, nn::Adam& opt) {
  ParamSnapshot s;
  for (auto* p : params) s.values.push_back(p->value);
  s.adam_m = opt.m();
  s.adam_v = opt.v();
  s.adam_t = opt.t();
  return s;
}

}  // namespace

Checkpoint train(const TrainInputs& in, const Checkpoint* resume_from, const EpochCallback& on_epoch) {
  in.cfg.validate();
  in.sampler.validate();
  if (in.dataset == nullptr || in.dataset->empty())
    throw std::invalid_argument("train: empty dataset");
  if (uses_bgnd(in.cfg.modulation) && in.bg_model == nullptr)
    throw std::invalid_argument("train: background model required for modulation mode " +
                                to_string(in.cfg.modulation));
  nn::configure_blas_threads();

  const auto& dataset = *in.dataset;
  const int n_images = static_cast<int>(dataset.size());

  Checkpoint ckpt;
  if (resume_from != nullptr) {
    if (resume_from->model->base_width() != in.cfg.base_width)
      throw std::invalid_argument("train: resume base_width mismatch");
    ckpt.model = std::make_unique<PatternVae>(in.cfg.base_width, resume_from->model->init_seed());
    auto dst = ckpt.model->params();
    std::vector<nn::Param*> src;
    // copy weights via serialization-equivalent direct assignment
    auto src_model = const_cast<PatternVae*>(resume_from->model.get());
    src = src_model->params();
    for (size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
    ckpt.meta = resume_from->meta;
    ckpt.adam_m = resume_from->adam_m;
    ckpt.adam_v = resume_from->adam_v;
    ckpt.adam_t = resume_from->adam_t;
  } else {
    ckpt.model = std::make_unique<PatternVae>(in.cfg.base_width, in.master_seed);
    ckpt.meta.epoch = 0;
  }
  ckpt.meta.master_seed = in.master_seed;
  ckpt.meta.config_hash = in.config_hash;
  ckpt.meta.bg_model_ref = in.bg_model_ref;
  ckpt.meta.train_config = in.cfg;

  auto params = ckpt.model->params();
  nn::Adam opt(params, in.cfg.lr);
  if (!ckpt.adam_m.empty()) {
    opt.m() = ckpt.adam_m;
    opt.v() = ckpt.adam_v;
    opt.set_t(ckpt.adam_t);
  }

  // Population mean pool for the mean-subtracted hscore: warmed with one
  // epoch's worth of samples, refreshed at each epoch boundary so batches
  // within an epoch share one frozen mean.
  HscorePool hpool;
  if (uses_hist(in.cfg.modulation)) {
    Rng hrng = substream(in.master_seed, "hstats");
    const size_t warm = std::min<size_t>(50000, static_cast<size_t>(n_images) *
                                                    in.cfg.patches_per_image * 2);
    std::vector<PatchSpec> warm_specs;
    std::vector<const ScaledImage*> warm_imgs;
    for (size_t i = 0; i < warm; ++i) {
      const auto& img = dataset[hrng.uniform_index(n_images)];
      auto s = sample_patch({img.pixels.width, img.pixels.height}, in.sampler, hrng);
      if (!s) continue;
      s->image_id = img.image_id;
      warm_specs.push_back(*s);
      warm_imgs.push_back(&img);
    }
    std::vector<double> warm_scores(warm_specs.size());
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < warm_specs.size(); ++i)
      warm_scores[i] = hscore_raw(*warm_imgs[i], warm_specs[i], in.objectness).value;
    for (double v : warm_scores) hpool.add(v);
    hpool.refresh();
  }

  Rng rng = substream(in.master_seed, "train");
  const int steps_per_epoch =
      std::max(1, n_images * in.cfg.patches_per_image / in.cfg.batch_pairs);

  ParamSnapshot last_good = snapshot(params, opt);
  std::vector<EpochStats>& history = ckpt.meta.loss_history;
  const int start_epoch = ckpt.meta.epoch;

  for (int epoch = start_epoch; epoch < in.cfg.epochs; ++epoch) {
    hpool.refresh();
    EpochStats stats;
    bool diverged = false;
    std::string diverge_msg;
    for (int step = 0; step < steps_per_epoch; ++step) {
      TrainBatch batch =
          make_train_batch(dataset, in.sampler, in.objectness, in.cfg.modulation, in.bg_model,
                           hpool.mean(), in.cfg.batch_pairs, rng);
      for (double h : batch.hscore_raw) hpool.add(h);
      try {
        StepResult res = train_step(*ckpt.model, batch, in.cfg, rng, opt);
        stats.total += res.losses.total;
        stats.contrastive += res.losses.contrastive;
        stats.reconstruction += res.losses.reconstruction;
        stats.kld += res.losses.kld;
      } catch (const std::runtime_error& e) {
        diverged = true;
        diverge_msg = e.what();
        break;
      }
    }
    if (diverged) {
      // roll back to the last finite epoch
      for (size_t i = 0; i < params.size(); ++i) params[i]->value = last_good.values[i];
      opt.m() = last_good.adam_m;
      opt.v() = last_good.adam_v;
      opt.set_t(last_good.adam_t);
      ckpt.meta.aborted_on_divergence = true;
      std::fprintf(stderr, "train: divergence at epoch %d, keeping epoch %d (%s)\n", epoch,
                   ckpt.meta.epoch, diverge_msg.c_str());
      break;
    }
    stats.total /= steps_per_epoch;
    stats.contrastive /= steps_per_epoch;
    stats.reconstruction /= steps_per_epoch;
    stats.kld /= steps_per_epoch;
    history.push_back(stats);
    ckpt.meta.epoch = epoch + 1;
    last_good = snapshot(params, opt);
    if (on_epoch) on_epoch(epoch, stats);
  }

  ckpt.adam_m = opt.m();
  ckpt.adam_v = opt.v();
  ckpt.adam_t = opt.t();
  return ckpt;
}

// ---------------- checkpoint I/O ----------------

namespace {

constexpr char kMagic[8] = {'P', 'S', 'V', 'A', 'E', '1', '\n', '\0'};

json train_config_to_json(const TrainConfig& c) {
  return json{{"batch_pairs", c.batch_pairs},
              {"tau", c.tau},
              {"lambda_contrastive", c.lambda_contrastive},
              {"lambda_recon", c.lambda_recon},
              {"lambda_kld", c.lambda_kld},
              {"lr", c.lr},
              {"epochs", c.epochs},
              {"patches_per_image", c.patches_per_image},
              {"modulation", to_string(c.modulation)},
              {"base_width", c.base_width}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.batch_pairs = j.at("batch_pairs").get<int>();
  c.tau = j.at("tau").get<double>();
  c.lambda_contrastive = j.at("lambda_contrastive").get<double>();
  c.lambda_recon = j.at("lambda_recon").get<double>();
  c.lambda_kld = j.at("lambda_kld").get<double>();
  c.lr = j.at("lr").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.patches_per_image = j.at("patches_per_image").get<int>();
  c.modulation = modulation_from_string(j.at("modulation").get<std::string>());
  c.base_width = j.at("base_width").get<int>();
  return c;
}

void write_tensor(std::ofstream& out, const Tensor& t) {
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

void read_tensor(std::ifstream& in, Tensor& t) {
  in.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

}  // namespace

void save_checkpoint(const std::string& path, Checkpoint& ckpt) {
  auto params = ckpt.model->params();

  json header;
  header["base_width"] = ckpt.model->base_width();
  header["init_seed"] = ckpt.model->init_seed();
  header["z_dim"] = kZDim;
  header["epoch"] = ckpt.meta.epoch;
  header["master_seed"] = ckpt.meta.master_seed;
  header["config_hash"] = ckpt.meta.config_hash;
  header["bg_model_ref"] = ckpt.meta.bg_model_ref;
  header["aborted_on_divergence"] = ckpt.meta.aborted_on_divergence;
  header["train_config"] = train_config_to_json(ckpt.meta.train_config);
  header["loss_history"] = json::array();
  for (const auto& s : ckpt.meta.loss_history)
    header["loss_history"].push_back({s.total, s.contrastive, s.reconstruction, s.kld});
  header["params"] = json::array();
  for (auto* p : params)
    header["params"].push_back({{"name", p->name}, {"shape", p->value.shape}});
  header["adam"] = {{"t", ckpt.adam_t}, {"present", !ckpt.adam_m.empty()}};

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot write '" + tmp + "'");
    out.write(kMagic, sizeof(kMagic));
    const std::string hs = header.dump();
    const uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (auto* p : params) write_tensor(out, p->value);
    if (!ckpt.adam_m.empty()) {
      for (const auto& t : ckpt.adam_m) write_tensor(out, t);
      for (const auto& t : ckpt.adam_v) write_tensor(out, t);
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failed for '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in '" + path + "'");
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error("load_checkpoint: truncated header in '" + path + "'");
  json header = json::parse(hs);

  Checkpoint ckpt;
  ckpt.model = std::make_unique<PatternVae>(header.at("base_width").get<int>(),
                                            header.at("init_seed").get<uint64_t>());
  ckpt.meta.epoch = header.at("epoch").get<int>();
  ckpt.meta.master_seed = header.at("master_seed").get<uint64_t>();
  ckpt.meta.config_hash = header.value("config_hash", "");
  ckpt.meta.bg_model_ref = header.value("bg_model_ref", "");
  ckpt.meta.aborted_on_divergence = header.value("aborted_on_divergence", false);
  ckpt.meta.train_config = train_config_from_json(header.at("train_config"));
  for (const auto& row : header.at("loss_history"))
    ckpt.meta.loss_history.push_back(
        {row[0].get<double>(), row[1].get<double>(), row[2].get<double>(), row[3].get<double>()});

  auto params = ckpt.model->params();
  const auto& jparams = header.at("params");
  if (jparams.size() != params.size())
    throw std::runtime_error("load_checkpoint: parameter count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    if (jparams[i].at("name").get<std::string>() != params[i]->name)
      throw std::runtime_error("load_checkpoint: parameter order mismatch at " + params[i]->name);
    read_tensor(in, params[i]->value);
  }
  if (header.at("adam").at("present").get<bool>()) {
    ckpt.adam_t = header.at("adam").at("t").get<int64_t>();
    for (auto* p : params) {
      Tensor t(p->value.shape);
      read_tensor(in, t);
      ckpt.adam_m.push_back(std::move(t));
    }
    for (auto* p : params) {
      Tensor t(p->value.shape);
      read_tensor(in, t);
      ckpt.adam_v.push_back(std::move(t));
    }
  }
  if (!in) throw std::runtime_error("load_checkpoint: truncated blob in '" + path + "'");
  return ckpt;
}

}  // namespace ps
