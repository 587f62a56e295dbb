#include "patternspace/config.hpp"

#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <sstream>

using nlohmann::json;

namespace ps {

void PipelineConfig::validate() const {
  sampler.validate();
  train.validate();
  if (discovery.n_per_image < 1 || discovery.n_candidate < 1 || discovery.max_keep < 1)
    throw std::invalid_argument("config: discovery counts must be >= 1");
  if (discovery.iou_nms <= 0.0 || discovery.iou_nms >= 1.0)
    throw std::invalid_argument("config: iou_nms must be in (0,1)");
  if (eval.n_runs < 1) throw std::invalid_argument("config: eval.n_runs must be >= 1");
  for (double t : eval.iou_thresholds)
    if (t <= 0.0 || t >= 1.0) throw std::invalid_argument("config: eval thresholds must be in (0,1)");
  if (objectness.hue_bins < 1 || objectness.sat_bins < 1)
    throw std::invalid_argument("config: histogram bins must be >= 1");
  if (objectness.band.band_factor <= 0.0)
    throw std::invalid_argument("config: band_factor must be > 0");
  if (objectness.bg_clusters < 1)
    throw std::invalid_argument("config: bg_clusters must be >= 1");
}

namespace {

json to_json(const PipelineConfig& c) {
  json j;
  j["manifest"] = c.manifest;
  j["sampler"] = {{"scale_min", c.sampler.scale_min},
                  {"scale_max", c.sampler.scale_max},
                  {"ratio_min", c.sampler.ratio_min},
                  {"ratio_max", c.sampler.ratio_max},
                  {"iou_min", c.sampler.iou_min},
                  {"pos_jitter", c.sampler.pos_jitter},
                  {"scale_jitter_lo", c.sampler.scale_jitter_lo},
                  {"scale_jitter_hi", c.sampler.scale_jitter_hi},
                  {"pair_retry_cap", c.sampler.pair_retry_cap},
                  {"log_uniform_scale", c.sampler.log_uniform_scale}};
  j["objectness"] = {{"hue_bins", c.objectness.hue_bins},
                     {"sat_bins", c.objectness.sat_bins},
                     {"band_factor", c.objectness.band.band_factor},
                     {"hscore_k", c.objectness.hscore_k},
                     {"bg_clusters", c.objectness.bg_clusters},
                     {"bg_pool_size", c.objectness.bg_pool_size},
                     {"k1", c.objectness.k1},
                     {"k2", c.objectness.k2}};
  j["train"] = {{"batch_pairs", c.train.batch_pairs},
                {"tau", c.train.tau},
                {"lambda_contrastive", c.train.lambda_contrastive},
                {"lambda_recon", c.train.lambda_recon},
                {"lambda_kld", c.train.lambda_kld},
                {"lr", c.train.lr},
                {"epochs", c.train.epochs},
                {"patches_per_image", c.train.patches_per_image},
                {"modulation", to_string(c.train.modulation)},
                {"base_width", c.train.base_width}};
  j["discovery"] = {{"n_per_image", c.discovery.n_per_image},
                    {"n_candidate", c.discovery.n_candidate},
                    {"max_keep", c.discovery.max_keep},
                    {"iou_nms", c.discovery.iou_nms},
                    {"post_objectness", c.discovery.post_objectness}};
  j["eval"] = {{"iou_thresholds", c.eval.iou_thresholds},
               {"n_runs", c.eval.n_runs},
               {"corloc_top1", c.eval.corloc_top1}};
  j["output_dir"] = c.output_dir;
  j["seed"] = c.seed;
  return j;
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

PipelineConfig from_json(const json& j) {
  PipelineConfig c;
  maybe(j, "manifest", c.manifest);
  if (j.contains("sampler")) {
    const auto& s = j["sampler"];
    maybe(s, "scale_min", c.sampler.scale_min);
    maybe(s, "scale_max", c.sampler.scale_max);
    maybe(s, "ratio_min", c.sampler.ratio_min);
    maybe(s, "ratio_max", c.sampler.ratio_max);
    maybe(s, "iou_min", c.sampler.iou_min);
    maybe(s, "pos_jitter", c.sampler.pos_jitter);
    maybe(s, "scale_jitter_lo", c.sampler.scale_jitter_lo);
    maybe(s, "scale_jitter_hi", c.sampler.scale_jitter_hi);
    maybe(s, "pair_retry_cap", c.sampler.pair_retry_cap);
    maybe(s, "log_uniform_scale", c.sampler.log_uniform_scale);
  }
  if (j.contains("objectness")) {
    const auto& o = j["objectness"];
    maybe(o, "hue_bins", c.objectness.hue_bins);
    maybe(o, "sat_bins", c.objectness.sat_bins);
    maybe(o, "band_factor", c.objectness.band.band_factor);
    maybe(o, "hscore_k", c.objectness.hscore_k);
    maybe(o, "bg_clusters", c.objectness.bg_clusters);
    maybe(o, "bg_pool_size", c.objectness.bg_pool_size);
    maybe(o, "k1", c.objectness.k1);
    maybe(o, "k2", c.objectness.k2);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    maybe(t, "batch_pairs", c.train.batch_pairs);
    maybe(t, "tau", c.train.tau);
    maybe(t, "lambda_contrastive", c.train.lambda_contrastive);
    maybe(t, "lambda_recon", c.train.lambda_recon);
    maybe(t, "lambda_kld", c.train.lambda_kld);
    maybe(t, "lr", c.train.lr);
    maybe(t, "epochs", c.train.epochs);
    maybe(t, "patches_per_image", c.train.patches_per_image);
    if (t.contains("modulation"))
      c.train.modulation = modulation_from_string(t["modulation"].get<std::string>());
    maybe(t, "base_width", c.train.base_width);
  }
  if (j.contains("discovery")) {
    const auto& d = j["discovery"];
    maybe(d, "n_per_image", c.discovery.n_per_image);
    maybe(d, "n_candidate", c.discovery.n_candidate);
    maybe(d, "max_keep", c.discovery.max_keep);
    maybe(d, "iou_nms", c.discovery.iou_nms);
    maybe(d, "post_objectness", c.discovery.post_objectness);
  }
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    if (e.contains("iou_thresholds"))
      c.eval.iou_thresholds = e["iou_thresholds"].get<std::vector<double>>();
    maybe(e, "n_runs", c.eval.n_runs);
    maybe(e, "corloc_top1", c.eval.corloc_top1);
  }
  maybe(j, "output_dir", c.output_dir);
  maybe(j, "seed", c.seed);
  return c;
}

}  // namespace

PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_pipeline_config: cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("load_pipeline_config: parse error in '" + path + "': " + e.what());
  }
  return from_json(j);
}

void save_pipeline_config(const std::string& path, const PipelineConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_pipeline_config: cannot write '" + path + "'");
  out << to_json(cfg).dump(2) << "\n";
}

std::string pipeline_config_to_json(const PipelineConfig& cfg) { return to_json(cfg).dump(2); }

PipelineConfig pipeline_config_from_json(const std::string& text) {
  return from_json(json::parse(text));
}

std::string config_hash(const PipelineConfig& cfg) {
  const uint64_t h = fnv1a64(to_json(cfg).dump());
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace ps
