#include "patternspace/discovery.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

using nlohmann::json;

namespace ps {

PatternPool build_pool(const std::vector<ScaledImage>& dataset, PatternVae& model,
                       const BackgroundModel& bg, const SamplerConfig& sampler,
                       const ObjectnessConfig& ocfg, int n_per_image, Rng& rng) {
  if (dataset.empty()) throw std::invalid_argument("build_pool: empty dataset");

  PatternPool pool;
  pool.n_per_image = n_per_image;
  pool.entries.reserve(dataset.size() * static_cast<size_t>(n_per_image));

  std::vector<GradientPatch> grads;
  grads.reserve(pool.entries.capacity());

  for (const auto& img : dataset) {
    for (int i = 0; i < n_per_image; ++i) {
      PatchSpec spec;
      while (true) {
        auto s = sample_patch({img.pixels.width, img.pixels.height}, sampler, rng);
        if (s) {
          spec = *s;
          break;
        }
      }
      spec.image_id = img.image_id;
      PoolEntry e;
      e.spec = spec;
      e.sample_index = i;
      pool.entries.push_back(e);
    }
  }

  // heavy per-entry work, parallel and deterministic
  std::map<std::string, const ScaledImage*> by_id;
  for (const auto& img : dataset) by_id[img.image_id] = &img;
  grads.resize(pool.entries.size());
#pragma omp parallel for schedule(static)
  for (size_t i = 0; i < pool.entries.size(); ++i) {
    PoolEntry& e = pool.entries[i];
    const ScaledImage& img = *by_id.at(e.spec.image_id);
    const PixelPatch px = extract(img, e.spec);
    grads[i] = sobel(px);
    e.hscore_raw = hscore_raw(img, e.spec, ocfg).value;
    e.bscore_norm = bscore_norm(px, bg);
  }

  const std::vector<PatternVector> vecs = model.embed(grads);
  for (size_t i = 0; i < pool.entries.size(); ++i) pool.entries[i].z_mean = vecs[i].z_mean;

  pool.center.fill(0.0);
  for (const auto& e : pool.entries)
    for (int d = 0; d < kZDim; ++d) pool.center[d] += e.z_mean[d];
  for (int d = 0; d < kZDim; ++d) pool.center[d] /= static_cast<double>(pool.entries.size());

  double lsum = 0.0;
  for (auto& e : pool.entries) {
    double acc = 0.0;
    for (int d = 0; d < kZDim; ++d) {
      const double diff = e.z_mean[d] - pool.center[d];
      acc += diff * diff;
    }
    e.lscore = std::sqrt(acc);
    lsum += e.lscore;
  }
  pool.mean_lscore = lsum / static_cast<double>(pool.entries.size());
  return pool;
}

double po_score(double lscore, double hscore_raw, double bscore_norm, double alpha_h, double alpha_b) {
  return lscore + alpha_h * (1.0 - hscore_raw) + alpha_b * (1.0 - bscore_norm);
}

std::vector<Candidate> select_candidates(const PatternPool& pool, const std::string& image_id,
                                         const DiscoveryConfig& cfg) {
  const double alpha = pool.mean_lscore;  // alpha_h = alpha_b = average(lscore)
  std::vector<Candidate> cands;
  for (const auto& e : pool.entries) {
    if (e.spec.image_id != image_id) continue;
    Candidate c;
    c.entry = &e;
    c.score = cfg.post_objectness ? po_score(e.lscore, e.hscore_raw, e.bscore_norm, alpha, alpha)
                                  : e.lscore;
    cands.push_back(c);
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.entry->sample_index < b.entry->sample_index;
  });
  if (static_cast<int>(cands.size()) > cfg.n_candidate) cands.resize(cfg.n_candidate);
  return cands;
}

std::vector<Detection> nms(const std::vector<Candidate>& candidates, double iou_thres, int max_keep) {
  std::vector<Detection> kept;
  std::vector<bool> suppressed(candidates.size(), false);
  for (size_t i = 0; i < candidates.size() && static_cast<int>(kept.size()) < max_keep; ++i) {
    if (suppressed[i]) continue;
    const auto& c = candidates[i];
    Detection det;
    det.image_id = c.entry->spec.image_id;
    det.box = c.entry->spec.box();
    det.score = c.score;
    det.rank = static_cast<int>(kept.size()) + 1;
    kept.push_back(det);
    for (size_t j = i + 1; j < candidates.size(); ++j) {
      if (suppressed[j]) continue;
      if (iou(c.entry->spec.box(), candidates[j].entry->spec.box()) > iou_thres)
        suppressed[j] = true;
    }
  }
  return kept;
}

std::vector<Detection> discover(const std::vector<ScaledImage>& dataset, PatternVae& model,
                                const BackgroundModel& bg, const SamplerConfig& sampler,
                                const ObjectnessConfig& ocfg, const DiscoveryConfig& cfg, Rng& rng,
                                PatternPool* pool_out) {
  PatternPool pool = build_pool(dataset, model, bg, sampler, ocfg, cfg.n_per_image, rng);
  std::vector<Detection> all;
  for (const auto& img : dataset) {
    const auto cands = select_candidates(pool, img.image_id, cfg);
    auto dets = nms(cands, cfg.iou_nms, cfg.max_keep);
    for (auto& d : dets) d.scale_factor = img.scale_factor;
    all.insert(all.end(), dets.begin(), dets.end());
  }
  if (pool_out != nullptr) *pool_out = std::move(pool);
  return all;
}

std::vector<NeighborHit> nearest_neighbors(const PatternPool& pool, const PoolEntry& query, int k,
                                           bool exclude_same_image) {
  std::vector<NeighborHit> hits;
  for (const auto& e : pool.entries) {
    if (&e == &query) continue;
    if (exclude_same_image && e.spec.image_id == query.spec.image_id) continue;
    double acc = 0.0;
    for (int d = 0; d < kZDim; ++d) {
      const double diff = static_cast<double>(e.z_mean[d]) - query.z_mean[d];
      acc += diff * diff;
    }
    hits.push_back({&e, std::sqrt(acc)});
  }
  std::stable_sort(hits.begin(), hits.end(),
                   [](const NeighborHit& a, const NeighborHit& b) { return a.distance < b.distance; });
  if (static_cast<int>(hits.size()) > k) hits.resize(k);
  return hits;
}

void save_detections(const std::string& path, const std::vector<Detection>& dets) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_detections: cannot write '" + path + "'");
  for (const auto& d : dets) {
    json j;
    j["image_id"] = d.image_id;
    j["x"] = d.box.x;
    j["y"] = d.box.y;
    j["w"] = d.box.w;
    j["h"] = d.box.h;
    j["score"] = d.score;
    j["rank"] = d.rank;
    j["scale_factor"] = d.scale_factor;
    out << j.dump() << "\n";
  }
}

std::vector<Detection> load_detections(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_detections: cannot open '" + path + "'");
  std::vector<Detection> dets;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    Detection d;
    d.image_id = j.at("image_id").get<std::string>();
    d.box = Box{j.at("x").get<double>(), j.at("y").get<double>(), j.at("w").get<double>(),
                j.at("h").get<double>()};
    d.score = j.at("score").get<double>();
    d.rank = j.at("rank").get<int>();
    d.scale_factor = j.value("scale_factor", 1.0);
    dets.push_back(std::move(d));
  }
  return dets;
}

void save_pool(const std::string& path, const PatternPool& pool) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_pool: cannot write '" + path + "'");
  json header;
  header["n_per_image"] = pool.n_per_image;
  header["count"] = pool.entries.size();
  header["mean_lscore"] = pool.mean_lscore;
  header["center"] = pool.center;
  json entries = json::array();
  for (const auto& e : pool.entries) {
    entries.push_back({{"spec", json::parse(patch_spec_to_json(e.spec))},
                       {"i", e.sample_index},
                       {"h", e.hscore_raw},
                       {"b", e.bscore_norm},
                       {"l", e.lscore}});
  }
  header["entries"] = std::move(entries);
  const std::string hs = header.dump();
  const uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& e : pool.entries)
    out.write(reinterpret_cast<const char*>(e.z_mean.data()), kZDim * sizeof(float));
  if (!out) throw std::runtime_error("save_pool: write failed '" + path + "'");
}

PatternPool load_pool(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_pool: cannot open '" + path + "'");
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  json header = json::parse(hs);

  PatternPool pool;
  pool.n_per_image = header.at("n_per_image").get<int>();
  pool.mean_lscore = header.at("mean_lscore").get<double>();
  for (int d = 0; d < kZDim; ++d) pool.center[d] = header.at("center")[d].get<double>();
  for (const auto& je : header.at("entries")) {
    PoolEntry e;
    e.spec = patch_spec_from_json(je.at("spec").dump());
    e.sample_index = je.at("i").get<int>();
    e.hscore_raw = je.at("h").get<double>();
    e.bscore_norm = je.at("b").get<double>();
    e.lscore = je.at("l").get<double>();
    pool.entries.push_back(std::move(e));
  }
  for (auto& e : pool.entries)
    in.read(reinterpret_cast<char*>(e.z_mean.data()), kZDim * sizeof(float));
  if (!in) throw std::runtime_error("load_pool: truncated '" + path + "'");
  return pool;
}

}  // namespace ps
