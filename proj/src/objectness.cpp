#include "patternspace/objectness.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

using nlohmann::json;

namespace ps {

double Histogram2D::total() const { return std::accumulate(bins.begin(), bins.end(), 0.0); }

namespace {

// H in [0,360), S in [0,1]. Gray pixels land in (h=0, s=0).
inline void rgb_to_hs(uint8_t r8, uint8_t g8, uint8_t b8, double& h, double& s) {
  const double r = r8 / 255.0, g = g8 / 255.0, b = b8 / 255.0;
  const double maxc = std::max({r, g, b});
  const double minc = std::min({r, g, b});
  const double delta = maxc - minc;
  s = maxc > 0.0 ? delta / maxc : 0.0;
  if (delta <= 0.0) {
    h = 0.0;
    return;
  }
  if (maxc == r)
    h = 60.0 * std::fmod((g - b) / delta, 6.0);
  else if (maxc == g)
    h = 60.0 * ((b - r) / delta + 2.0);
  else
    h = 60.0 * ((r - g) / delta + 4.0);
  if (h < 0.0) h += 360.0;
}

}  // namespace

Histogram2D hs_histogram(const uint8_t* rgb, size_t pixel_count, int n_h, int n_s) {
  if (pixel_count == 0) throw std::invalid_argument("hs_histogram: empty pixel set");
  if (n_h < 1 || n_s < 1) throw std::invalid_argument("hs_histogram: bad bin counts");
  Histogram2D hist;
  hist.n_h = n_h;
  hist.n_s = n_s;
  hist.bins.assign(static_cast<size_t>(n_h) * n_s, 0.0);
  for (size_t i = 0; i < pixel_count; ++i) {
    double h, s;
    rgb_to_hs(rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2], h, s);
    const int hb = std::min(static_cast<int>(h / 360.0 * n_h), n_h - 1);
    const int sb = std::min(static_cast<int>(s * n_s), n_s - 1);
    hist.at(hb, sb) += 1.0;
  }
  return hist;
}

Histogram2D hs_histogram(const std::vector<uint8_t>& rgb_interleaved, int n_h, int n_s) {
  return hs_histogram(rgb_interleaved.data(), rgb_interleaved.size() / 3, n_h, n_s);
}

double hellinger(const Histogram2D& h1, const Histogram2D& h2) {
  if (h1.n_h != h2.n_h || h1.n_s != h2.n_s)
    throw std::invalid_argument("hellinger: mismatched bin layouts");
  const double t1 = h1.total(), t2 = h2.total();
  if (t1 <= 0.0 || t2 <= 0.0) throw std::invalid_argument("hellinger: zero-total histogram");

  const double n = static_cast<double>(h1.bins.size());
  const double mean1 = t1 / n, mean2 = t2 / n;
  double bc = 0.0;
  for (size_t i = 0; i < h1.bins.size(); ++i) bc += std::sqrt(h1.bins[i] * h2.bins[i]);
  const double inside = 1.0 - bc / std::sqrt(mean1 * mean2 * n * n);
  return std::sqrt(std::clamp(inside, 0.0, 1.0));
}

namespace {

struct Rect {
  int x0, y0, x1, y1;  // half-open
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  bool empty() const { return x1 <= x0 || y1 <= y0; }
};

}  // namespace

HscoreResult hscore_raw(const ImageU8& image, const PatchSpec& spec, const ObjectnessConfig& cfg) {
  const Rect inner{spec.x, spec.y, spec.x + spec.w, spec.y + spec.h};
  if (inner.x0 < 0 || inner.y0 < 0 || inner.x1 > image.width || inner.y1 > image.height)
    throw std::out_of_range("hscore_raw: patch outside image");

  const int bx = static_cast<int>(std::lround(cfg.band.band_factor * spec.w));
  const int by = static_cast<int>(std::lround(cfg.band.band_factor * spec.h));
  Rect outer{inner.x0 - bx, inner.y0 - by, inner.x1 + bx, inner.y1 + by};
  outer.x0 = std::max(outer.x0, 0);
  outer.y0 = std::max(outer.y0, 0);
  outer.x1 = std::min(outer.x1, image.width);
  outer.y1 = std::min(outer.y1, image.height);

  std::vector<uint8_t> band_px;
  band_px.reserve(static_cast<size_t>((outer.x1 - outer.x0) * (outer.y1 - outer.y0)) * 3);
  for (int y = outer.y0; y < outer.y1; ++y)
    for (int x = outer.x0; x < outer.x1; ++x) {
      if (inner.contains(x, y)) continue;
      const uint8_t* p = image.px(x, y);
      band_px.insert(band_px.end(), p, p + 3);
    }
  if (band_px.empty()) return {0.0, true};  // patch fills the image

  std::vector<uint8_t> inner_px;
  inner_px.reserve(static_cast<size_t>(spec.w * spec.h) * 3);
  for (int y = inner.y0; y < inner.y1; ++y)
    inner_px.insert(inner_px.end(), image.px(inner.x0, y), image.px(inner.x0, y) + 3 * spec.w);

  const Histogram2D hi = hs_histogram(inner_px, cfg.hue_bins, cfg.sat_bins);
  const Histogram2D hb = hs_histogram(band_px, cfg.hue_bins, cfg.sat_bins);
  return {hellinger(hi, hb), false};
}

void HscorePool::refresh() {
  if (values_.empty()) {
    mean_ = 0.0;
    return;
  }
  mean_ = std::accumulate(values_.begin(), values_.end(), 0.0) / values_.size();
}

std::vector<float> flatten_patch(const PixelPatch& p) {
  std::vector<float> v(kPatchVecDim);
  for (int i = 0; i < kPatchVecDim; ++i) v[i] = p.rgb[i] / 255.0f;
  return v;
}

namespace {

double sq_dist(const float* a, const float* b, int dim) {
  double acc = 0.0;
  for (int i = 0; i < dim; ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return acc;
}

struct KmeansRun {
  std::vector<float> centers;
  double inertia = std::numeric_limits<double>::infinity();
};

KmeansRun kmeans_once(const std::vector<std::vector<float>>& data, int k, int dim, Rng& rng,
                      int max_iters, double tol) {
  const int n = static_cast<int>(data.size());

  // k-means++ seeding
  std::vector<float> centers(static_cast<size_t>(k) * dim);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  {
    const int first = rng.uniform_index(n);
    std::copy(data[first].begin(), data[first].end(), centers.begin());
    for (int c = 1; c < k; ++c) {
      double sum = 0.0;
      for (int i = 0; i < n; ++i) {
        const double d = sq_dist(data[i].data(), &centers[(c - 1) * static_cast<size_t>(dim)], dim);
        d2[i] = std::min(d2[i], d);
        sum += d2[i];
      }
      int pick = 0;
      if (sum > 0.0) {
        double r = rng.uniform() * sum;
        for (int i = 0; i < n; ++i) {
          r -= d2[i];
          if (r <= 0.0) {
            pick = i;
            break;
          }
        }
      } else {
        pick = rng.uniform_index(n);
      }
      std::copy(data[pick].begin(), data[pick].end(), centers.begin() + c * static_cast<size_t>(dim));
    }
  }

  std::vector<int> assign(n, -1);
  double prev_inertia = std::numeric_limits<double>::infinity();
  double inertia = prev_inertia;
  for (int iter = 0; iter < max_iters; ++iter) {
    inertia = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int bi = 0;
      for (int c = 0; c < k; ++c) {
        const double d = sq_dist(data[i].data(), &centers[c * static_cast<size_t>(dim)], dim);
        if (d < best) {
          best = d;
          bi = c;
        }
      }
      assign[i] = bi;
      inertia += best;
    }

    std::vector<double> sums(static_cast<size_t>(k) * dim, 0.0);
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      double* s = sums.data() + assign[i] * static_cast<size_t>(dim);
      for (int d = 0; d < dim; ++d) s[d] += data[i][d];
      counts[assign[i]]++;
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // empty cluster: reseed at the point farthest from its center
        int far_i = 0;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          const double d = sq_dist(data[i].data(), &centers[assign[i] * static_cast<size_t>(dim)], dim);
          if (d > far_d) {
            far_d = d;
            far_i = i;
          }
        }
        std::copy(data[far_i].begin(), data[far_i].end(), centers.begin() + c * static_cast<size_t>(dim));
        continue;
      }
      float* ctr = centers.data() + c * static_cast<size_t>(dim);
      for (int d = 0; d < dim; ++d) ctr[d] = static_cast<float>(sums[c * static_cast<size_t>(dim) + d] / counts[c]);
    }

    if (prev_inertia < std::numeric_limits<double>::infinity()) {
      const double rel = std::abs(prev_inertia - inertia) / std::max(inertia, 1e-12);
      if (rel < tol) break;
    }
    prev_inertia = inertia;
  }
  return {std::move(centers), inertia};
}

}  // namespace

BackgroundModel fit_background_model(const std::vector<PixelPatch>& pool, int k, Rng& rng) {
  if (static_cast<int>(pool.size()) < k)
    throw std::invalid_argument("fit_background_model: pool smaller than k");

  std::vector<std::vector<float>> data;
  data.reserve(pool.size());
  for (const auto& p : pool) data.push_back(flatten_patch(p));

  constexpr int kRestarts = 10;
  constexpr int kMaxIters = 300;
  constexpr double kTol = 1e-4;

  KmeansRun best;
  for (int r = 0; r < kRestarts; ++r) {
    KmeansRun run = kmeans_once(data, k, kPatchVecDim, rng, kMaxIters, kTol);
    if (run.inertia < best.inertia) best = std::move(run);
  }

  BackgroundModel m;
  m.k = k;
  m.centers = std::move(best.centers);
  m.pool_size = pool.size();

  double maxscore = 0.0;
  for (const auto& v : data) {
    double mind = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) mind = std::min(mind, sq_dist(v.data(), m.center(c), kPatchVecDim));
    maxscore = std::max(maxscore, std::sqrt(mind));
  }
  if (maxscore <= 0.0)
    throw std::runtime_error("fit_background_model: degenerate pool (maxscore = 0)");
  m.maxscore = maxscore;
  return m;
}

double bscore_unnormalized(const PixelPatch& p, const BackgroundModel& m) {
  const std::vector<float> v = flatten_patch(p);
  double mind = std::numeric_limits<double>::infinity();
  for (int c = 0; c < m.k; ++c) mind = std::min(mind, sq_dist(v.data(), m.center(c), kPatchVecDim));
  return std::sqrt(mind);
}

double bscore_norm(const PixelPatch& p, const BackgroundModel& m) {
  if (m.maxscore <= 0.0) throw std::runtime_error("bscore_norm: degenerate model");
  return std::clamp(bscore_unnormalized(p, m) / m.maxscore, 0.0, 1.0);
}

void save_background_model(const std::string& path, const BackgroundModel& m) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_background_model: cannot write '" + path + "'");
    out.write(reinterpret_cast<const char*>(m.centers.data()),
              static_cast<std::streamsize>(m.centers.size() * sizeof(float)));
  }
  json j;
  j["k"] = m.k;
  j["dim"] = kPatchVecDim;
  j["maxscore"] = m.maxscore;
  j["fit_seed"] = m.fit_seed;
  j["pool_size"] = m.pool_size;
  std::ofstream side(path + ".json");
  if (!side) throw std::runtime_error("save_background_model: cannot write sidecar for '" + path + "'");
  side << j.dump(2) << "\n";
}

BackgroundModel load_background_model(const std::string& path) {
  std::ifstream side(path + ".json");
  if (!side) throw std::runtime_error("load_background_model: missing sidecar '" + path + ".json'");
  json j;
  side >> j;
  BackgroundModel m;
  m.k = j.at("k").get<int>();
  if (j.at("dim").get<int>() != kPatchVecDim)
    throw std::runtime_error("load_background_model: dimension mismatch");
  m.maxscore = j.at("maxscore").get<double>();
  m.fit_seed = j.value("fit_seed", 0ull);
  m.pool_size = j.value("pool_size", 0ull);
  m.centers.resize(static_cast<size_t>(m.k) * kPatchVecDim);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_background_model: cannot open '" + path + "'");
  in.read(reinterpret_cast<char*>(m.centers.data()),
          static_cast<std::streamsize>(m.centers.size() * sizeof(float)));
  if (!in) throw std::runtime_error("load_background_model: truncated '" + path + "'");
  return m;
}

}  // namespace ps
