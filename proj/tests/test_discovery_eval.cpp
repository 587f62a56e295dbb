#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "patternspace/discovery.hpp"
#include "patternspace/evaluation.hpp"
#include "patternspace/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

using namespace ps;

namespace {

PoolEntry entry(const std::string& img, int x, int y, int w, int h, int idx, double l, double hs,
                double bs) {
  PoolEntry e;
  e.spec.image_id = img;
  e.spec.x = x;
  e.spec.y = y;
  e.spec.w = w;
  e.spec.h = h;
  e.sample_index = idx;
  e.lscore = l;
  e.hscore_raw = hs;
  e.bscore_norm = bs;
  return e;
}

// independent IoU for the oracle paths
double oracle_iou(const Box& a, const Box& b) {
  const double x1 = std::max(a.x, b.x), y1 = std::max(a.y, b.y);
  const double x2 = std::min(a.x + a.w, b.x + b.w), y2 = std::min(a.y + a.h, b.y + b.h);
  const double inter = std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1);
  return inter / (a.w * a.h + b.w * b.h - inter);
}

// reference NMS: repeatedly take the lowest-score unsuppressed candidate
std::vector<int> oracle_nms(const std::vector<Candidate>& cands, double thres, int max_keep) {
  std::vector<bool> used(cands.size(), false);
  std::vector<int> kept;
  while (static_cast<int>(kept.size()) < max_keep) {
    int best = -1;
    for (size_t i = 0; i < cands.size(); ++i) {
      if (used[i]) continue;
      if (best < 0 || cands[i].score < cands[best].score) best = static_cast<int>(i);
    }
    if (best < 0) break;
    used[best] = true;
    kept.push_back(best);
    for (size_t j = 0; j < cands.size(); ++j) {
      if (used[j]) continue;
      if (oracle_iou(cands[best].entry->spec.box(), cands[j].entry->spec.box()) > thres)
        used[j] = true;
    }
  }
  return kept;
}

}  // namespace

TEST_CASE("po_score arithmetic and reductions") {
  CHECK(po_score(5.0, 1.0, 1.0, 5.0, 5.0) == doctest::Approx(5.0));
  CHECK(po_score(5.0, 0.0, 0.0, 5.0, 5.0) == doctest::Approx(15.0));
  // zero alphas reduce to the bare lscore
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const double l = rng.uniform(0, 10);
    CHECK(po_score(l, rng.uniform(), rng.uniform(), 0.0, 0.0) == doctest::Approx(l));
  }
}

TEST_CASE("select_candidates returns the 20 lowest, ascending, index tie-break") {
  PatternPool pool;
  pool.mean_lscore = 1.0;
  for (int i = 0; i < 200; ++i)
    pool.entries.push_back(entry("a", i % 50, 0, 10, 30, i, 200 - i, 1.0, 1.0));
  for (int i = 0; i < 50; ++i)
    pool.entries.push_back(entry("b", i, 0, 10, 30, i, 5.0, 1.0, 1.0));

  DiscoveryConfig cfg;
  const auto cands = select_candidates(pool, "a", cfg);
  REQUIRE(cands.size() == 20);
  for (size_t i = 1; i < cands.size(); ++i) CHECK(cands[i - 1].score <= cands[i].score);
  for (const auto& c : cands) CHECK(c.entry->spec.image_id == "a");
  // lowest lscore entries are the last-sampled ones here
  CHECK(cands[0].entry->sample_index == 199);

  // all-equal scores fall back to sampling order
  const auto tie = select_candidates(pool, "b", cfg);
  REQUIRE(tie.size() == 20);
  for (int i = 0; i < 20; ++i) CHECK(tie[i].entry->sample_index == i);
}

TEST_CASE("nms basic rules") {
  PatternPool pool;
  pool.entries.push_back(entry("a", 0, 0, 10, 10, 0, 0, 0, 0));
  pool.entries.push_back(entry("a", 2, 0, 10, 10, 1, 0, 0, 0));
  std::vector<Candidate> cands = {{&pool.entries[0], 1.0}, {&pool.entries[1], 2.0}};
  // IoU = 80/120 = 0.667 > 0.5: only the better (lower) score survives
  const auto kept = nms(cands, 0.5, 5);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].score == doctest::Approx(1.0));
  CHECK(kept[0].rank == 1);

  // five disjoint boxes all survive
  PatternPool pool2;
  for (int i = 0; i < 5; ++i) pool2.entries.push_back(entry("a", 20 * i, 0, 10, 10, i, 0, 0, 0));
  std::vector<Candidate> c2;
  for (auto& e : pool2.entries) c2.push_back({&e, double(e.sample_index)});
  CHECK(nms(c2, 0.5, 5).size() == 5);
  CHECK(nms(c2, 0.5, 3).size() == 3);  // cap honored
}

TEST_CASE("nms equals the brute-force reference on random candidate sets") {
  Rng rng(999);
  for (int trial = 0; trial < 500; ++trial) {
    PatternPool pool;
    const int n = 20;
    for (int i = 0; i < n; ++i)
      pool.entries.push_back(entry("a", rng.uniform_index(60), rng.uniform_index(60),
                                   5 + rng.uniform_index(30), 5 + rng.uniform_index(30), i,
                                   rng.uniform(0, 10), 0, 0));
    std::vector<Candidate> cands;
    for (auto& e : pool.entries) cands.push_back({&e, e.lscore});
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.score < b.score; });

    const auto kept = nms(cands, 0.5, 5);
    const auto want = oracle_nms(cands, 0.5, 5);
    REQUIRE(kept.size() == want.size());
    for (size_t i = 0; i < kept.size(); ++i) {
      CHECK(kept[i].score == doctest::Approx(cands[want[i]].score));
      CHECK(kept[i].box.x == doctest::Approx(cands[want[i]].entry->spec.box().x));
      CHECK(kept[i].rank == static_cast<int>(i) + 1);
    }
    // antichain property: no two kept boxes overlap above the threshold
    for (size_t i = 0; i < kept.size(); ++i)
      for (size_t j = i + 1; j < kept.size(); ++j)
        CHECK(iou(kept[i].box, kept[j].box) <= 0.5);
  }
}

TEST_CASE("nearest_neighbors: exact duplicate ranks first, brute-force equality") {
  PatternPool pool;
  Rng rng(17);
  for (int i = 0; i < 120; ++i) {
    PoolEntry e = entry("img" + std::to_string(i % 6), i, 0, 8, 24, i, 0, 0, 0);
    for (int d = 0; d < kZDim; ++d) e.z_mean[d] = static_cast<float>(rng.normal());
    pool.entries.push_back(e);
  }
  // plant an exact duplicate of entry 0 in a different image
  pool.entries[7].z_mean = pool.entries[0].z_mean;

  const auto hits = nearest_neighbors(pool, pool.entries[0], 10);
  REQUIRE(hits.size() == 10);
  CHECK(hits[0].entry == &pool.entries[7]);
  CHECK(hits[0].distance == doctest::Approx(0.0));
  for (const auto& h : hits) CHECK(h.entry->spec.image_id != "img0");

  // brute force scan
  std::vector<std::pair<double, const PoolEntry*>> all;
  for (const auto& e : pool.entries) {
    if (&e == &pool.entries[0] || e.spec.image_id == "img0") continue;
    double acc = 0;
    for (int d = 0; d < kZDim; ++d) {
      const double diff = static_cast<double>(e.z_mean[d]) - pool.entries[0].z_mean[d];
      acc += diff * diff;
    }
    all.push_back({std::sqrt(acc), &e});
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (int i = 0; i < 10; ++i) CHECK(hits[i].entry == all[i].second);

  // k larger than eligible entries returns everything, sorted
  const auto all_hits = nearest_neighbors(pool, pool.entries[0], 10000);
  CHECK(all_hits.size() == all.size());
}

TEST_CASE("detections jsonl round trip") {
  std::vector<Detection> dets = {{"a", Box{1, 2, 3, 4}, 0.5, 1, 2.0}, {"b", Box{5, 6, 7, 8}, 1.5, 2, 1.0}};
  const std::string path = "/tmp/ps_test_dets.jsonl";
  save_detections(path, dets);
  const auto got = load_detections(path);
  REQUIRE(got.size() == 2);
  CHECK(got[0].image_id == "a");
  CHECK(got[1].rank == 2);
  CHECK(got[0].scale_factor == doctest::Approx(2.0));
  std::filesystem::remove(path);
}

// ---- evaluation ----

namespace {

Detection det(const std::string& img, double x, double y, double w, double h, double score, int rank) {
  return {img, Box{x, y, w, h}, score, rank, 1.0};
}

// independent matching oracle: same greedy protocol, separate code
void oracle_match(const std::vector<Detection>& preds, const std::map<std::string, std::vector<Box>>& gts,
                  double thres, int& tp, int& fp, int& fn,
                  std::map<std::string, bool>* localized = nullptr) {
  tp = fp = fn = 0;
  int total_gt = 0;
  for (const auto& [id, boxes] : gts) total_gt += static_cast<int>(boxes.size());
  std::map<std::string, std::vector<bool>> claimed;
  for (const auto& [id, boxes] : gts) claimed[id].assign(boxes.size(), false);

  std::map<std::string, std::vector<Detection>> by_img;
  for (const auto& d : preds) by_img[d.image_id].push_back(d);
  for (auto& [id, dets] : by_img) {
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.score < b.score; });
    for (const auto& d : dets) {
      double best = thres;
      int besti = -1;
      auto it = gts.find(id);
      if (it != gts.end()) {
        for (size_t g = 0; g < it->second.size(); ++g) {
          if (claimed[id][g]) continue;
          const double v = oracle_iou(d.box, it->second[g]);
          if (v > best) {
            best = v;
            besti = static_cast<int>(g);
          }
        }
      }
      if (besti >= 0) {
        claimed[id][besti] = true;
        ++tp;
        if (localized) (*localized)[id] = true;
      } else {
        ++fp;
      }
    }
  }
  fn = total_gt - tp;
}

}  // namespace

TEST_CASE("match: single prediction above threshold") {
  std::map<std::string, std::vector<Box>> gts = {{"a", {Box{0, 0, 10, 10}}}};
  const auto m = match({det("a", 1, 0, 10, 10, 0.1, 1)}, gts, 0.5);
  CHECK(m.total_tp == 1);
  CHECK(m.total_fp == 0);
  CHECK(m.per_image.at("a").fn == 0);
}

TEST_CASE("match: two predictions on one ground truth gives 1 TP + 1 FP") {
  std::map<std::string, std::vector<Box>> gts = {{"a", {Box{0, 0, 10, 10}}}};
  const auto m = match({det("a", 0, 0, 10, 10, 0.1, 1), det("a", 1, 0, 10, 10, 0.2, 2)}, gts, 0.5);
  CHECK(m.total_tp == 1);
  CHECK(m.total_fp == 1);
}

TEST_CASE("match/corloc/prf1 equal oracles on random instances, identities hold") {
  Rng rng(314);
  for (int trial = 0; trial < 200; ++trial) {
    std::map<std::string, std::vector<Box>> gts;
    std::vector<Detection> preds;
    const int n_img = 1 + rng.uniform_index(4);
    for (int i = 0; i < n_img; ++i) {
      const std::string id = "img" + std::to_string(i);
      const int n_gt = rng.uniform_index(6);
      for (int g = 0; g < n_gt; ++g)
        gts[id].push_back(Box{rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(4, 30), rng.uniform(4, 30)});
      if (gts[id].empty()) gts[id].push_back(Box{0, 0, 5, 5});
      const int n_pred = rng.uniform_index(11);
      for (int p = 0; p < n_pred; ++p)
        preds.push_back(det(id, rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(4, 30),
                            rng.uniform(4, 30), rng.uniform(0, 10), p + 1));
    }
    const auto m = match(preds, gts, 0.5);
    int tp, fp, fn;
    oracle_match(preds, gts, 0.5, tp, fp, fn);
    CHECK(m.total_tp == tp);
    CHECK(m.total_fp == fp);

    // TP + FN = total gts; TP + FP = total preds
    int sum_fn = 0;
    for (const auto& [id, im] : m.per_image) sum_fn += im.fn;
    CHECK(m.total_tp + sum_fn == m.total_gt);
    CHECK(m.total_tp + m.total_fp == static_cast<int>(preds.size()));

    const Prf1 p = prf1(m);
    const double want_prec = preds.empty() ? 0.0 : 100.0 * tp / preds.size();
    const double want_rec = 100.0 * tp / m.total_gt;
    CHECK(p.precision == doctest::Approx(want_prec));
    CHECK(p.recall == doctest::Approx(want_rec));

    // monotonicity in the threshold: lowering 0.5 -> 0.4 never loses TPs
    const auto m04 = match(preds, gts, 0.4);
    CHECK(m04.total_tp >= m.total_tp);
  }
}

TEST_CASE("corloc arithmetic") {
  std::map<std::string, std::vector<Box>> gts = {
      {"a", {Box{0, 0, 10, 10}}}, {"b", {Box{0, 0, 10, 10}}}, {"c", {Box{0, 0, 10, 10}}}};
  const auto m = match({det("a", 0, 0, 10, 10, 0.1, 1), det("b", 0, 0, 10, 10, 0.1, 1),
                        det("c", 30, 30, 10, 10, 0.1, 1)},
                       gts, 0.5);
  CHECK(corloc(m) == doctest::Approx(100.0 * 2 / 3));
  const auto none = match({}, gts, 0.5);
  CHECK(corloc(none) == doctest::Approx(0.0));
  const auto all = match({det("a", 0, 0, 10, 10, 0.1, 1), det("b", 0, 0, 10, 10, 0.1, 1),
                          det("c", 0, 0, 10, 10, 0.1, 1)},
                         gts, 0.5);
  CHECK(corloc(all) == doctest::Approx(100.0));
}

TEST_CASE("prf1 corner cases") {
  std::map<std::string, std::vector<Box>> gts = {{"a", {Box{0, 0, 10, 10}, Box{20, 20, 10, 10},
                                                        Box{40, 40, 10, 10}, Box{60, 60, 10, 10}}}};
  // TP=2 FP=2
  const auto m = match({det("a", 0, 0, 10, 10, 0.1, 1), det("a", 20, 20, 10, 10, 0.2, 2),
                        det("a", 90, 90, 5, 5, 0.3, 3), det("a", 80, 0, 5, 5, 0.4, 4)},
                       gts, 0.5);
  const Prf1 p = prf1(m);
  CHECK(p.precision == doctest::Approx(50.0));
  CHECK(p.recall == doctest::Approx(50.0));
  CHECK(p.f1 == doctest::Approx(50.0));

  const Prf1 zero = prf1(match({}, gts, 0.5));
  CHECK(zero.precision == 0.0);
  CHECK(zero.recall == 0.0);
  CHECK(zero.f1 == 0.0);

  const auto perfect = match({det("a", 0, 0, 10, 10, 0.1, 1), det("a", 20, 20, 10, 10, 0.1, 2),
                              det("a", 40, 40, 10, 10, 0.1, 3), det("a", 60, 60, 10, 10, 0.1, 4)},
                             gts, 0.5);
  const Prf1 pp = prf1(perfect);
  CHECK(pp.precision == doctest::Approx(100.0));
  CHECK(pp.recall == doctest::Approx(100.0));
  CHECK(pp.f1 == doctest::Approx(100.0));
}

TEST_CASE("f1_sweep: perfect rank-1 boxes select m=1 at F1=100") {
  std::map<std::string, std::vector<Box>> gts;
  std::vector<Detection> dets;
  for (int i = 0; i < 6; ++i) {
    const std::string id = "img" + std::to_string(i);
    gts[id] = {Box{5, 5, 20, 20}};
    dets.push_back(det(id, 5, 5, 20, 20, 0.1, 1));
    dets.push_back(det(id, 40, 40, 10, 10, 0.9, 2));  // junk at rank 2
  }
  const SweepResult s = f1_sweep(dets, gts, 0.5);
  CHECK(s.best.max_predictions == 1);
  CHECK(s.best.f1 == doctest::Approx(100.0));
  CHECK(s.best.corloc == doctest::Approx(100.0));
  // reported F1 is the max over the five points
  for (const auto& pt : s.points) CHECK(s.best.f1 >= pt.f1);
}

TEST_CASE("f1_sweep picks the harmonic-mean crossover") {
  // one image, 3 ground truths; ranks 1..5 hit gt1, gt2, miss, gt3, miss
  std::map<std::string, std::vector<Box>> gts = {
      {"a", {Box{0, 0, 10, 10}, Box{20, 0, 10, 10}, Box{40, 0, 10, 10}}}};
  std::vector<Detection> dets = {det("a", 0, 0, 10, 10, 0.1, 1),  det("a", 20, 0, 10, 10, 0.2, 2),
                                 det("a", 70, 70, 5, 5, 0.3, 3),  det("a", 40, 0, 10, 10, 0.4, 4),
                                 det("a", 80, 80, 5, 5, 0.5, 5)};
  const SweepResult s = f1_sweep(dets, gts, 0.5);
  // brute-force the five points independently
  std::vector<double> f1s;
  for (int m = 1; m <= 5; ++m) {
    std::vector<Detection> trunc;
    for (const auto& d : dets)
      if (d.rank <= m) trunc.push_back(d);
    int tp, fp, fn;
    oracle_match(trunc, gts, 0.5, tp, fp, fn);
    const double prec = trunc.empty() ? 0 : 100.0 * tp / trunc.size();
    const double rec = 100.0 * tp / 3.0;
    f1s.push_back(prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0);
  }
  const int want_m = static_cast<int>(std::max_element(f1s.begin(), f1s.end()) - f1s.begin()) + 1;
  CHECK(s.best.max_predictions == want_m);
  CHECK(s.best.f1 == doctest::Approx(*std::max_element(f1s.begin(), f1s.end())));
  // single-m data reduces the sweep to prf1
  CHECK(s.points[0].f1 == doctest::Approx(f1s[0]));
}

TEST_CASE("corloc >= recall on single-gt-per-image fixtures") {
  Rng rng(271);
  for (int trial = 0; trial < 50; ++trial) {
    std::map<std::string, std::vector<Box>> gts;
    std::vector<Detection> dets;
    for (int i = 0; i < 8; ++i) {
      const std::string id = "img" + std::to_string(i);
      gts[id] = {Box{10, 10, 20, 20}};
      const int n_pred = 1 + rng.uniform_index(4);
      for (int p = 0; p < n_pred; ++p)
        dets.push_back(det(id, rng.uniform(0, 40), rng.uniform(0, 40), 15 + rng.uniform(0, 15),
                           15 + rng.uniform(0, 15), rng.uniform(0, 5), p + 1));
    }
    const auto m = match(dets, gts, 0.5);
    CHECK(corloc(m) >= prf1(m).recall - 1e-9);
  }
}

TEST_CASE("aggregate_runs mean and sample std") {
  std::vector<SweepPoint> runs(2);
  runs[0].f1 = 40.0;
  runs[1].f1 = 60.0;
  runs[0].corloc = 50.0;
  runs[1].corloc = 50.0;
  const RunAggregate agg = aggregate_runs(runs);
  CHECK(agg.mean.f1 == doctest::Approx(50.0));
  CHECK(agg.stddev.f1 == doctest::Approx(14.1421356).epsilon(1e-4));
  CHECK(agg.stddev.corloc == doctest::Approx(0.0));

  // identical runs -> zero std
  const RunAggregate same = aggregate_runs({runs[0], runs[0], runs[0]});
  CHECK(same.stddev.f1 == doctest::Approx(0.0));
}
