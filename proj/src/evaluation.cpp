#include "patternspace/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

namespace ps {

MatchResult match(const std::vector<Detection>& preds,
                  const std::map<std::string, std::vector<Box>>& gts, double iou_thres) {
  MatchResult res;
  res.iou_thres = iou_thres;

  for (const auto& [id, boxes] : gts) {
    res.per_image[id] = ImageMatch{};
    res.total_gt += static_cast<int>(boxes.size());
  }

  std::map<std::string, std::vector<const Detection*>> by_image;
  for (const auto& d : preds) by_image[d.image_id].push_back(&d);

  for (auto& [id, dets] : by_image) {
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection* a, const Detection* b) { return a->score < b->score; });
    auto git = gts.find(id);
    const std::vector<Box> empty;
    const std::vector<Box>& boxes = git == gts.end() ? empty : git->second;
    std::vector<bool> claimed(boxes.size(), false);
    ImageMatch& im = res.per_image[id];
    for (const Detection* d : dets) {
      int best = -1;
      double best_iou = iou_thres;
      for (size_t g = 0; g < boxes.size(); ++g) {
        if (claimed[g]) continue;
        const double v = iou(d->box, boxes[g]);
        if (v > best_iou) {
          best_iou = v;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0) {
        claimed[best] = true;
        im.tp++;
      } else {
        im.fp++;
      }
    }
  }

  for (auto& [id, im] : res.per_image) {
    auto git = gts.find(id);
    const int gt_count = git == gts.end() ? 0 : static_cast<int>(git->second.size());
    im.fn = gt_count - im.tp;
    res.total_tp += im.tp;
    res.total_fp += im.fp;
  }
  return res;
}

double corloc(const MatchResult& m) {
  int with_gt = 0, localized = 0;
  for (const auto& [id, im] : m.per_image) {
    if (im.tp + im.fn == 0) continue;  // no ground truth in this image
    ++with_gt;
    if (im.tp > 0) ++localized;
  }
  if (with_gt == 0) return 0.0;
  return 100.0 * localized / with_gt;
}

Prf1 prf1(const MatchResult& m) {
  Prf1 r;
  const int preds = m.total_tp + m.total_fp;
  r.precision = preds > 0 ? 100.0 * m.total_tp / preds : 0.0;
  r.recall = m.total_gt > 0 ? 100.0 * m.total_tp / m.total_gt : 0.0;
  r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                                        : 0.0;
  return r;
}

SweepResult f1_sweep(const std::vector<Detection>& dets,
                     const std::map<std::string, std::vector<Box>>& gts, double iou_thres,
                     bool corloc_top1) {
  SweepResult res;
  for (int m = 1; m <= 5; ++m) {
    std::vector<Detection> truncated;
    for (const auto& d : dets)
      if (d.rank <= m) truncated.push_back(d);
    const MatchResult mr = match(truncated, gts, iou_thres);
    const Prf1 p = prf1(mr);
    SweepPoint pt;
    pt.max_predictions = m;
    pt.recall = p.recall;
    pt.precision = p.precision;
    pt.f1 = p.f1;
    if (corloc_top1) {
      std::vector<Detection> top1;
      for (const auto& d : dets)
        if (d.rank == 1) top1.push_back(d);
      pt.corloc = corloc(match(top1, gts, iou_thres));
    } else {
      pt.corloc = corloc(mr);
    }
    res.points.push_back(pt);
  }
  res.best = res.points[0];
  for (const auto& pt : res.points)
    if (pt.f1 > res.best.f1) res.best = pt;
  return res;
}

RunAggregate aggregate_runs(const std::vector<SweepPoint>& runs) {
  RunAggregate agg;
  agg.runs = runs;
  const double n = static_cast<double>(runs.size());
  if (runs.empty()) return agg;

  auto accum = [&](auto get) {
    double mean = 0.0;
    for (const auto& r : runs) mean += get(r);
    mean /= n;
    double var = 0.0;
    if (runs.size() > 1) {
      for (const auto& r : runs) var += (get(r) - mean) * (get(r) - mean);
      var /= (n - 1.0);
    }
    return std::pair<double, double>(mean, std::sqrt(var));
  };

  std::tie(agg.mean.corloc, agg.stddev.corloc) = accum([](const SweepPoint& p) { return p.corloc; });
  std::tie(agg.mean.recall, agg.stddev.recall) = accum([](const SweepPoint& p) { return p.recall; });
  std::tie(agg.mean.precision, agg.stddev.precision) =
      accum([](const SweepPoint& p) { return p.precision; });
  std::tie(agg.mean.f1, agg.stddev.f1) = accum([](const SweepPoint& p) { return p.f1; });
  return agg;
}

std::string report_header() {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-10s %-8s %-16s %-16s %-16s %-16s\n", "Modulation", "Post-Obj",
                "CorLoc", "Recall", "Precision", "F1");
  return buf;
}

std::string format_report_row(const std::string& modulation, bool post_obj, const RunAggregate& agg) {
  auto cell = [](double mean, double std) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%6.2f +-%5.2f", mean, std);
    return std::string(buf);
  };
  char buf[240];
  std::snprintf(buf, sizeof(buf), "%-10s %-8s %-16s %-16s %-16s %-16s\n", modulation.c_str(),
                post_obj ? "yes" : "x", cell(agg.mean.corloc, agg.stddev.corloc).c_str(),
                cell(agg.mean.recall, agg.stddev.recall).c_str(),
                cell(agg.mean.precision, agg.stddev.precision).c_str(),
                cell(agg.mean.f1, agg.stddev.f1).c_str());
  return buf;
}

}  // namespace ps
