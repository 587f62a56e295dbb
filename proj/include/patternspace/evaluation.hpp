#pragma once

#include "patternspace/discovery.hpp"
#include "patternspace/geometry.hpp"

#include <map>
#include <string>
#include <vector>

namespace ps {

struct ImageMatch {
  int tp = 0;
  int fp = 0;
  int fn = 0;  // unmatched ground truths
};

struct MatchResult {
  std::map<std::string, ImageMatch> per_image;
  double iou_thres = 0.5;
  int total_tp = 0;
  int total_fp = 0;
  int total_gt = 0;
};

// Greedy one-to-one matching in score order (best = lowest score first):
// each prediction claims the highest-IoU unclaimed ground truth when that
// IoU exceeds the threshold, else counts as a false positive.
MatchResult match(const std::vector<Detection>& preds,
                  const std::map<std::string, std::vector<Box>>& gts, double iou_thres);

// Percentage of images (with at least one ground truth) holding >= 1 TP.
double corloc(const MatchResult& m);

struct Prf1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

Prf1 prf1(const MatchResult& m);  // percentages; zero predictions -> all zero

struct SweepPoint {
  int max_predictions = 0;
  double corloc = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
};

struct SweepResult {
  std::vector<SweepPoint> points;  // m = 1..5
  SweepPoint best;                 // the point maximizing F1
};

// Sweeps the per-image prediction cap m over 1..5 and reports the metrics
// at the F1-maximizing cap. With corloc_top1 the CorLoc column is measured
// on rank-1 detections only.
SweepResult f1_sweep(const std::vector<Detection>& dets,
                     const std::map<std::string, std::vector<Box>>& gts, double iou_thres,
                     bool corloc_top1 = false);

struct RunAggregate {
  std::vector<SweepPoint> runs;
  SweepPoint mean;
  SweepPoint stddev;  // sample standard deviation (n-1)
};

RunAggregate aggregate_runs(const std::vector<SweepPoint>& runs);

// Table-shaped report (one row per evaluated mode) for human inspection.
std::string format_report_row(const std::string& modulation, bool post_obj, const RunAggregate& agg);
std::string report_header();

}  // namespace ps
