#pragma once

#include <string>
#include <utility>
#include <vector>

#include "w2/geometry.hpp"
#include "w2/scene.hpp"

namespace w2 {

struct MetricsReport {
    double mae = 0.0;
    double rmse = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    int tp = 0;
    int fp = 0;
    int fn = 0;
    double tau = 0.0;
};

/// MAE and RMSE over paired per-scene counts.
/// Throws std::invalid_argument on empty or mismatched inputs.
std::pair<double, double> counting_errors(const std::vector<int>& gt_counts,
                                          const std::vector<int>& pred_counts);

struct LocalizeResult {
    int tp = 0;
    int fp = 0;
    int fn = 0;
    std::vector<std::pair<int, int>> pairs; // (gt_index, pred_index)
};

/// Maximum-cardinality one-to-one matching over pairs with Euclidean
/// distance <= tau, minimum total distance as tie-break. TP = matched pairs,
/// FP = unmatched predictions, FN = unmatched ground truth. Empty sides are
/// allowed. Order-invariant and non-decreasing in tau.
LocalizeResult localize_match(const std::vector<Point2>& gt,
                              const std::vector<Point2>& preds, double tau);

struct Prf1 {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Standard formulas with fixed zero-denominator conventions: P = 1 when
/// there are no predictions, R = 1 when there is no ground truth, F1 = 0
/// when P + R = 0 (empty vs empty therefore scores all 1).
Prf1 prf1(int tp, int fp, int fn);

/// Counting + localization metrics for one ground-truth scene against one
/// prediction set (single-scene MAE/RMSE reduce to absolute count error).
MetricsReport evaluate_scene(const Scene& gt,
                             const std::vector<Prediction>& preds, double tau);

std::string metrics_report_to_json_string(const MetricsReport& r);
std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& id, const MetricsReport& r);

}  // namespace w2
