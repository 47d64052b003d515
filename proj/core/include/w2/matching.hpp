#pragma once

#include <Eigen/Core>
#include <string>
#include <utility>
#include <vector>

#include "w2/scene.hpp"

namespace w2 {

/// Weights of the three matching-cost terms: classification confidence,
/// L1 localization distance, repulsion towards non-target ground truth.
struct CostWeights {
    double lambda_cls = 5.0;
    double lambda_l1 = 1.0;
    double lambda_rep = 0.2;
};

enum class RepulsiveVariant {
    None,              // C_rep = 0
    ExpRatio,          // exp(-R)
    InverseNegDist,    // 1 / (d_neg + epsilon)
    NormalizedPosDist, // d_pos / (d_pos + d_neg)
    HingeRatio,        // max(0, 1 - R)
};

struct RepulsiveForm {
    RepulsiveVariant variant = RepulsiveVariant::ExpRatio;
    double epsilon = 1e-6; // used by InverseNegDist only

    static RepulsiveForm none() { return {RepulsiveVariant::None, 1e-6}; }
    static RepulsiveForm exp_ratio() { return {RepulsiveVariant::ExpRatio, 1e-6}; }
    static RepulsiveForm inverse_neg_dist(double eps = 1e-6) {
        return {RepulsiveVariant::InverseNegDist, eps};
    }
    static RepulsiveForm normalized_pos_dist() {
        return {RepulsiveVariant::NormalizedPosDist, 1e-6};
    }
    static RepulsiveForm hinge_ratio() { return {RepulsiveVariant::HingeRatio, 1e-6}; }
};

/// One-to-one partial matching between predictions and positives.
/// pairs[k] = (prediction_index, positive_index); total_cost is the sum of
/// pair_costs; ambiguity_ratios[k] is R for pair k (+infinity when no
/// negatives exist or the prediction sits exactly on its target).
struct Assignment {
    std::vector<std::pair<int, int>> pairs;
    double total_cost = 0.0;
    std::vector<double> pair_costs;
    std::vector<double> ambiguity_ratios;
};

/// R = min_k ||pred - neg_k||_2 / ||pred - pos||_2. +infinity when negatives
/// is empty or pred coincides with pos exactly. R < 1 marks a prediction
/// closer to a distractor than to its candidate target.
double ambiguity_ratio(const Point2& pred, const Point2& pos,
                       const std::vector<Point2>& negatives);

/// Repulsive cost term. d_pos and d_neg are Euclidean distances to the
/// candidate target and the nearest distractor (+infinity when none).
/// Ratio-based forms return 0 at R = +infinity; InverseNegDist and
/// NormalizedPosDist return 0 at d_neg = +infinity.
double repulsive_cost(double R, const RepulsiveForm& form, double d_pos,
                      double d_neg);

/// lambda_cls*(1 - cls_score) + lambda_l1*||pred - pos||_1 + lambda_rep*C_rep.
double match_cost(const Prediction& pred, const Point2& pos,
                  const std::vector<Point2>& negatives, const CostWeights& w,
                  const RepulsiveForm& form);

/// Full cost matrix, entry (i, j) = match_cost(preds[i], positives[j], ...).
Eigen::MatrixXd build_cost_matrix(const std::vector<Prediction>& preds,
                                  const Scene& scene, const CostWeights& w,
                                  const RepulsiveForm& form);

/// Minimal-total-cost one-to-one assignment over an n x m cost matrix.
/// Matches min(n, m) pairs; surplus rows stay unmatched. Among equal-cost
/// optima the lexicographically smallest pair sequence is returned, so the
/// result is deterministic given input order. ambiguity_ratios is left empty
/// (no geometry at this level).
Assignment solve_assignment(const Eigen::MatrixXd& cost);

/// Cost construction + solve + per-pair diagnostics for one scene.
/// Throws std::invalid_argument on empty predictions or empty positives.
Assignment assign(const std::vector<Prediction>& preds, const Scene& scene,
                  const CostWeights& w, const RepulsiveForm& form);

/// Brute-force exhaustive minimum over all injective mappings; the testing
/// oracle. Throws std::invalid_argument when either side exceeds 8.
Assignment oracle_assign(const Eigen::MatrixXd& cost);

/// {"pairs": ..., "total_cost": ..., "pair_costs": ..., "ambiguity_ratios":
/// ...}; +infinity serialized as the string "inf".
std::string assignment_to_json_string(const Assignment& a);

}  // namespace w2
