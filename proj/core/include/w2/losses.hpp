#pragma once

#include <Eigen/Core>
#include <utility>
#include <vector>

#include "w2/matching.hpp"
#include "w2/scene.hpp"

namespace w2 {

struct LossConfig {
    double lambda_cls = 5.0;
    double lambda_loc = 1.0;
    double gamma = 2.0;
    double alpha = 0.25;
    // Positive queries label class + attribute tokens by default; set to
    // label every token of the expression instead.
    bool label_all_tokens = false;
};

/// grad_scores is d(total)/d(score), K x N; grad_points is d(total)/d(point)
/// for matched predictions, one row per assignment pair, columns (x, y).
struct LossReport {
    double total = 0.0;
    double cls = 0.0;
    double loc = 0.0;
    int n_pos = 0;
    Eigen::MatrixXd grad_scores;
    Eigen::MatrixXd grad_points;
};

/// Focal loss for one score/label pair. Scores are clamped to
/// [1e-7, 1 - 1e-7] before logarithms so saturated inputs stay finite.
/// y=1: -alpha*(1-s)^gamma*ln(s); y=0: -(1-alpha)*s^gamma*ln(1-s).
double focal_term(double s, int y, double gamma, double alpha);

/// Analytic d(focal_term)/ds, evaluated at the clamped score.
double focal_term_grad(double s, int y, double gamma, double alpha);

/// Mean focal loss over all K x N query-token pairs, normalized by the
/// number of matched pairs. Matched queries carry label 1 on their
/// corresponding tokens, every other pair carries label 0. Returns the loss
/// and its analytic gradient w.r.t. every score.
/// Throws std::invalid_argument when the assignment is empty.
std::pair<double, Eigen::MatrixXd> classification_loss(
    const Eigen::MatrixXd& scores, const Assignment& assignment,
    const TokenSet& text, const LossConfig& cfg);

/// Mean L1 distance over matched pairs. Gradient rows follow assignment pair
/// order; the subgradient of |d| at d = 0 is 0.
/// Throws std::invalid_argument when the assignment is empty.
std::pair<double, Eigen::MatrixXd> localization_loss(
    const std::vector<Prediction>& preds, const std::vector<Point2>& positives,
    const Assignment& assignment);

/// total = lambda_cls*cls + lambda_loc*loc, with gradients scaled to match.
LossReport total_loss(const Eigen::MatrixXd& scores,
                      const std::vector<Prediction>& preds,
                      const std::vector<Point2>& positives,
                      const Assignment& assignment, const TokenSet& text,
                      const LossConfig& cfg);

}  // namespace w2
