#include "w2/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace w2 {

namespace {

constexpr double kScoreFloor = 1e-7;
constexpr double kScoreCeil = 1.0 - 1e-7;

double clamp_score(double s) { return std::clamp(s, kScoreFloor, kScoreCeil); }

// Label layout for one matched query: 1 on its corresponding tokens.
bool token_labeled(const TokenSet& text, int j, bool all_tokens) {
    if (all_tokens) return true;
    return j == text.cls_index ||
           text.attribute_mask[static_cast<size_t>(j)] == 1;
}

}  // namespace

double focal_term(double s, int y, double gamma, double alpha) {
    s = clamp_score(s);
    if (y == 1) return -alpha * std::pow(1.0 - s, gamma) * std::log(s);
    return -(1.0 - alpha) * std::pow(s, gamma) * std::log(1.0 - s);
}

double focal_term_grad(double s, int y, double gamma, double alpha) {
    s = clamp_score(s);
    if (y == 1) {
        if (gamma == 0.0) return -alpha / s;
        return alpha * gamma * std::pow(1.0 - s, gamma - 1.0) * std::log(s) -
               alpha * std::pow(1.0 - s, gamma) / s;
    }
    if (gamma == 0.0) return (1.0 - alpha) / (1.0 - s);
    return -(1.0 - alpha) * gamma * std::pow(s, gamma - 1.0) *
               std::log(1.0 - s) +
           (1.0 - alpha) * std::pow(s, gamma) / (1.0 - s);
}

std::pair<double, Eigen::MatrixXd> classification_loss(
    const Eigen::MatrixXd& scores, const Assignment& assignment,
    const TokenSet& text, const LossConfig& cfg) {
    if (assignment.pairs.empty())
        throw std::invalid_argument("classification_loss: no positive matches");
    const Eigen::Index K = scores.rows();
    const Eigen::Index N = scores.cols();
    const double n_pos = static_cast<double>(assignment.pairs.size());

    std::vector<char> matched(static_cast<size_t>(K), 0);
    for (const auto& [pi, gj] : assignment.pairs)
        matched[static_cast<size_t>(pi)] = 1;

    double sum = 0.0;
    Eigen::MatrixXd grad(K, N);
    for (Eigen::Index i = 0; i < K; ++i) {
        for (Eigen::Index j = 0; j < N; ++j) {
            const int y =
                (matched[static_cast<size_t>(i)] &&
                 token_labeled(text, static_cast<int>(j), cfg.label_all_tokens))
                    ? 1
                    : 0;
            sum += focal_term(scores(i, j), y, cfg.gamma, cfg.alpha);
            grad(i, j) =
                focal_term_grad(scores(i, j), y, cfg.gamma, cfg.alpha) / n_pos;
        }
    }
    return {sum / n_pos, std::move(grad)};
}

std::pair<double, Eigen::MatrixXd> localization_loss(
    const std::vector<Prediction>& preds, const std::vector<Point2>& positives,
    const Assignment& assignment) {
    if (assignment.pairs.empty())
        throw std::invalid_argument("localization_loss: no positive matches");
    const double n_pos = static_cast<double>(assignment.pairs.size());
    // Subgradient of |d| at d = 0 is 0; elsewhere sign(d).
    auto subgrad = [](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); };

    double sum = 0.0;
    Eigen::MatrixXd grad(static_cast<Eigen::Index>(assignment.pairs.size()), 2);
    for (size_t k = 0; k < assignment.pairs.size(); ++k) {
        const auto& [pi, gj] = assignment.pairs[k];
        const Point2& p = preds[static_cast<size_t>(pi)].point;
        const Point2& q = positives[static_cast<size_t>(gj)];
        sum += l1_distance(p, q);
        grad(static_cast<Eigen::Index>(k), 0) = subgrad(p.x - q.x) / n_pos;
        grad(static_cast<Eigen::Index>(k), 1) = subgrad(p.y - q.y) / n_pos;
    }
    return {sum / n_pos, std::move(grad)};
}

LossReport total_loss(const Eigen::MatrixXd& scores,
                      const std::vector<Prediction>& preds,
                      const std::vector<Point2>& positives,
                      const Assignment& assignment, const TokenSet& text,
                      const LossConfig& cfg) {
    auto [cls, cls_grad] = classification_loss(scores, assignment, text, cfg);
    auto [loc, loc_grad] = localization_loss(preds, positives, assignment);
    LossReport r;
    r.cls = cls;
    r.loc = loc;
    r.total = cfg.lambda_cls * cls + cfg.lambda_loc * loc;
    r.n_pos = static_cast<int>(assignment.pairs.size());
    r.grad_scores = cfg.lambda_cls * cls_grad;
    r.grad_points = cfg.lambda_loc * loc_grad;
    return r;
}

}  // namespace w2
