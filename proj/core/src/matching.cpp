#include "w2/matching.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace w2 {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// ==== exact square solver ===================================================

// Shortest-augmenting-path assignment with potentials, O(n^3). Exact minimum;
// tie handling among equal optima is unspecified here and canonicalized by
// the caller. The final potentials are dual-optimal: every reduced cost
// a(i,j) - u[i] - v[j] is >= 0 (up to rounding) and exactly the matched
// edges sit at zero, which is what the canonicalization below relies on.
std::vector<int> jv_square(const Eigen::MatrixXd& a, std::vector<double>& u_out,
                           std::vector<double>& v_out) {
    const int n = static_cast<int>(a.rows());
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), kInf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = -1;
            double delta = kInf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
    u_out.assign(u.begin() + 1, u.end());
    v_out.assign(v.begin() + 1, v.end());
    return row_to_col;
}

}  // namespace

// ==== cost terms ============================================================

double ambiguity_ratio(const Point2& pred, const Point2& pos,
                       const std::vector<Point2>& negatives) {
    if (negatives.empty()) return kInf;
    const double d_pos = l2_distance(pred, pos);
    if (d_pos == 0.0) return kInf;
    double d_neg = kInf;
    for (const Point2& k : negatives) d_neg = std::min(d_neg, l2_distance(pred, k));
    return d_neg / d_pos;
}

double repulsive_cost(double R, const RepulsiveForm& form, double d_pos,
                      double d_neg) {
    switch (form.variant) {
        case RepulsiveVariant::None:
            return 0.0;
        case RepulsiveVariant::ExpRatio:
            return std::isinf(R) ? 0.0 : std::exp(-R);
        case RepulsiveVariant::InverseNegDist:
            return std::isinf(d_neg) ? 0.0 : 1.0 / (d_neg + form.epsilon);
        case RepulsiveVariant::NormalizedPosDist:
            if (std::isinf(d_neg) || d_pos + d_neg == 0.0) return 0.0;
            return d_pos / (d_pos + d_neg);
        case RepulsiveVariant::HingeRatio:
            return std::isinf(R) ? 0.0 : std::max(0.0, 1.0 - R);
    }
    return 0.0;
}

double match_cost(const Prediction& pred, const Point2& pos,
                  const std::vector<Point2>& negatives, const CostWeights& w,
                  const RepulsiveForm& form) {
    const double d_pos = l2_distance(pred.point, pos);
    double d_neg = kInf;
    for (const Point2& k : negatives)
        d_neg = std::min(d_neg, l2_distance(pred.point, k));
    const double R = ambiguity_ratio(pred.point, pos, negatives);
    const double c_rep = repulsive_cost(R, form, d_pos, d_neg);
    return w.lambda_cls * (1.0 - pred.cls_score) +
           w.lambda_l1 * l1_distance(pred.point, pos) +
           w.lambda_rep * c_rep;
}

Eigen::MatrixXd build_cost_matrix(const std::vector<Prediction>& preds,
                                  const Scene& scene, const CostWeights& w,
                                  const RepulsiveForm& form) {
    Eigen::MatrixXd C(static_cast<Eigen::Index>(preds.size()),
                      static_cast<Eigen::Index>(scene.positives.size()));
    for (size_t i = 0; i < preds.size(); ++i) {
        // d_neg depends on the prediction alone; hoisting it out of the
        // column loop keeps the build linear in the negative count. Same
        // running-min order as match_cost, so every cell is bit-identical
        // to calling match_cost directly.
        double d_neg = kInf;
        for (const Point2& k : scene.negatives)
            d_neg = std::min(d_neg, l2_distance(preds[i].point, k));
        for (size_t j = 0; j < scene.positives.size(); ++j) {
            const Point2& pos = scene.positives[j];
            const double d_pos = l2_distance(preds[i].point, pos);
            const double R = (scene.negatives.empty() || d_pos == 0.0)
                                 ? kInf
                                 : d_neg / d_pos;
            const double c_rep = repulsive_cost(R, form, d_pos, d_neg);
            C(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                w.lambda_cls * (1.0 - preds[i].cls_score) +
                w.lambda_l1 * l1_distance(preds[i].point, pos) +
                w.lambda_rep * c_rep;
        }
    }
    return C;
}

// ==== assignment engine =====================================================

Assignment solve_assignment(const Eigen::MatrixXd& cost) {
    const int n = static_cast<int>(cost.rows());
    const int m = static_cast<int>(cost.cols());
    Assignment out;
    if (n == 0 || m == 0) return out;

    // Rectangular matrices are padded to square with a constant sentinel above
    // every real entry; padded pairs are stripped from the output. All padded
    // cells share one value, so padding never changes which real cells are
    // optimal, and totals are re-summed from real entries only.
    const int s = std::max(n, m);
    const double sentinel = 2.0 * cost.cwiseAbs().maxCoeff() + 1.0;
    Eigen::MatrixXd sq = Eigen::MatrixXd::Constant(s, s, sentinel);
    sq.topLeftCorner(n, m) = cost;

    std::vector<double> u, v;
    std::vector<int> mrow = jv_square(sq, u, v);

    double T = 0.0;
    for (int i = 0; i < n; ++i)
        if (mrow[i] < m) T += cost(i, mrow[i]);
    // Sentinel-scaled floor: potential arithmetic carries rounding noise
    // proportional to the matrix magnitude, and the matched edges themselves
    // must always pass the usability test below.
    const double eps = std::max(1e-9 * std::max(1.0, std::abs(T)),
                                1e-12 * sentinel);

    // Canonicalization: every minimal assignment uses only edges whose
    // reduced cost is zero under the optimal potentials, and any perfect
    // matching inside that edge set is minimal (the sentinel gap dwarfs the
    // tolerance, so real-pair cardinality cannot change either). Fixing rows
    // in order to their smallest column that still leaves the remaining rows
    // coverable yields the lexicographically smallest optimal pair sequence;
    // matching a row always lex-precedes skipping it, so real columns are
    // tried before the padded ones.
    std::vector<std::vector<int>> adj(static_cast<size_t>(s));
    for (int i = 0; i < s; ++i)
        for (int j = 0; j < s; ++j)
            if (sq(i, j) - u[static_cast<size_t>(i)] -
                    v[static_cast<size_t>(j)] <=
                eps)
                adj[static_cast<size_t>(i)].push_back(j);

    std::vector<int> mcol(static_cast<size_t>(s), -1);
    for (int i = 0; i < s; ++i) mcol[static_cast<size_t>(mrow[i])] = i;
    std::vector<char> row_done(static_cast<size_t>(s), 0);
    std::vector<char> col_done(static_cast<size_t>(s), 0);

    // Kuhn augmenting search over usable edges, rematching `row` among the
    // columns not yet fixed. Success keeps the invariant that the not-yet-
    // fixed rows always carry a perfect matching.
    std::vector<char> vis(static_cast<size_t>(s), 0);
    auto rematch = [&](auto&& self, int row) -> bool {
        for (int j : adj[static_cast<size_t>(row)]) {
            if (col_done[static_cast<size_t>(j)] || vis[static_cast<size_t>(j)])
                continue;
            vis[static_cast<size_t>(j)] = 1;
            const int r2 = mcol[static_cast<size_t>(j)];
            if (r2 == -1 || (!row_done[static_cast<size_t>(r2)] &&
                             self(self, r2))) {
                mrow[static_cast<size_t>(row)] = j;
                mcol[static_cast<size_t>(j)] = row;
                return true;
            }
        }
        return false;
    };

    for (int i = 0; i < s; ++i) {
        int chosen = -1;
        for (int j : adj[static_cast<size_t>(i)]) {
            if (col_done[static_cast<size_t>(j)]) continue;
            if (mrow[static_cast<size_t>(i)] == j) {
                chosen = j;
                break;
            }
            // Tentatively give j to row i and try to rematch its owner.
            const int owner = mcol[static_cast<size_t>(j)];
            const int jm = mrow[static_cast<size_t>(i)];
            mrow[static_cast<size_t>(i)] = j;
            mcol[static_cast<size_t>(j)] = i;
            mcol[static_cast<size_t>(jm)] = -1;
            row_done[static_cast<size_t>(i)] = 1;
            col_done[static_cast<size_t>(j)] = 1;
            std::fill(vis.begin(), vis.end(), 0);
            const bool ok = rematch(rematch, owner);
            row_done[static_cast<size_t>(i)] = 0;
            col_done[static_cast<size_t>(j)] = 0;
            if (ok) {
                chosen = j;
                break;
            }
            mrow[static_cast<size_t>(owner)] = j;
            mcol[static_cast<size_t>(j)] = owner;
            mrow[static_cast<size_t>(i)] = jm;
            mcol[static_cast<size_t>(jm)] = i;
        }
        if (chosen < 0)
            throw std::logic_error(
                "solve_assignment: matching invariant violated");
        row_done[static_cast<size_t>(i)] = 1;
        col_done[static_cast<size_t>(chosen)] = 1;
        if (i < n && chosen < m) out.pairs.emplace_back(i, chosen);
    }

    out.pair_costs.reserve(out.pairs.size());
    double total = 0.0;
    for (const auto& [pi, gj] : out.pairs) {
        const double c = cost(pi, gj);
        out.pair_costs.push_back(c);
        total += c;
    }
    out.total_cost = total;
    return out;
}

Assignment assign(const std::vector<Prediction>& preds, const Scene& scene,
                  const CostWeights& w, const RepulsiveForm& form) {
    if (preds.empty()) throw std::invalid_argument("assign: empty predictions");
    if (scene.positives.empty())
        throw std::invalid_argument("assign: empty positives");
    const Eigen::MatrixXd C = build_cost_matrix(preds, scene, w, form);
    Assignment a = solve_assignment(C);
    a.ambiguity_ratios.reserve(a.pairs.size());
    for (const auto& [pi, gj] : a.pairs)
        a.ambiguity_ratios.push_back(
            ambiguity_ratio(preds[static_cast<size_t>(pi)].point,
                            scene.positives[static_cast<size_t>(gj)],
                            scene.negatives));
    return a;
}

Assignment oracle_assign(const Eigen::MatrixXd& cost) {
    const int n = static_cast<int>(cost.rows());
    const int m = static_cast<int>(cost.cols());
    if (n > 8 || m > 8)
        throw std::invalid_argument("oracle_assign: dimension > 8");
    Assignment out;
    if (n == 0 || m == 0) return out;
    const int target = std::min(n, m);

    std::vector<std::pair<int, int>> cur, best;
    std::vector<char> col_used(m, 0);
    double best_total = kInf;

    // DFS in (row asc, col asc, skip last) order enumerates pair sequences in
    // strictly increasing lexicographic order; strict improvement keeps the
    // first optimum found, i.e. the lexicographically smallest.
    auto dfs = [&](auto&& self, int i, int matched, double total) -> void {
        if (i == n) {
            if (matched == target && total < best_total) {
                best_total = total;
                best = cur;
            }
            return;
        }
        if (n - i < target - matched) return;
        for (int j = 0; j < m; ++j) {
            if (col_used[j]) continue;
            col_used[j] = 1;
            cur.emplace_back(i, j);
            self(self, i + 1, matched + 1, total + cost(i, j));
            cur.pop_back();
            col_used[j] = 0;
        }
        if (n - i - 1 >= target - matched) self(self, i + 1, matched, total);
    };
    dfs(dfs, 0, 0, 0.0);

    out.pairs = best;
    double total = 0.0;
    for (const auto& [pi, gj] : out.pairs) {
        const double c = cost(pi, gj);
        out.pair_costs.push_back(c);
        total += c;
    }
    out.total_cost = total;
    return out;
}

std::string assignment_to_json_string(const Assignment& a) {
    nlohmann::json j;
    j["pairs"] = nlohmann::json::array();
    for (const auto& [pi, gj] : a.pairs)
        j["pairs"].push_back(nlohmann::json::array({pi, gj}));
    j["total_cost"] = a.total_cost;
    j["pair_costs"] = a.pair_costs;
    j["ambiguity_ratios"] = nlohmann::json::array();
    for (double r : a.ambiguity_ratios) {
        if (std::isinf(r))
            j["ambiguity_ratios"].push_back("inf");
        else
            j["ambiguity_ratios"].push_back(r);
    }
    return j.dump(2) + "\n";
}

}  // namespace w2
