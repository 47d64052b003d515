#include "w2/metrics.hpp"

#include <json.hpp>

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "w2/matching.hpp"

namespace w2 {

std::pair<double, double> counting_errors(const std::vector<int>& gt_counts,
                                          const std::vector<int>& pred_counts) {
    if (gt_counts.empty())
        throw std::invalid_argument("counting_errors: empty input");
    if (gt_counts.size() != pred_counts.size())
        throw std::invalid_argument("counting_errors: length mismatch");
    const double n = static_cast<double>(gt_counts.size());
    double abs_sum = 0.0, sq_sum = 0.0;
    for (size_t i = 0; i < gt_counts.size(); ++i) {
        const double d = static_cast<double>(gt_counts[i] - pred_counts[i]);
        abs_sum += std::abs(d);
        sq_sum += d * d;
    }
    return {abs_sum / n, std::sqrt(sq_sum / n)};
}

LocalizeResult localize_match(const std::vector<Point2>& gt,
                              const std::vector<Point2>& preds, double tau) {
    LocalizeResult r;
    const int n = static_cast<int>(gt.size());
    const int m = static_cast<int>(preds.size());
    if (n == 0 || m == 0) {
        r.fp = m;
        r.fn = n;
        return r;
    }
    // Infeasible pairs (distance > tau) get a cost so large that the solver
    // always prefers one more feasible pair over any distance saving: any
    // feasible matching sums to at most min(n,m)*tau < big. The structural
    // min(n,m)-pair matching therefore maximizes feasible cardinality first,
    // then minimizes total distance among those.
    const double big = static_cast<double>(std::min(n, m)) * tau + 1.0;
    Eigen::MatrixXd cost(n, m);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            const double d = l2_distance(gt[static_cast<size_t>(i)],
                                         preds[static_cast<size_t>(j)]);
            cost(i, j) = d <= tau ? d : big;
        }
    }
    const Assignment a = solve_assignment(cost);
    for (const auto& [gi, pj] : a.pairs) {
        if (l2_distance(gt[static_cast<size_t>(gi)],
                        preds[static_cast<size_t>(pj)]) <= tau)
            r.pairs.emplace_back(gi, pj);
    }
    r.tp = static_cast<int>(r.pairs.size());
    r.fp = m - r.tp;
    r.fn = n - r.tp;
    return r;
}

Prf1 prf1(int tp, int fp, int fn) {
    Prf1 r;
    r.precision = (tp + fp == 0) ? 1.0
                                 : static_cast<double>(tp) /
                                       static_cast<double>(tp + fp);
    r.recall = (tp + fn == 0) ? 1.0
                              : static_cast<double>(tp) /
                                    static_cast<double>(tp + fn);
    r.f1 = (r.precision + r.recall == 0.0)
               ? 0.0
               : 2.0 * r.precision * r.recall / (r.precision + r.recall);
    return r;
}

MetricsReport evaluate_scene(const Scene& gt,
                             const std::vector<Prediction>& preds, double tau) {
    MetricsReport rep;
    rep.tau = tau;
    const std::vector<int> gc = {static_cast<int>(gt.positives.size())};
    const std::vector<int> pc = {static_cast<int>(preds.size())};
    std::tie(rep.mae, rep.rmse) = counting_errors(gc, pc);

    std::vector<Point2> pred_points;
    pred_points.reserve(preds.size());
    for (const Prediction& p : preds) pred_points.push_back(p.point);
    const LocalizeResult lr = localize_match(gt.positives, pred_points, tau);
    rep.tp = lr.tp;
    rep.fp = lr.fp;
    rep.fn = lr.fn;
    const Prf1 p = prf1(lr.tp, lr.fp, lr.fn);
    rep.precision = p.precision;
    rep.recall = p.recall;
    rep.f1 = p.f1;
    return rep;
}

std::string metrics_report_to_json_string(const MetricsReport& r) {
    nlohmann::json j;
    j["mae"] = r.mae;
    j["rmse"] = r.rmse;
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["f1"] = r.f1;
    j["tp"] = r.tp;
    j["fp"] = r.fp;
    j["fn"] = r.fn;
    j["tau"] = r.tau;
    return j.dump(2) + "\n";
}

std::string metrics_csv_header() {
    return "id,mae,rmse,precision,recall,f1,tp,fp,fn,tau\n";
}

std::string metrics_csv_row(const std::string& id, const MetricsReport& r) {
    std::ostringstream os;
    os.precision(17);
    os << id << "," << r.mae << "," << r.rmse << "," << r.precision << ","
       << r.recall << "," << r.f1 << "," << r.tp << "," << r.fp << ","
       << r.fn << "," << r.tau << "\n";
    return os.str();
}

}  // namespace w2
