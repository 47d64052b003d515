// w2: command-line front end. One verb per capability: match, eval, decode,
// gradcheck, lab ambiguity, lab ablation.
//
// Exit codes: 0 success, 1 domain error (bad data, infeasible generation,
// failed check), 2 usage error.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "w2/decoder.hpp"
#include "w2/io.hpp"
#include "w2/losses.hpp"
#include "w2/matching.hpp"
#include "w2/metrics.hpp"
#include "w2/rng.hpp"
#include "w2/synthlab.hpp"

namespace {

struct MatchOpts {
    std::string scene_path, preds_path, out;
    double lambda_cls = 5.0, lambda_l1 = 1.0, lambda_rep = 0.2;
    std::string form = "exp";
};

struct EvalOpts {
    std::string gt_path, preds_path, out;
    double tau = 0.0;
};

struct DecodeOpts {
    std::string scene_path, out, dump_trajectories;
    int queries = 16, layers = 6, channels = 0;
    unsigned long long seed = 0;
    double cls_threshold = 0.25, attr_threshold = 0.35;
};

struct GradcheckOpts {
    unsigned long long seed = 0;
    int trials = 100;
};

struct LabOpts {
    std::string out;
    int seeds = 100, jobs = 1;
    unsigned long long seed = 0;
    double lambda_cls = 5.0, lambda_l1 = 1.0, lambda_rep = 0.2;
    std::string form = "exp";
};

w2::RepulsiveForm parse_form(const std::string& name) {
    static const std::map<std::string, w2::RepulsiveVariant> forms = {
        {"none", w2::RepulsiveVariant::None},
        {"exp", w2::RepulsiveVariant::ExpRatio},
        {"invneg", w2::RepulsiveVariant::InverseNegDist},
        {"normpos", w2::RepulsiveVariant::NormalizedPosDist},
        {"hinge", w2::RepulsiveVariant::HingeRatio},
    };
    return {forms.at(name), 1e-6};
}

// Primary output goes to --out atomically, or to stdout when --out is empty.
void emit(const std::string& out, const std::string& content) {
    if (out.empty())
        std::cout << content;
    else
        w2::atomic_write(out, content);
}

int run_match(const MatchOpts& o) {
    const w2::Scene scene = w2::load_scene(o.scene_path);
    const std::vector<w2::Prediction> preds =
        w2::load_predictions(o.preds_path);
    const w2::CostWeights w{o.lambda_cls, o.lambda_l1, o.lambda_rep};
    const w2::Assignment a = w2::assign(preds, scene, w, parse_form(o.form));
    emit(o.out, w2::assignment_to_json_string(a));
    return 0;
}

int run_eval(const EvalOpts& o) {
    const w2::Scene gt = w2::load_scene(o.gt_path);
    const std::vector<w2::Prediction> preds = w2::load_predictions(o.preds_path);
    const w2::MetricsReport r = w2::evaluate_scene(gt, preds, o.tau);
    emit(o.out, w2::metrics_report_to_json_string(r));
    return 0;
}

int run_decode(const DecodeOpts& o) {
    const w2::Scene scene = w2::load_scene(o.scene_path);
    w2::DecoderConfig cfg;
    cfg.num_queries = o.queries;
    cfg.num_layers = o.layers;
    cfg.channels = o.channels > 0 ? o.channels : scene.grid.channels;
    cfg.seed = o.seed;
    const w2::DecoderTrace trace = w2::forward(scene, cfg);
    const std::vector<w2::Prediction> kept = w2::filter_predictions(
        trace.predictions, o.cls_threshold, o.attr_threshold);
    if (!o.dump_trajectories.empty())
        w2::atomic_write(o.dump_trajectories, w2::trace_to_json_string(trace));
    std::cerr << "decode: kept " << kept.size() << " of "
              << trace.predictions.size() << " queries\n";
    emit(o.out, w2::predictions_to_json_string(kept));
    return 0;
}

// Central finite differences against the analytic gradients, reported per
// operation. Deviations are measured relative to the larger gradient
// magnitude; a 1e-3 floor only guards the division for near-zero entries.
int run_gradcheck(const GradcheckOpts& o) {
    constexpr double kH = 1e-5;
    constexpr double kRelTol = 1e-4;
    // skip |d| kinks that the central difference stencil can straddle
    constexpr double kKink = 10 * kH;
    double max_cls = 0.0, max_loc = 0.0;

    for (int trial = 0; trial < o.trials; ++trial) {
        std::mt19937_64 g(
            w2::mix_seed(o.seed, 0xC0DE0000ULL + static_cast<unsigned>(trial)));
        std::uniform_int_distribution<int> kq(2, 6), kn(1, 4);
        std::uniform_real_distribution<double> us(0.05, 0.95), up(0.0, 1.0);
        const int K = kq(g), N = kn(g);

        w2::TokenSet text;
        text.tokens = Eigen::MatrixXd::Zero(N, 2);
        text.cls_index = 0;
        text.attribute_mask.assign(static_cast<size_t>(N), 0);
        for (int n = 1; n < N; ++n)
            text.attribute_mask[static_cast<size_t>(n)] =
                static_cast<int>(g() % 2);

        Eigen::MatrixXd scores(K, N);
        for (int i = 0; i < K; ++i)
            for (int n = 0; n < N; ++n) scores(i, n) = us(g);

        std::uniform_int_distribution<int> kp(1, K);
        const int P = kp(g);
        std::vector<int> qidx(static_cast<size_t>(K));
        std::iota(qidx.begin(), qidx.end(), 0);
        std::shuffle(qidx.begin(), qidx.end(), g);
        w2::Assignment a;
        for (int k = 0; k < P; ++k)
            a.pairs.emplace_back(qidx[static_cast<size_t>(k)], k);

        std::vector<w2::Prediction> preds(static_cast<size_t>(K));
        for (auto& p : preds) p.point = {up(g), up(g)};
        std::vector<w2::Point2> positives(static_cast<size_t>(P));
        for (auto& q : positives) q = {up(g), up(g)};

        w2::LossConfig cfg;

        const auto [cls0, cls_grad] =
            w2::classification_loss(scores, a, text, cfg);
        (void)cls0;
        for (int i = 0; i < K; ++i) {
            for (int n = 0; n < N; ++n) {
                Eigen::MatrixXd sp = scores, sm = scores;
                sp(i, n) += kH;
                sm(i, n) -= kH;
                const double fd =
                    (w2::classification_loss(sp, a, text, cfg).first -
                     w2::classification_loss(sm, a, text, cfg).first) /
                    (2.0 * kH);
                const double an = cls_grad(i, n);
                const double rel = std::abs(an - fd) /
                                   std::max({std::abs(an), std::abs(fd), 1e-3});
                max_cls = std::max(max_cls, rel);
            }
        }

        const auto [loc0, loc_grad] =
            w2::localization_loss(preds, positives, a);
        (void)loc0;
        for (size_t k = 0; k < a.pairs.size(); ++k) {
            const auto& [pi, gj] = a.pairs[k];
            for (int axis = 0; axis < 2; ++axis) {
                const w2::Point2& pp = preds[static_cast<size_t>(pi)].point;
                const w2::Point2& qq = positives[static_cast<size_t>(gj)];
                const double diff = axis == 0 ? pp.x - qq.x : pp.y - qq.y;
                if (std::abs(diff) < kKink) continue; // L1 kink: skip
                auto bump = [&](double h) {
                    auto v = preds;
                    auto& pt = v[static_cast<size_t>(pi)].point;
                    (axis == 0 ? pt.x : pt.y) += h;
                    return w2::localization_loss(v, positives, a).first;
                };
                const double fd = (bump(kH) - bump(-kH)) / (2.0 * kH);
                const double an = loc_grad(static_cast<Eigen::Index>(k), axis);
                const double rel = std::abs(an - fd) /
                                   std::max({std::abs(an), std::abs(fd), 1e-3});
                max_loc = std::max(max_loc, rel);
            }
        }
    }

    const bool cls_ok = max_cls < kRelTol;
    const bool loc_ok = max_loc < kRelTol;
    std::printf("classification_loss max_rel_err %.3e %s\n", max_cls,
                cls_ok ? "PASS" : "FAIL");
    std::printf("localization_loss   max_rel_err %.3e %s\n", max_loc,
                loc_ok ? "PASS" : "FAIL");
    std::printf("gradcheck: %s\n", (cls_ok && loc_ok) ? "PASS" : "FAIL");
    return (cls_ok && loc_ok) ? 0 : 1;
}

int run_lab_ambiguity(const LabOpts& o) {
    w2::GeneratorConfig gen;
    gen.seed = o.seed;
    const w2::CostWeights base{o.lambda_cls, o.lambda_l1, 0.0};
    const w2::CostWeights ssm{o.lambda_cls, o.lambda_l1, o.lambda_rep};
    const std::vector<w2::MatcherSpec> matchers = {
        {"baseline", base, w2::RepulsiveForm::none()},
        {"ssm-" + o.form, ssm, parse_form(o.form)},
    };
    const w2::AmbiguityResult r =
        w2::ambiguity_experiment(gen, matchers, o.seeds, o.jobs);
    emit(o.out, w2::ambiguity_csv(gen, r));
    for (size_t m = 0; m < r.matcher_names.size(); ++m)
        std::cerr << r.matcher_names[m] << ": mean rate " << r.mean_rate[m]
                  << " (stddev " << r.stddev_rate[m] << ")\n";
    return 0;
}

int run_lab_ablation(const LabOpts& o) {
    w2::GeneratorConfig gen;
    gen.seed = o.seed;
    const w2::CostWeights w{o.lambda_cls, o.lambda_l1, o.lambda_rep};
    const w2::AblationTable t =
        w2::repulsion_ablation(gen, w, o.seeds, o.jobs);
    emit(o.out, w2::ablation_csv(gen, t));
    if (!t.note.empty()) std::cerr << t.note << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"W2 dual-query matching and decoding lab"};
    app.require_subcommand(1);

    MatchOpts mo;
    CLI::App* match = app.add_subcommand(
        "match", "One-to-one assignment of predictions to positives");
    match->add_option("--scene", mo.scene_path, "Scene JSON file")->required();
    match->add_option("--preds", mo.preds_path, "Prediction JSON file")
        ->required();
    match->add_option("--out", mo.out, "Output file (default: stdout)");
    match->add_option("--lambda-cls", mo.lambda_cls,
                      "Classification cost weight");
    match->add_option("--lambda-l1", mo.lambda_l1, "L1 cost weight");
    match->add_option("--lambda-rep", mo.lambda_rep, "Repulsive cost weight");
    match->add_option("--form", mo.form, "Repulsive form")
        ->check(CLI::IsMember({"none", "exp", "invneg", "normpos", "hinge"}));

    EvalOpts eo;
    CLI::App* eval = app.add_subcommand(
        "eval", "Counting and localization metrics against ground truth");
    eval->add_option("--gt", eo.gt_path, "Ground-truth scene JSON")->required();
    eval->add_option("--preds", eo.preds_path, "Prediction JSON file")
        ->required();
    eval->add_option("--out", eo.out, "Output file (default: stdout)");
    eval->add_option("--tau", eo.tau, "Match distance threshold")->required();

    DecodeOpts dopts;
    CLI::App* decode = app.add_subcommand(
        "decode", "Decoder forward pass with threshold filtering");
    decode->add_option("--scene", dopts.scene_path, "Scene JSON file")
        ->required();
    decode->add_option("--out", dopts.out, "Output file (default: stdout)");
    decode->add_option("--seed", dopts.seed, "Weight seed");
    decode->add_option("--queries", dopts.queries, "Query count K");
    decode->add_option("--layers", dopts.layers, "Decoder layer count");
    decode->add_option("--channels", dopts.channels,
                       "Channel count (default: from scene grid)");
    decode->add_option("--cls-threshold", dopts.cls_threshold,
                       "Class-token score threshold");
    decode->add_option("--attr-threshold", dopts.attr_threshold,
                       "Attribute-token score threshold");
    decode->add_option("--dump-trajectories", dopts.dump_trajectories,
                       "Write per-layer reference-point trajectories here");

    GradcheckOpts go;
    CLI::App* gradcheck = app.add_subcommand(
        "gradcheck", "Finite-difference validation of loss gradients");
    gradcheck->add_option("--seed", go.seed, "Base seed");
    gradcheck->add_option("--seeds", go.trials, "Number of random instances");

    CLI::App* lab = app.add_subcommand("lab", "Synthetic-scene experiments");
    lab->require_subcommand(1);
    LabOpts lo;
    CLI::App* amb = lab->add_subcommand(
        "ambiguity", "Matching ambiguity: baseline vs repulsive matching");
    CLI::App* abl = lab->add_subcommand(
        "ablation", "Compare all repulsive-cost formulations");
    for (CLI::App* sub : {amb, abl}) {
        sub->add_option("--out", lo.out, "Output CSV (default: stdout)");
        sub->add_option("--seeds", lo.seeds, "Number of trials");
        sub->add_option("--seed", lo.seed, "Base seed");
        sub->add_option("--jobs", lo.jobs, "Worker threads");
        sub->add_option("--lambda-cls", lo.lambda_cls,
                        "Classification cost weight");
        sub->add_option("--lambda-l1", lo.lambda_l1, "L1 cost weight");
        sub->add_option("--lambda-rep", lo.lambda_rep, "Repulsive cost weight");
    }
    amb->add_option("--form", lo.form, "Repulsive form for the SSM column")
        ->check(CLI::IsMember({"none", "exp", "invneg", "normpos", "hinge"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*match) return run_match(mo);
        if (*eval) return run_eval(eo);
        if (*decode) return run_decode(dopts);
        if (*gradcheck) return run_gradcheck(go);
        if (*amb) return run_lab_ambiguity(lo);
        if (*abl) return run_lab_ablation(lo);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
