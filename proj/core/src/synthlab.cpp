#include "w2/synthlab.hpp"

#include <json.hpp>

#include <atomic>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "w2/rng.hpp"

namespace w2 {

namespace {

constexpr unsigned long long kPlaceStream = 0x706c616365ULL;
constexpr unsigned long long kNoiseStream = 0x6e6f697365ULL;
constexpr unsigned long long kPredStream = 0x70726564ULL;

int nearest_cell_coord(double v, int extent) {
    const int c = static_cast<int>(v * extent);
    return std::min(std::max(c, 0), extent - 1);
}

}  // namespace

std::pair<Scene, std::vector<Point2>> generate_scene(
    const GeneratorConfig& cfg) {
    if (cfg.n_pos < 1) throw std::runtime_error("generate_scene: n_pos < 1");
    if (cfg.n_neg < 0) throw std::runtime_error("generate_scene: n_neg < 0");
    if (cfg.channels < 3)
        throw std::runtime_error(
            "generate_scene: need >= 3 channels for class + 2 attribute "
            "signatures");
    if (cfg.min_separation <= 0.0)
        throw std::runtime_error("generate_scene: min_separation must be > 0");

    std::mt19937_64 g(mix_seed(cfg.seed, kPlaceStream));
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    const int total = cfg.n_pos + cfg.n_neg;
    std::vector<Point2> pts;
    pts.reserve(static_cast<size_t>(total));
    constexpr int kCap = 10000;
    for (int t = 0; t < total; ++t) {
        bool placed = false;
        for (int attempt = 0; attempt < kCap && !placed; ++attempt) {
            const Point2 p{uni(g), uni(g)};
            bool ok = true;
            for (const Point2& q : pts) {
                if (l2_distance(p, q) < cfg.min_separation) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                pts.push_back(p);
                placed = true;
            }
        }
        if (!placed)
            throw std::runtime_error(
                "generate_scene: placement infeasible within iteration cap");
    }

    Scene s;
    s.id = "synth-" + std::to_string(cfg.seed);
    s.grid.height = cfg.grid_height;
    s.grid.width = cfg.grid_width;
    s.grid.channels = cfg.channels;
    s.grid.data.assign(static_cast<size_t>(cfg.grid_height) *
                           static_cast<size_t>(cfg.grid_width) *
                           static_cast<size_t>(cfg.channels),
                       0.0);

    s.positives.assign(pts.begin(), pts.begin() + cfg.n_pos);
    s.negatives.assign(pts.begin() + cfg.n_pos, pts.end());

    // Signatures are orthogonal unit vectors in channel space: channel 0 the
    // shared class signature, channel 1 the target-subclass attribute,
    // channel 2 the distractor-subclass attribute. Class evidence sits at
    // the annotation point, attribute evidence displaced by attr_offset.
    std::vector<Point2> attr_sites;
    attr_sites.reserve(static_cast<size_t>(cfg.n_pos));
    for (int i = 0; i < total; ++i) {
        const Point2& p = pts[static_cast<size_t>(i)];
        const int cy = nearest_cell_coord(p.y, cfg.grid_height);
        const int cx = nearest_cell_coord(p.x, cfg.grid_width);
        s.grid.at(cy, cx, 0) += 1.0;

        const Point2 site = clamp_unit(
            {p.x + cfg.attr_offset.x, p.y + cfg.attr_offset.y});
        const int sy = nearest_cell_coord(site.y, cfg.grid_height);
        const int sx = nearest_cell_coord(site.x, cfg.grid_width);
        const bool positive = i < cfg.n_pos;
        s.grid.at(sy, sx, positive ? 1 : 2) += 1.0;
        if (positive) attr_sites.push_back(site);
    }

    s.text.tokens = Eigen::MatrixXd::Zero(2, cfg.channels);
    s.text.tokens(0, 0) = 1.0; // class token
    s.text.tokens(1, 1) = 1.0; // target-attribute token
    s.text.attribute_mask = {0, 1};
    s.text.cls_index = 0;
    return {std::move(s), std::move(attr_sites)};
}

std::vector<Prediction> perturb_predictions(const Scene& scene,
                                            double noise_sigma,
                                            unsigned long long seed) {
    std::mt19937_64 g(mix_seed(seed, kNoiseStream));
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_real_distribution<double> score(0.5, 1.0);
    std::vector<Prediction> preds;
    preds.reserve(scene.positives.size());
    for (const Point2& p : scene.positives) {
        const double dx = noise_sigma * n01(g);
        const double dy = noise_sigma * n01(g);
        Prediction pr;
        pr.point = clamp_unit({p.x + dx, p.y + dy});
        pr.cls_score = score(g);
        pr.attr_score = pr.cls_score;
        preds.push_back(pr);
    }
    return preds;
}

AmbiguityResult ambiguity_experiment(const GeneratorConfig& gen,
                                     const std::vector<MatcherSpec>& matchers,
                                     int n_seeds, int jobs) {
    if (n_seeds < 1)
        throw std::runtime_error("ambiguity_experiment: n_seeds < 1");
    if (matchers.empty())
        throw std::runtime_error("ambiguity_experiment: no matchers");

    AmbiguityResult r;
    r.matcher_names.reserve(matchers.size());
    for (const MatcherSpec& m : matchers) r.matcher_names.push_back(m.name);
    r.rates.assign(matchers.size(),
                   std::vector<double>(static_cast<size_t>(n_seeds), 0.0));

    // Trials are independent; each writes only its own column, so any thread
    // may take any trial without changing the result.
    const int threads =
        std::max(1, std::min(jobs, n_seeds));
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));

    auto run_trial = [&](int t) {
        GeneratorConfig c = gen;
        c.seed = mix_seed(gen.seed, static_cast<unsigned long long>(t));
        auto [scene, sites] = generate_scene(c);
        (void)sites;
        const std::vector<Prediction> preds = perturb_predictions(
            scene, gen.noise_sigma, mix_seed(c.seed, kPredStream));
        for (size_t m = 0; m < matchers.size(); ++m) {
            const Assignment a =
                assign(preds, scene, matchers[m].weights, matchers[m].form);
            int ambiguous = 0;
            for (double R : a.ambiguity_ratios)
                if (R < 1.0) ++ambiguous;
            r.rates[m][static_cast<size_t>(t)] =
                a.pairs.empty() ? 0.0
                                : static_cast<double>(ambiguous) /
                                      static_cast<double>(a.pairs.size());
        }
    };

    auto worker = [&](size_t w) {
        try {
            for (int t; (t = next.fetch_add(1)) < n_seeds;) run_trial(t);
        } catch (...) {
            errors[w] = std::current_exception();
        }
    };
    if (threads == 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(threads));
        for (int w = 0; w < threads; ++w)
            pool.emplace_back(worker, static_cast<size_t>(w));
        for (std::thread& th : pool) th.join();
    }
    for (const std::exception_ptr& e : errors)
        if (e) std::rethrow_exception(e);

    r.mean_rate.resize(matchers.size());
    r.stddev_rate.resize(matchers.size());
    for (size_t m = 0; m < matchers.size(); ++m) {
        double mean = 0.0;
        for (double v : r.rates[m]) mean += v;
        mean /= static_cast<double>(n_seeds);
        double var = 0.0;
        for (double v : r.rates[m]) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n_seeds);
        r.mean_rate[m] = mean;
        r.stddev_rate[m] = std::sqrt(var);
    }
    return r;
}

AblationTable repulsion_ablation(const GeneratorConfig& gen,
                                 const CostWeights& weights, int n_seeds,
                                 int jobs) {
    const std::vector<MatcherSpec> matchers = {
        {"none", weights, RepulsiveForm::none()},
        {"exp", weights, RepulsiveForm::exp_ratio()},
        {"invneg", weights, RepulsiveForm::inverse_neg_dist()},
        {"normpos", weights, RepulsiveForm::normalized_pos_dist()},
        {"hinge", weights, RepulsiveForm::hinge_ratio()},
    };
    const AmbiguityResult r =
        ambiguity_experiment(gen, matchers, n_seeds, jobs);

    AblationTable t;
    for (size_t m = 0; m < matchers.size(); ++m)
        t.rows.push_back({r.matcher_names[m], r.mean_rate[m],
                          r.stddev_rate[m]});
    const double exp_mean = r.mean_rate[1];
    std::ostringstream note;
    for (size_t m = 0; m < matchers.size(); ++m) {
        if (m == 1) continue;
        if (r.mean_rate[m] < exp_mean) {
            if (note.tellp() > 0) note << "; ";
            note << "deviation: " << r.matcher_names[m] << " mean rate "
                 << r.mean_rate[m] << " is below exp mean rate " << exp_mean;
        }
    }
    t.note = note.str();
    return t;
}

std::vector<double> trajectory_attr_distance(
    const DecoderTrace& trace, const std::vector<Point2>& attribute_sites) {
    if (attribute_sites.empty())
        throw std::invalid_argument("trajectory_attr_distance: no sites");
    std::vector<double> out;
    out.reserve(trace.snapshots.size());
    for (const QueryState& s : trace.snapshots) {
        double sum = 0.0;
        for (const Point2& p : s.w2s_points) {
            double best = std::numeric_limits<double>::infinity();
            for (const Point2& a : attribute_sites)
                best = std::min(best, l2_distance(p, a));
            sum += best;
        }
        out.push_back(s.w2s_points.empty()
                          ? 0.0
                          : sum / static_cast<double>(s.w2s_points.size()));
    }
    return out;
}

// ==== emission ==============================================================

std::string generator_config_to_json_string(const GeneratorConfig& cfg) {
    nlohmann::json j;
    j["n_pos"] = cfg.n_pos;
    j["n_neg"] = cfg.n_neg;
    j["min_separation"] = cfg.min_separation;
    j["attr_offset"] = nlohmann::json::array(
        {cfg.attr_offset.x, cfg.attr_offset.y});
    j["noise_sigma"] = cfg.noise_sigma;
    j["grid_height"] = cfg.grid_height;
    j["grid_width"] = cfg.grid_width;
    j["channels"] = cfg.channels;
    j["seed"] = cfg.seed;
    return j.dump();
}

std::string ambiguity_csv(const GeneratorConfig& cfg,
                          const AmbiguityResult& r) {
    std::ostringstream os;
    os.precision(17);
    os << "# config " << generator_config_to_json_string(cfg) << "\n";
    os << "seed,matcher,rate\n";
    const size_t trials = r.rates.empty() ? 0 : r.rates[0].size();
    for (size_t t = 0; t < trials; ++t)
        for (size_t m = 0; m < r.matcher_names.size(); ++m)
            os << t << "," << r.matcher_names[m] << "," << r.rates[m][t]
               << "\n";
    return os.str();
}

std::string ablation_csv(const GeneratorConfig& cfg, const AblationTable& t) {
    std::ostringstream os;
    os.precision(17);
    os << "# config " << generator_config_to_json_string(cfg) << "\n";
    if (!t.note.empty()) os << "# " << t.note << "\n";
    os << "form,mean_rate,stddev\n";
    for (const AblationRow& row : t.rows)
        os << row.form << "," << row.mean_rate << "," << row.stddev << "\n";
    return os.str();
}

}  // namespace w2
