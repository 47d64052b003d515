#include "w2/decoder.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "w2/rng.hpp"

namespace w2 {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Cosine of two channel vectors; zero-norm inputs score 0.
double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.dot(b) / (na * nb);
}

void softmax_rows(Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double mx = m.row(i).maxCoeff();
        m.row(i) = (m.row(i).array() - mx).exp();
        m.row(i) /= m.row(i).sum();
    }
}

// ==== seeded parameter draws ================================================

Eigen::MatrixXd draw_matrix(std::mt19937_64& g, Eigen::Index rows,
                            Eigen::Index cols, double sigma) {
    std::normal_distribution<double> dist(0.0, sigma);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(g);
    return m;
}

Linear draw_linear(std::mt19937_64& g, int in, int out, double scale = 1.0) {
    Linear lin;
    lin.W = draw_matrix(g, out, in, scale / std::sqrt(static_cast<double>(in)));
    lin.b = Eigen::VectorXd::Zero(out);
    return lin;
}

Ffn draw_ffn(std::mt19937_64& g, int c) {
    Ffn f;
    f.hidden = draw_linear(g, c, 2 * c);
    f.out = draw_linear(g, 2 * c, c);
    return f;
}

StreamLayerWeights draw_stream(std::mt19937_64& g, const DecoderConfig& cfg) {
    const int c = cfg.channels;
    StreamLayerWeights s;
    s.cross.q = draw_linear(g, c, c);
    s.cross.k = draw_linear(g, c, c);
    s.cross.v = draw_linear(g, c, c);
    s.cross.o = draw_linear(g, c, c);
    // Small offset scale keeps sampling near the reference point; small loc
    // scale keeps per-layer reference drift incremental.
    s.deform.offsets =
        draw_linear(g, c, cfg.num_heads * cfg.num_sampling_points * 2, 0.1);
    s.deform.weights =
        draw_linear(g, c, cfg.num_heads * cfg.num_sampling_points);
    s.deform.out = draw_linear(g, c, c);
    s.refine = draw_ffn(g, c);
    s.loc = draw_linear(g, c, 2, 0.05);
    return s;
}

void check_config(const DecoderConfig& cfg) {
    // num_layers == 0 is legal: predictions read straight off the
    // initialization reference points.
    if (cfg.num_queries < 1 || cfg.channels < 1 || cfg.num_layers < 0 ||
        cfg.num_heads < 1 || cfg.num_sampling_points < 1)
        throw std::invalid_argument("decoder config: bad counts");
    if (cfg.channels % cfg.num_heads != 0)
        throw std::invalid_argument(
            "decoder config: channels not divisible by heads");
}

Eigen::VectorXd cell_feature(const FeatureGrid& grid, int cell) {
    const int y = cell / grid.width;
    const int x = cell % grid.width;
    Eigen::VectorXd f(grid.channels);
    for (int c = 0; c < grid.channels; ++c) f(c) = grid.at(y, x, c);
    return f;
}

}  // namespace

DecoderWeights make_decoder_weights(const DecoderConfig& cfg) {
    check_config(cfg);
    std::mt19937_64 g(mix_seed(cfg.seed, 0x77656967687473ULL));
    DecoderWeights w;
    w.query_content_init =
        draw_matrix(g, cfg.num_queries, cfg.channels, 1.0);
    w.layers.reserve(static_cast<size_t>(cfg.num_layers));
    for (int l = 0; l < cfg.num_layers; ++l) {
        LayerWeights lw;
        lw.w2c = draw_stream(g, cfg);
        lw.w2s = draw_stream(g, cfg);
        lw.fuse = draw_ffn(g, cfg.channels);
        lw.ind = draw_ffn(g, cfg.channels);
        w.layers.push_back(std::move(lw));
    }
    return w;
}

Eigen::MatrixXd apply_linear(const Linear& lin, const Eigen::MatrixXd& x) {
    return (x * lin.W.transpose()).rowwise() + lin.b.transpose();
}

Eigen::MatrixXd apply_ffn(const Ffn& ffn, const Eigen::MatrixXd& x) {
    const Eigen::MatrixXd h = apply_linear(ffn.hidden, x).cwiseMax(0.0);
    return apply_linear(ffn.out, h);
}

// ==== init ==================================================================

QueryState init_queries(const Scene& scene, const DecoderConfig& cfg,
                        const DecoderWeights& w) {
    check_config(cfg);
    const FeatureGrid& grid = scene.grid;
    const int cells = grid.cells();
    if (cells < cfg.num_queries)
        throw std::invalid_argument("init_queries: grid smaller than K");
    if (grid.channels != cfg.channels)
        throw std::invalid_argument(
            "init_queries: grid channels disagree with config channels");

    std::vector<double> sim(static_cast<size_t>(cells));
    for (int cell = 0; cell < cells; ++cell) {
        const Eigen::VectorXd f = cell_feature(grid, cell);
        double best = -std::numeric_limits<double>::infinity();
        for (Eigen::Index n = 0; n < scene.text.tokens.rows(); ++n)
            best = std::max(
                best, cosine(f, scene.text.tokens.row(n).transpose()));
        sim[static_cast<size_t>(cell)] = best;
    }
    std::vector<int> order(static_cast<size_t>(cells));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double sa = sim[static_cast<size_t>(a)];
        const double sb = sim[static_cast<size_t>(b)];
        if (sa != sb) return sa > sb;
        return a < b; // similarity tie: lower cell index wins
    });

    QueryState st;
    st.layer = 0;
    st.w2c_content = w.query_content_init;
    st.w2c_points.reserve(static_cast<size_t>(cfg.num_queries));
    for (int k = 0; k < cfg.num_queries; ++k) {
        const int cell = order[static_cast<size_t>(k)];
        const int y = cell / grid.width;
        const int x = cell % grid.width;
        st.w2c_points.push_back({(x + 0.5) / grid.width,
                                 (y + 0.5) / grid.height});
    }
    // The attribute stream starts as an exact duplicate of the counting
    // stream; the two diverge only through masked attention and updates.
    st.w2s_content = st.w2c_content;
    st.w2s_points = st.w2c_points;
    return st;
}

// ==== attention =============================================================

Eigen::MatrixXd text_cross_attention(const Eigen::MatrixXd& queries,
                                     const TokenSet& text, bool masked,
                                     const CrossAttnWeights& w, int num_heads) {
    const Eigen::Index K = queries.rows();
    const Eigen::Index C = queries.cols();
    const Eigen::Index dh = C / num_heads;

    Eigen::MatrixXd toks = text.tokens;
    if (masked) {
        for (Eigen::Index n = 0; n < toks.rows(); ++n)
            if (text.attribute_mask[static_cast<size_t>(n)] == 0)
                toks.row(n).setZero();
    }
    const Eigen::MatrixXd Q = apply_linear(w.q, queries);
    const Eigen::MatrixXd Km = apply_linear(w.k, toks);
    const Eigen::MatrixXd V = apply_linear(w.v, toks);

    Eigen::MatrixXd mixed(K, C);
    for (int h = 0; h < num_heads; ++h) {
        const Eigen::Index c0 = h * dh;
        Eigen::MatrixXd att = Q.middleCols(c0, dh) *
                              Km.middleCols(c0, dh).transpose() /
                              std::sqrt(static_cast<double>(dh));
        softmax_rows(att);
        mixed.middleCols(c0, dh) = att * V.middleCols(c0, dh);
    }
    return apply_linear(w.o, mixed);
}

double bilinear_sample(const FeatureGrid& grid, double x, double y, int c) {
    // Pixel centers sit at ((i+0.5)/W, (j+0.5)/H); out-of-range locations
    // clamp to the border.
    double gx = x * grid.width - 0.5;
    double gy = y * grid.height - 0.5;
    gx = std::clamp(gx, 0.0, static_cast<double>(grid.width - 1));
    gy = std::clamp(gy, 0.0, static_cast<double>(grid.height - 1));
    const int x0 = static_cast<int>(gx);
    const int y0 = static_cast<int>(gy);
    const int x1 = std::min(x0 + 1, grid.width - 1);
    const int y1 = std::min(y0 + 1, grid.height - 1);
    const double fx = gx - x0;
    const double fy = gy - y0;
    const double v00 = grid.at(y0, x0, c), v01 = grid.at(y0, x1, c);
    const double v10 = grid.at(y1, x0, c), v11 = grid.at(y1, x1, c);
    return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
           fy * ((1.0 - fx) * v10 + fx * v11);
}

Eigen::MatrixXd deformable_attention(const Eigen::MatrixXd& queries,
                                     const std::vector<Point2>& points,
                                     const FeatureGrid& grid,
                                     const DeformWeights& w,
                                     const DecoderConfig& cfg) {
    const Eigen::Index K = queries.rows();
    const Eigen::Index C = queries.cols();
    const int H = cfg.num_heads;
    const int S = cfg.num_sampling_points;
    const Eigen::Index dh = C / H;

    const Eigen::MatrixXd off = apply_linear(w.offsets, queries); // K x H*S*2
    const Eigen::MatrixXd wts = apply_linear(w.weights, queries); // K x H*S

    Eigen::MatrixXd agg = Eigen::MatrixXd::Zero(K, C);
    std::vector<double> a(static_cast<size_t>(S));
    for (Eigen::Index i = 0; i < K; ++i) {
        for (int h = 0; h < H; ++h) {
            // softmax over this head's S sampling weights
            double mx = -std::numeric_limits<double>::infinity();
            for (int s = 0; s < S; ++s)
                mx = std::max(mx, wts(i, h * S + s));
            double z = 0.0;
            for (int s = 0; s < S; ++s) {
                a[static_cast<size_t>(s)] = std::exp(wts(i, h * S + s) - mx);
                z += a[static_cast<size_t>(s)];
            }
            for (int s = 0; s < S; ++s) a[static_cast<size_t>(s)] /= z;

            const Eigen::Index c0 = h * dh;
            for (int s = 0; s < S; ++s) {
                const double sx =
                    points[static_cast<size_t>(i)].x + off(i, (h * S + s) * 2);
                const double sy = points[static_cast<size_t>(i)].y +
                                  off(i, (h * S + s) * 2 + 1);
                for (Eigen::Index c = 0; c < dh; ++c)
                    agg(i, c0 + c) +=
                        a[static_cast<size_t>(s)] *
                        bilinear_sample(grid, sx, sy, static_cast<int>(c0 + c));
            }
        }
    }
    return apply_linear(w.out, agg);
}

// ==== layers ================================================================

QueryState decoder_layer(const QueryState& state, const Scene& scene,
                         const DecoderConfig& cfg, const LayerWeights& w,
                         const LayerHooks& hooks, LayerDebug* debug) {
    // Counting stream: full text. Attribute stream: masked text only.
    const Eigen::MatrixXd txt_c =
        text_cross_attention(state.w2c_content, scene.text, false, w.w2c.cross,
                             cfg.num_heads);
    const Eigen::MatrixXd txt_s =
        text_cross_attention(state.w2s_content, scene.text, true, w.w2s.cross,
                             cfg.num_heads);
    const Eigen::MatrixXd img_c = deformable_attention(
        txt_c, state.w2c_points, scene.grid, w.w2c.deform, cfg);
    const Eigen::MatrixXd img_s = deformable_attention(
        txt_s, state.w2s_points, scene.grid, w.w2s.deform, cfg);
    Eigen::MatrixXd qhat_c = apply_ffn(w.w2c.refine, img_c);
    Eigen::MatrixXd qhat_s = apply_ffn(w.w2s.refine, img_s);
    if (hooks.zero_w2s_hat) qhat_s.setZero();
    if (debug) {
        debug->qhat_w2c = qhat_c;
        debug->qhat_w2s = qhat_s;
    }

    QueryState next;
    next.layer = state.layer + 1;
    next.w2c_content = apply_ffn(w.fuse, qhat_c + qhat_s);
    next.w2s_content = apply_ffn(w.ind, qhat_s);

    const Eigen::MatrixXd off_c = apply_linear(w.w2c.loc, next.w2c_content);
    const Eigen::MatrixXd off_s = apply_linear(w.w2s.loc, next.w2s_content);
    next.w2c_points.reserve(state.w2c_points.size());
    next.w2s_points.reserve(state.w2s_points.size());
    for (size_t i = 0; i < state.w2c_points.size(); ++i) {
        const Eigen::Index ei = static_cast<Eigen::Index>(i);
        next.w2c_points.push_back(
            clamp_unit({state.w2c_points[i].x + off_c(ei, 0),
                        state.w2c_points[i].y + off_c(ei, 1)}));
        next.w2s_points.push_back(
            clamp_unit({state.w2s_points[i].x + off_s(ei, 0),
                        state.w2s_points[i].y + off_s(ei, 1)}));
    }
    return next;
}

namespace {

std::vector<Prediction> read_predictions(const QueryState& final_state,
                                         const TokenSet& text) {
    std::vector<Prediction> preds;
    const Eigen::Index K = final_state.w2c_content.rows();
    const Eigen::Index N = text.tokens.rows();
    preds.reserve(static_cast<size_t>(K));
    for (Eigen::Index i = 0; i < K; ++i) {
        Prediction p;
        p.point = final_state.w2c_points[static_cast<size_t>(i)];
        std::vector<double> scores(static_cast<size_t>(N));
        const Eigen::VectorXd q =
            final_state.w2c_content.row(i).transpose();
        for (Eigen::Index n = 0; n < N; ++n)
            scores[static_cast<size_t>(n)] =
                sigmoid(cosine(q, text.tokens.row(n).transpose()));
        p.cls_score = scores[static_cast<size_t>(text.cls_index)];
        double attr = 0.0;
        bool any = false;
        for (Eigen::Index n = 0; n < N; ++n) {
            if (text.attribute_mask[static_cast<size_t>(n)] == 1) {
                attr = any ? std::max(attr, scores[static_cast<size_t>(n)])
                           : scores[static_cast<size_t>(n)];
                any = true;
            }
        }
        p.attr_score = attr;
        p.per_token_scores = std::move(scores);
        preds.push_back(std::move(p));
    }
    return preds;
}

}  // namespace

DecoderTrace forward_from(const QueryState& start, const Scene& scene,
                          const DecoderConfig& cfg, const DecoderWeights& w) {
    DecoderTrace trace;
    trace.snapshots.push_back(start);
    QueryState cur = start;
    for (int l = cur.layer; l < cfg.num_layers; ++l) {
        cur = decoder_layer(cur, scene, cfg,
                            w.layers[static_cast<size_t>(l)]);
        trace.snapshots.push_back(cur);
    }
    trace.predictions = read_predictions(cur, scene.text);
    return trace;
}

DecoderTrace forward(const Scene& scene, const DecoderConfig& cfg) {
    const DecoderWeights w = make_decoder_weights(cfg);
    return forward_from(init_queries(scene, cfg, w), scene, cfg, w);
}

std::vector<Prediction> filter_predictions(const std::vector<Prediction>& preds,
                                           double cls_threshold,
                                           double attr_threshold) {
    std::vector<Prediction> out;
    for (const Prediction& p : preds)
        if (p.cls_score > cls_threshold && p.attr_score > attr_threshold)
            out.push_back(p);
    return out;
}

std::string trace_to_json_string(const DecoderTrace& trace) {
    nlohmann::json j;
    j["layers"] = nlohmann::json::array();
    for (const QueryState& s : trace.snapshots) {
        nlohmann::json js;
        js["layer"] = s.layer;
        auto pts = [](const std::vector<Point2>& v) {
            nlohmann::json a = nlohmann::json::array();
            for (const Point2& p : v)
                a.push_back(nlohmann::json::array({p.x, p.y}));
            return a;
        };
        js["w2c_points"] = pts(s.w2c_points);
        js["w2s_points"] = pts(s.w2s_points);
        j["layers"].push_back(std::move(js));
    }
    j["predictions"] = nlohmann::json::array();
    for (const Prediction& p : trace.predictions) {
        nlohmann::json jp;
        jp["point"] = nlohmann::json::array({p.point.x, p.point.y});
        jp["cls_score"] = p.cls_score;
        jp["attr_score"] = p.attr_score;
        if (p.per_token_scores) jp["per_token_scores"] = *p.per_token_scores;
        j["predictions"].push_back(std::move(jp));
    }
    return j.dump(2) + "\n";
}

}  // namespace w2
