#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <random>

#include "w2/decoder.hpp"
#include "test_helpers.hpp"

using namespace w2;

namespace {

FeatureGrid constant_grid(int h, int w, int c, double v) {
    FeatureGrid g;
    g.height = h;
    g.width = w;
    g.channels = c;
    g.data.assign(static_cast<size_t>(h) * w * c, v);
    return g;
}

Linear identity_linear(int n) {
    Linear l;
    l.W = Eigen::MatrixXd::Identity(n, n);
    l.b = Eigen::VectorXd::Zero(n);
    return l;
}

Linear zero_linear(int out, int in) {
    Linear l;
    l.W = Eigen::MatrixXd::Zero(out, in);
    l.b = Eigen::VectorXd::Zero(out);
    return l;
}

bool points_equal(const std::vector<Point2>& a, const std::vector<Point2>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (!(a[i] == b[i])) return false;
    return true;
}

DecoderConfig tiny_config(int layers = 1, unsigned long long seed = 7) {
    DecoderConfig cfg;
    cfg.num_queries = 4;
    cfg.channels = 4;
    cfg.num_layers = layers;
    cfg.num_heads = 2;
    cfg.num_sampling_points = 4;
    cfg.seed = seed;
    return cfg;
}

// tiny_scene with a spatially varying grid. On a perfectly constant grid the
// deformable stage returns the field value for any sampling offsets, which
// can erase a content perturbation to the last bit; the inequality halves of
// the stream tests need features with an actual gradient.
Scene varied_scene() {
    Scene s = testhelp::tiny_scene();
    for (size_t i = 0; i < s.grid.data.size(); ++i)
        s.grid.data[i] = 0.5 + 0.4 * std::sin(0.37 * static_cast<double>(i));
    return s;
}

}  // namespace

TEST_CASE("bilinear sampling matches hand calculations") {
    FeatureGrid g;
    g.height = 2;
    g.width = 2;
    g.channels = 1;
    g.data = {1, 2, 3, 4};
    CHECK(bilinear_sample(g, 0.5, 0.5, 0) == 2.5);
    CHECK(bilinear_sample(g, 0.0, 0.0, 0) == 1.0);  // clamps past the border
    CHECK(bilinear_sample(g, 1.0, 1.0, 0) == 4.0);
    CHECK(bilinear_sample(g, 5.0, 5.0, 0) == 4.0);
    CHECK(bilinear_sample(g, 0.75, 0.25, 0) == 2.0); // center of cell (0,1)

    const FeatureGrid c = constant_grid(3, 5, 2, 0.3);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 50; ++t)
        CHECK(bilinear_sample(c, u(rng), u(rng), 1) ==
              doctest::Approx(0.3).epsilon(1e-15));
}

TEST_CASE("deformable attention reduces to the field value on constant grids") {
    DecoderConfig cfg = tiny_config();
    DeformWeights w;
    const int hs = cfg.num_heads * cfg.num_sampling_points;
    w.offsets = zero_linear(hs * 2, cfg.channels);  // all samples at the point
    w.weights = zero_linear(hs, cfg.channels);      // uniform softmax
    w.out = identity_linear(cfg.channels);

    const FeatureGrid grid = constant_grid(3, 3, cfg.channels, 0.75);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::MatrixXd q(5, cfg.channels);
    for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = u(rng);
    const std::vector<Point2> pts = {
        {0.1, 0.1}, {0.5, 0.5}, {0.9, 0.2}, {0.3, 0.8}, {0.5, 0.1}};

    const Eigen::MatrixXd out = deformable_attention(q, pts, grid, w, cfg);
    REQUIRE(out.rows() == 5);
    REQUIRE(out.cols() == cfg.channels);
    for (Eigen::Index i = 0; i < out.size(); ++i)
        CHECK(out(i) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("sampling offsets clamp to the grid border") {
    DecoderConfig cfg;
    cfg.num_queries = 1;
    cfg.channels = 1;
    cfg.num_heads = 1;
    cfg.num_sampling_points = 1;
    cfg.num_layers = 1;

    FeatureGrid g;
    g.height = 2;
    g.width = 2;
    g.channels = 1;
    g.data = {1, 2, 3, 4};

    DeformWeights w;
    w.offsets = zero_linear(2, 1);
    w.offsets.b << 10.0, 10.0;  // push every sample far out of range
    w.weights = zero_linear(1, 1);
    w.out = identity_linear(1);

    Eigen::MatrixXd q(1, 1);
    q << 0.2;
    const Eigen::MatrixXd out =
        deformable_attention(q, {{0.9, 0.9}}, g, w, cfg);
    CHECK(out(0, 0) == 4.0);  // far corner cell
}

TEST_CASE("configuration and scene shape validation") {
    DecoderConfig cfg = tiny_config();
    cfg.channels = 5;  // not divisible by num_heads = 2
    CHECK_THROWS_AS(make_decoder_weights(cfg), std::invalid_argument);
    cfg = tiny_config();
    cfg.num_queries = 0;
    CHECK_THROWS_AS(make_decoder_weights(cfg), std::invalid_argument);
    cfg = tiny_config(0);
    CHECK_NOTHROW(make_decoder_weights(cfg));  // zero layers is a valid model

    Scene s = testhelp::tiny_scene();  // 4x4 grid
    cfg = tiny_config();
    cfg.num_queries = 17;
    CHECK_THROWS_AS(init_queries(s, cfg, make_decoder_weights(cfg)),
                    std::invalid_argument);
    cfg = tiny_config();
    cfg.channels = 8;  // tiny scene carries 4 feature channels
    CHECK_THROWS_AS(init_queries(s, cfg, make_decoder_weights(cfg)),
                    std::invalid_argument);
}

TEST_CASE("initialization picks the most similar cells in rank order") {
    Scene s;
    s.id = "init";
    s.grid.height = 2;
    s.grid.width = 2;
    s.grid.channels = 2;
    // cell features: (1,0), (0,1), (1,1), (0,2) as (c0,c1) pairs
    s.grid.data = {1, 0, 0, 1, 1, 1, 0, 2};
    s.text.tokens.resize(1, 2);
    s.text.tokens << 1, 0;  // similarity = cosine against (1,0)
    s.text.attribute_mask = {0};
    s.text.cls_index = 0;

    DecoderConfig cfg = tiny_config();
    cfg.num_queries = 2;
    cfg.channels = 2;
    const QueryState st = init_queries(s, cfg, make_decoder_weights(cfg));
    // similarities: cell0 = 1, cell1 = 0, cell2 = 1/sqrt(2), cell3 = 0
    REQUIRE(st.w2c_points.size() == 2);
    CHECK(st.w2c_points[0] == Point2{0.25, 0.25});  // cell 0
    CHECK(st.w2c_points[1] == Point2{0.25, 0.75});  // cell 2
    CHECK(st.layer == 0);
}

TEST_CASE("similarity ties resolve to the lower cell index") {
    Scene s;
    s.id = "ties";
    s.grid = constant_grid(2, 2, 2, 0.5);  // every cell identical
    s.text.tokens.resize(1, 2);
    s.text.tokens << 1, 1;
    s.text.attribute_mask = {0};
    s.text.cls_index = 0;

    DecoderConfig cfg = tiny_config();
    cfg.num_queries = 3;
    cfg.channels = 2;
    const QueryState st = init_queries(s, cfg, make_decoder_weights(cfg));
    REQUIRE(st.w2c_points.size() == 3);
    CHECK(st.w2c_points[0] == Point2{0.25, 0.25});
    CHECK(st.w2c_points[1] == Point2{0.75, 0.25});
    CHECK(st.w2c_points[2] == Point2{0.25, 0.75});
}

TEST_CASE("attribute stream starts as an exact copy of the counting stream") {
    const Scene s = testhelp::tiny_scene();
    const DecoderConfig cfg = tiny_config();
    const QueryState st = init_queries(s, cfg, make_decoder_weights(cfg));
    CHECK(st.w2c_content == st.w2s_content);
    CHECK(points_equal(st.w2c_points, st.w2s_points));
}

TEST_CASE("masked attention is blind to non-attribute tokens") {
    const DecoderConfig cfg = tiny_config();
    const DecoderWeights w = make_decoder_weights(cfg);
    const CrossAttnWeights& cw = w.layers[0].w2s.cross;

    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    TokenSet text;
    text.tokens.resize(3, cfg.channels);
    for (Eigen::Index i = 0; i < text.tokens.size(); ++i)
        text.tokens(i) = u(rng);
    text.attribute_mask = {0, 1, 0};
    text.cls_index = 0;
    Eigen::MatrixXd q(5, cfg.channels);
    for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = u(rng);

    TokenSet bent = text;
    bent.tokens.row(0).setConstant(42.0);
    bent.tokens.row(2).setConstant(-3.5);

    const Eigen::MatrixXd masked_a =
        text_cross_attention(q, text, true, cw, cfg.num_heads);
    const Eigen::MatrixXd masked_b =
        text_cross_attention(q, bent, true, cw, cfg.num_heads);
    CHECK(masked_a == masked_b);  // bitwise

    // Sanity: the unmasked path does see the perturbation.
    const Eigen::MatrixXd open_a =
        text_cross_attention(q, text, false, cw, cfg.num_heads);
    const Eigen::MatrixXd open_b =
        text_cross_attention(q, bent, false, cw, cfg.num_heads);
    CHECK(open_a != open_b);
}

TEST_CASE("a single unmasked token broadcasts its projected value") {
    const DecoderConfig cfg = tiny_config();
    const DecoderWeights w = make_decoder_weights(cfg);
    const CrossAttnWeights& cw = w.layers[0].w2c.cross;

    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    TokenSet text;
    text.tokens.resize(1, cfg.channels);
    for (Eigen::Index i = 0; i < text.tokens.size(); ++i)
        text.tokens(i) = u(rng);
    text.attribute_mask = {0};
    text.cls_index = 0;
    Eigen::MatrixXd q(3, cfg.channels);
    for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = u(rng);

    const Eigen::MatrixXd out =
        text_cross_attention(q, text, false, cw, cfg.num_heads);
    const Eigen::MatrixXd expected =
        apply_linear(cw.o, apply_linear(cw.v, text.tokens));
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        CHECK((out.row(i) - expected.row(0)).norm() == 0.0);
}

TEST_CASE("an all-zero mask behaves like an all-zero token set") {
    const DecoderConfig cfg = tiny_config();
    const DecoderWeights w = make_decoder_weights(cfg);
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    TokenSet text;
    text.tokens.resize(2, cfg.channels);
    for (Eigen::Index i = 0; i < text.tokens.size(); ++i)
        text.tokens(i) = u(rng);
    text.attribute_mask = {0, 0};
    text.cls_index = 0;
    TokenSet zeroed = text;
    zeroed.tokens.setZero();
    Eigen::MatrixXd q(4, cfg.channels);
    for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = u(rng);

    const CrossAttnWeights& cw = w.layers[0].w2s.cross;
    CHECK(text_cross_attention(q, text, true, cw, cfg.num_heads) ==
          text_cross_attention(q, zeroed, false, cw, cfg.num_heads));
}

TEST_CASE("zeroing the refined attribute queries isolates the fusion input") {
    const Scene s = testhelp::tiny_scene();
    const DecoderConfig cfg = tiny_config();
    const DecoderWeights w = make_decoder_weights(cfg);
    const QueryState st = init_queries(s, cfg, w);

    LayerDebug dbg;
    const QueryState next =
        decoder_layer(st, s, cfg, w.layers[0], {.zero_w2s_hat = true}, &dbg);
    CHECK(dbg.qhat_w2s.isZero(0.0));
    CHECK(next.w2c_content == apply_ffn(w.layers[0].fuse, dbg.qhat_w2c));
}

TEST_CASE("attribute stream never reads the counting stream") {
    const Scene s = varied_scene();
    const DecoderConfig cfg = tiny_config(3);
    const DecoderWeights w = make_decoder_weights(cfg);
    const QueryState st = init_queries(s, cfg, w);
    QueryState bent = st;
    bent.w2c_content.array() += 0.5;

    const DecoderTrace a = forward_from(st, s, cfg, w);
    const DecoderTrace b = forward_from(bent, s, cfg, w);
    REQUIRE(a.snapshots.size() == b.snapshots.size());
    for (size_t l = 0; l < a.snapshots.size(); ++l) {
        CHECK(a.snapshots[l].w2s_content == b.snapshots[l].w2s_content);
        CHECK(points_equal(a.snapshots[l].w2s_points,
                           b.snapshots[l].w2s_points));
    }
    CHECK(a.snapshots.back().w2c_content != b.snapshots.back().w2c_content);
}

TEST_CASE("attribute stream ignores non-attribute text at every layer") {
    const Scene s = varied_scene();
    Scene bent = s;
    bent.text.tokens.row(0).setConstant(3.25);  // the class token row

    const DecoderConfig cfg = tiny_config(3);
    const DecoderWeights w = make_decoder_weights(cfg);
    const QueryState st = init_queries(s, cfg, w);  // shared start state

    const DecoderTrace a = forward_from(st, s, cfg, w);
    const DecoderTrace b = forward_from(st, bent, cfg, w);
    for (size_t l = 0; l < a.snapshots.size(); ++l) {
        CHECK(a.snapshots[l].w2s_content == b.snapshots[l].w2s_content);
        CHECK(points_equal(a.snapshots[l].w2s_points,
                           b.snapshots[l].w2s_points));
    }
    CHECK(a.snapshots.back().w2c_content != b.snapshots.back().w2c_content);
}

TEST_CASE("power-of-two class token scaling leaves the attribute stream "
          "untouched end to end") {
    // Doubling a token rescales no cosine similarity and is invisible to the
    // masked stream, so the full forward keeps identical w2s trajectories
    // while the counting stream (whose attention sees the raw token) moves.
    const Scene s = varied_scene();
    Scene scaled = s;
    scaled.text.tokens.row(0) *= 2.0;

    const DecoderConfig cfg = tiny_config(3);
    const DecoderTrace a = forward(s, cfg);
    const DecoderTrace b = forward(scaled, cfg);
    REQUIRE(a.snapshots.size() == b.snapshots.size());
    CHECK(a.snapshots[0].w2c_content == b.snapshots[0].w2c_content);
    CHECK(points_equal(a.snapshots[0].w2c_points, b.snapshots[0].w2c_points));
    for (size_t l = 0; l < a.snapshots.size(); ++l) {
        CHECK(a.snapshots[l].w2s_content == b.snapshots[l].w2s_content);
        CHECK(points_equal(a.snapshots[l].w2s_points,
                           b.snapshots[l].w2s_points));
    }
    CHECK(a.snapshots.back().w2c_content != b.snapshots.back().w2c_content);
}

TEST_CASE("geometry and shape invariants hold at every layer") {
    const Scene s = testhelp::tiny_scene();
    DecoderConfig cfg = tiny_config(4, 3);
    cfg.num_queries = 16;
    const DecoderTrace t = forward(s, cfg);
    REQUIRE(t.snapshots.size() == 5);
    for (size_t l = 0; l < t.snapshots.size(); ++l) {
        const QueryState& st = t.snapshots[l];
        CHECK(st.layer == static_cast<int>(l));
        CHECK(st.w2c_content.rows() == 16);
        CHECK(st.w2c_content.cols() == 4);
        CHECK(st.w2s_content.rows() == 16);
        CHECK(st.w2c_content.allFinite());
        CHECK(st.w2s_content.allFinite());
        REQUIRE(st.w2c_points.size() == 16);
        REQUIRE(st.w2s_points.size() == 16);
        for (const Point2& p : st.w2c_points) CHECK(in_unit_square(p));
        for (const Point2& p : st.w2s_points) CHECK(in_unit_square(p));
    }
    REQUIRE(t.predictions.size() == 16);
    for (const Prediction& p : t.predictions) {
        CHECK(p.cls_score >= 0.0);
        CHECK(p.cls_score <= 1.0);
        CHECK(p.attr_score >= 0.0);
        CHECK(p.attr_score <= 1.0);
        REQUIRE(p.per_token_scores.has_value());
        CHECK(p.per_token_scores->size() == 2);
    }
}

TEST_CASE("identical scene, config and seed give bit-identical traces") {
    const Scene s = testhelp::tiny_scene();
    const DecoderConfig cfg = tiny_config(3, 11);
    const DecoderTrace a = forward(s, cfg);
    const DecoderTrace b = forward(s, cfg);
    REQUIRE(a.snapshots.size() == b.snapshots.size());
    for (size_t l = 0; l < a.snapshots.size(); ++l) {
        CHECK(a.snapshots[l].w2c_content == b.snapshots[l].w2c_content);
        CHECK(a.snapshots[l].w2s_content == b.snapshots[l].w2s_content);
        CHECK(points_equal(a.snapshots[l].w2c_points,
                           b.snapshots[l].w2c_points));
        CHECK(points_equal(a.snapshots[l].w2s_points,
                           b.snapshots[l].w2s_points));
    }
    REQUIRE(a.predictions.size() == b.predictions.size());
    for (size_t i = 0; i < a.predictions.size(); ++i) {
        CHECK(a.predictions[i].point == b.predictions[i].point);
        CHECK(a.predictions[i].cls_score == b.predictions[i].cls_score);
        CHECK(a.predictions[i].attr_score == b.predictions[i].attr_score);
    }
}

TEST_CASE("a zero-layer model predicts at the initialization points") {
    const Scene s = testhelp::tiny_scene();
    const DecoderConfig cfg = tiny_config(0);
    const DecoderTrace t = forward(s, cfg);
    REQUIRE(t.snapshots.size() == 1);
    REQUIRE(t.predictions.size() == 4);
    for (size_t i = 0; i < t.predictions.size(); ++i)
        CHECK(t.predictions[i].point == t.snapshots[0].w2c_points[i]);
}

TEST_CASE("prediction filtering is strict at both thresholds") {
    auto pred = [](double cls, double attr) {
        Prediction p;
        p.point = {0.5, 0.5};
        p.cls_score = cls;
        p.attr_score = attr;
        return p;
    };
    const std::vector<Prediction> preds = {
        pred(0.3, 0.4),    // above both
        pred(0.2, 0.9),    // class score too low
        pred(0.9, 0.35),   // attribute exactly at threshold: dropped
        pred(0.25, 0.5),   // class exactly at threshold: dropped
        pred(0.26, 0.36),  // barely above both
    };
    const auto kept = filter_predictions(preds, 0.25, 0.35);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].cls_score == 0.3);
    CHECK(kept[1].cls_score == 0.26);
    CHECK(filter_predictions({}, 0.25, 0.35).empty());
}

TEST_CASE("trace serialization carries layer trajectories and predictions") {
    const Scene s = testhelp::tiny_scene();
    const DecoderConfig cfg = tiny_config(2);
    const DecoderTrace t = forward(s, cfg);
    const nlohmann::json j = nlohmann::json::parse(trace_to_json_string(t));
    REQUIRE(j.at("layers").size() == 3);
    CHECK(j.at("layers").at(0).at("layer") == 0);
    CHECK(j.at("layers").at(0).at("w2c_points").size() == 4);
    CHECK(j.at("layers").at(2).at("w2s_points").size() == 4);
    REQUIRE(j.at("predictions").size() == 4);
    CHECK(j.at("predictions").at(0).contains("cls_score"));
    const double x = j.at("layers").at(2).at("w2c_points").at(0).at(0);
    CHECK(x == t.snapshots[2].w2c_points[0].x);
}
