#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "w2/scene.hpp"

namespace w2 {

struct DecoderConfig {
    int num_queries = 16;     // K
    int channels = 8;         // C, divisible by num_heads
    int num_layers = 6;       // L
    int num_heads = 2;        // H
    int num_sampling_points = 4; // S per head
    unsigned long long seed = 0;
};

/// Paired query streams. The counting stream (w2c) fuses both streams each
/// layer; the attribute stream (w2s) sees only masked text and never reads
/// w2c state.
struct QueryState {
    Eigen::MatrixXd w2c_content; // K x C
    std::vector<Point2> w2c_points;
    Eigen::MatrixXd w2s_content; // K x C
    std::vector<Point2> w2s_points;
    int layer = 0;
};

struct DecoderTrace {
    std::vector<QueryState> snapshots; // layer 0 .. L inclusive
    std::vector<Prediction> predictions;
};

// ==== weights ===============================================================

/// y = x * W^T + b, applied row-wise to K x in matrices.
struct Linear {
    Eigen::MatrixXd W; // out x in
    Eigen::VectorXd b; // out
};

struct Ffn {
    Linear hidden; // C -> 2C, ReLU
    Linear out;    // 2C -> C
};

struct CrossAttnWeights {
    Linear q, k, v, o;
};

struct DeformWeights {
    Linear offsets; // C -> H*S*2, normalized-coordinate offsets
    Linear weights; // C -> H*S, softmax per head over S
    Linear out;     // C -> C
};

struct StreamLayerWeights {
    CrossAttnWeights cross;
    DeformWeights deform;
    Ffn refine;  // produces the per-stream refined queries
    Linear loc;  // C -> 2 reference-point offset head
};

struct LayerWeights {
    StreamLayerWeights w2c;
    StreamLayerWeights w2s;
    Ffn fuse; // counting-stream update from the summed refined queries
    Ffn ind;  // attribute-stream independent update
};

struct DecoderWeights {
    Eigen::MatrixXd query_content_init; // K x C
    std::vector<LayerWeights> layers;   // size L
};

/// All parameters drawn from the config seed in a fixed traversal order;
/// no training happens anywhere in this module.
DecoderWeights make_decoder_weights(const DecoderConfig& cfg);

Eigen::MatrixXd apply_linear(const Linear& lin, const Eigen::MatrixXd& x);
Eigen::MatrixXd apply_ffn(const Ffn& ffn, const Eigen::MatrixXd& x);

// ==== operations ============================================================

/// Reference points seeded at the spatial centers of the top-K grid cells by
/// cross-modal similarity (max over tokens of cosine; ties to the lower cell
/// index). The attribute stream starts as a bitwise copy of the counting
/// stream. Throws std::invalid_argument when the grid has fewer cells than K.
QueryState init_queries(const Scene& scene, const DecoderConfig& cfg,
                        const DecoderWeights& w);

/// Multi-head cross-attention of queries over text tokens. When masked, keys
/// and values come from the tokens with non-attribute rows zeroed, so those
/// tokens carry no signal (softmax still allocates them weight).
Eigen::MatrixXd text_cross_attention(const Eigen::MatrixXd& queries,
                                     const TokenSet& text, bool masked,
                                     const CrossAttnWeights& w, int num_heads);

/// Single-scale deformable attention: per query and head, S content-predicted
/// sampling offsets and softmax weights; bilinear grid samples, clamped to
/// the border; heads concatenated then projected.
Eigen::MatrixXd deformable_attention(const Eigen::MatrixXd& queries,
                                     const std::vector<Point2>& points,
                                     const FeatureGrid& grid,
                                     const DeformWeights& w,
                                     const DecoderConfig& cfg);

/// Bilinear sample of one channel at a normalized location (align to pixel
/// centers; locations clamp to the border).
double bilinear_sample(const FeatureGrid& grid, double x, double y, int c);

struct LayerHooks {
    bool zero_w2s_hat = false; // test hook: force refined w2s queries to zero
};

/// Intermediates captured for tests.
struct LayerDebug {
    Eigen::MatrixXd qhat_w2c;
    Eigen::MatrixXd qhat_w2s;
};

/// One decoder layer: per-stream (cross-attention -> deformable attention ->
/// FFN) refinement, counting-stream fusion by element-wise addition,
/// independent attribute-stream update, and per-stream reference-point
/// offsets clamped to [0,1]^2.
QueryState decoder_layer(const QueryState& state, const Scene& scene,
                         const DecoderConfig& cfg, const LayerWeights& w,
                         const LayerHooks& hooks = {},
                         LayerDebug* debug = nullptr);

/// init_queries + L layers from freshly drawn weights; predictions read from
/// the final counting stream (sigmoid-squashed cosine per token).
DecoderTrace forward(const Scene& scene, const DecoderConfig& cfg);

/// Same, but from an explicit start state and fixed weights. Lets tests pin
/// a common layer-0 state while perturbing inputs.
DecoderTrace forward_from(const QueryState& start, const Scene& scene,
                          const DecoderConfig& cfg, const DecoderWeights& w);

/// Keeps predictions with cls_score > cls_threshold AND
/// attr_score > attr_threshold.
std::vector<Prediction> filter_predictions(const std::vector<Prediction>& preds,
                                           double cls_threshold,
                                           double attr_threshold);

/// Layer-indexed point trajectories of both streams plus final predictions.
std::string trace_to_json_string(const DecoderTrace& trace);

}  // namespace w2
