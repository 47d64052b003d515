#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "w2/geometry.hpp"

namespace w2 {

/// Dense feature map, row-major H x W x C. Value at (row y, col x, channel c)
/// is data[(y*width + x)*channels + c].
struct FeatureGrid {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    double at(int y, int x, int c) const {
        return data[static_cast<size_t>((y * width + x) * channels + c)];
    }
    double& at(int y, int x, int c) {
        return data[static_cast<size_t>((y * width + x) * channels + c)];
    }
    int cells() const { return height * width; }
};

/// Text-side features: N token embeddings of dimension C, a 0/1 attribute
/// mask, and the index of the class token (mask at cls_index must be 0).
struct TokenSet {
    Eigen::MatrixXd tokens;          // N x C
    std::vector<int> attribute_mask; // size N, entries in {0,1}
    int cls_index = 0;

    int count() const { return static_cast<int>(tokens.rows()); }
    int dim() const { return static_cast<int>(tokens.cols()); }
};

/// One image/expression pair: feature grid, token set, and ground-truth
/// annotation points split into target-subclass positives and distractor
/// negatives. All points normalized to [0,1]^2.
struct Scene {
    std::string id;
    FeatureGrid grid;
    TokenSet text;
    std::vector<Point2> positives;
    std::vector<Point2> negatives;
};

/// One predicted instance: location plus similarity scores against the class
/// token and (max over) attribute tokens, each squashed into [0,1].
struct Prediction {
    Point2 point;
    double cls_score = 0.0;
    double attr_score = 0.0;
    std::optional<std::vector<double>> per_token_scores;
};

/// Returns one human-readable description per violated invariant; an empty
/// list means the scene is valid. Never throws: violations are data.
std::vector<std::string> validate_scene(const Scene& scene);

}  // namespace w2
