#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "w2/scene.hpp"

namespace w2 {

/// Raised on parse failures, schema violations, and invariant violations in
/// loaded files. The message names the offending field path.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Writes content to path atomically: temp file in the same directory, fsync,
/// rename over the target. Throws IoError on filesystem failure.
void atomic_write(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

// Scene / prediction files. Loaders validate invariants and throw IoError
// naming the field path on any violation. Savers emit round-trip-exact reals.
Scene load_scene(const std::string& path);
void save_scene(const Scene& scene, const std::string& path);
std::string scene_to_json_string(const Scene& scene);
Scene scene_from_json_string(const std::string& text);

std::vector<Prediction> load_predictions(const std::string& path);
void save_predictions(const std::vector<Prediction>& preds,
                      const std::string& path);
std::string predictions_to_json_string(const std::vector<Prediction>& preds);
std::vector<Prediction> predictions_from_json_string(const std::string& text);

}  // namespace w2
