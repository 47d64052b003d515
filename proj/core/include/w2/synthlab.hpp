#pragma once

#include <string>
#include <utility>
#include <vector>

#include "w2/decoder.hpp"
#include "w2/matching.hpp"
#include "w2/scene.hpp"

namespace w2 {

/// Synthetic-scene recipe. Scenes hold two sibling subclasses of one class:
/// n_pos target points and n_neg distractor points, all sharing a class
/// signature in the feature grid, with subclass-specific attribute
/// signatures imprinted at point + attr_offset.
struct GeneratorConfig {
    // Densely interleaved subclasses with displacement noise on the order of
    // the spacing between them, so matched predictions routinely sit closer
    // to a distractor than to their own target and matching choices are
    // genuinely contested. Sparser or quieter recipes leave most seeds with
    // an uncontested assignment, where every matcher picks identical pairs
    // and the repulsive term has nothing to improve.
    int n_pos = 128;
    int n_neg = 128;
    double min_separation = 0.02;
    Point2 attr_offset = {0.03, 0.02};
    double noise_sigma = 0.10; // prediction displacement scale
    int grid_height = 16;
    int grid_width = 16;
    int channels = 8;
    unsigned long long seed = 0;
};

/// One matching configuration under test.
struct MatcherSpec {
    std::string name;
    CostWeights weights;
    RepulsiveForm form;
};

/// Per-seed ambiguity rates per matcher. The rate of one trial is the
/// fraction of matched pairs with ambiguity ratio R < 1 (prediction closer
/// to a distractor than to its assigned target).
struct AmbiguityResult {
    std::vector<std::string> matcher_names;
    std::vector<std::vector<double>> rates; // [matcher][trial]
    std::vector<double> mean_rate;          // per matcher
    std::vector<double> stddev_rate;        // per matcher, population stddev
};

struct AblationRow {
    std::string form;
    double mean_rate = 0.0;
    double stddev = 0.0;
};

/// Five-row comparison of the repulsive formulations at fixed weights.
/// note is empty when the proposed exponential-ratio form attains the lowest
/// mean rate, and describes the deviation otherwise.
struct AblationTable {
    std::vector<AblationRow> rows;
    std::string note;
};

/// Seeded rejection sampling of n_pos + n_neg points at pairwise
/// min_separation, signature imprinting, and a two-token text side (class
/// token + target attribute token). Also returns the attribute sites of the
/// positive points. Throws std::runtime_error when placement is infeasible
/// (iteration cap) or channels < 3.
std::pair<Scene, std::vector<Point2>> generate_scene(const GeneratorConfig& cfg);

/// One prediction per positive point, displaced by seeded isotropic Gaussian
/// noise and clamped to the unit square; cls_score uniform in [0.5, 1].
std::vector<Prediction> perturb_predictions(const Scene& scene,
                                            double noise_sigma,
                                            unsigned long long seed);

/// Runs n_seeds generate/perturb/match trials; every matcher sees the same
/// scenes and predictions, so per-trial rates are paired. Trials may run on
/// `jobs` threads; results are deterministic regardless of job count.
AmbiguityResult ambiguity_experiment(const GeneratorConfig& gen,
                                     const std::vector<MatcherSpec>& matchers,
                                     int n_seeds, int jobs = 1);

/// ambiguity_experiment over all five repulsive formulations at the given
/// weights, summarized per formulation.
AblationTable repulsion_ablation(const GeneratorConfig& gen,
                                 const CostWeights& weights, int n_seeds,
                                 int jobs = 1);

/// Mean distance from each layer's w2s points to the nearest attribute site;
/// one value per snapshot. Diagnostic only (weights are untrained).
std::vector<double> trajectory_attr_distance(
    const DecoderTrace& trace, const std::vector<Point2>& attribute_sites);

// CSV / JSON emission. CSVs start with a "# config ..." comment line so a
// result file is reproducible from its own header.
std::string generator_config_to_json_string(const GeneratorConfig& cfg);
std::string ambiguity_csv(const GeneratorConfig& cfg, const AmbiguityResult& r);
std::string ablation_csv(const GeneratorConfig& cfg, const AblationTable& t);

}  // namespace w2
