#include "w2/scene.hpp"

#include <cmath>
#include <sstream>

namespace w2 {

namespace {

bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

void check_points(const std::vector<Point2>& pts, const char* label,
                  std::vector<std::string>& out) {
    for (size_t i = 0; i < pts.size(); ++i) {
        const Point2& p = pts[i];
        std::ostringstream os;
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
            os << label << "[" << i << "]: non-finite coordinate";
            out.push_back(os.str());
        } else if (!in_unit_square(p)) {
            os << label << "[" << i << "]: point out of range [0,1]^2 ("
               << p.x << ", " << p.y << ")";
            out.push_back(os.str());
        }
    }
}

}  // namespace

std::vector<std::string> validate_scene(const Scene& scene) {
    std::vector<std::string> v;
    const FeatureGrid& g = scene.grid;

    if (g.height <= 0 || g.width <= 0 || g.channels <= 0)
        v.push_back("grid: dimensions must be positive");
    const size_t want =
        static_cast<size_t>(g.height) * static_cast<size_t>(g.width) *
        static_cast<size_t>(g.channels);
    if (g.height > 0 && g.width > 0 && g.channels > 0 && g.data.size() != want) {
        std::ostringstream os;
        os << "grid.data: length " << g.data.size() << " != height*width*channels ("
           << want << ")";
        v.push_back(os.str());
    }
    if (!all_finite(g.data)) v.push_back("grid.data: non-finite entry");

    const TokenSet& t = scene.text;
    if (t.tokens.rows() == 0) v.push_back("text.tokens: empty");
    if (g.channels > 0 && t.tokens.rows() > 0 && t.dim() != g.channels) {
        std::ostringstream os;
        os << "text.tokens: dimension " << t.dim() << " != grid channels "
           << g.channels;
        v.push_back(os.str());
    }
    if (!t.tokens.allFinite()) v.push_back("text.tokens: non-finite entry");
    if (static_cast<int>(t.attribute_mask.size()) != t.count())
        v.push_back("text.attribute_mask: length != token count");
    for (size_t i = 0; i < t.attribute_mask.size(); ++i) {
        if (t.attribute_mask[i] != 0 && t.attribute_mask[i] != 1) {
            std::ostringstream os;
            os << "text.attribute_mask[" << i << "]: must be 0 or 1";
            v.push_back(os.str());
        }
    }
    if (t.cls_index < 0 || t.cls_index >= t.count()) {
        v.push_back("text.cls_index: out of range");
    } else if (t.cls_index < static_cast<int>(t.attribute_mask.size()) &&
               t.attribute_mask[static_cast<size_t>(t.cls_index)] != 0) {
        v.push_back("text.attribute_mask: must be 0 at cls_index");
    }

    check_points(scene.positives, "positives", v);
    check_points(scene.negatives, "negatives", v);

    // Disjointness is exact: duplicated annotations should fail loudly.
    for (size_t i = 0; i < scene.positives.size(); ++i) {
        for (size_t j = 0; j < scene.negatives.size(); ++j) {
            if (scene.positives[i] == scene.negatives[j]) {
                std::ostringstream os;
                os << "positives[" << i << "] / negatives[" << j
                   << "]: positive/negative overlap";
                v.push_back(os.str());
            }
        }
    }
    return v;
}

}  // namespace w2
