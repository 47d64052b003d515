#pragma once

#include <algorithm>
#include <cmath>

namespace w2 {

/// 2D point in normalized image coordinates. Valid positions live in [0,1]^2,
/// but the type itself does not enforce that; validation happens at scene level.
struct Point2 {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point2& a, const Point2& b) {
        return a.x == b.x && a.y == b.y;
    }
};

inline double l1_distance(const Point2& a, const Point2& b) {
    return std::abs(a.x - b.x) + std::abs(a.y - b.y);
}

inline double l2_distance(const Point2& a, const Point2& b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

/// Clamp a point into the unit square. Used by the position heads, which may
/// regress slightly outside [0,1] before clamping.
inline Point2 clamp_unit(const Point2& p) {
    return {std::clamp(p.x, 0.0, 1.0), std::clamp(p.y, 0.0, 1.0)};
}

inline bool in_unit_square(const Point2& p) {
    return p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0;
}

}  // namespace w2
