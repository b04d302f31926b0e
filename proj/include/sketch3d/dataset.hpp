#pragma once

#include "sketch3d/geometry.hpp"
#include "sketch3d/losses.hpp"
#include "sketch3d/sketch.hpp"

#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

namespace sketch3d {

struct View {
    Camera camera;
    TargetImage target;
    std::string name;
};

using Segment3D = std::pair<Vec3, Vec3>;

/// Posed views plus optional reconstruction hints. All views share one
/// resolution.
struct Dataset {
    std::vector<View> views;
    std::vector<Vec3> points;
    std::vector<Segment3D> segments;
    SceneBounds bbox;

    int width() const { return views.empty() ? 0 : views.front().camera.width; }
    int height() const { return views.empty() ? 0 : views.front().camera.height; }

    void validate() const {
        if (views.empty()) throw DomainError("dataset has no views");
        for (const auto &v : views) {
            if (v.camera.width != width() || v.camera.height != height()) {
                throw DomainError("dataset views differ in resolution: " + v.name);
            }
        }
        if (!bbox.valid()) throw DomainError("dataset bounding box is degenerate");
    }
};

/// Bounds of a point set; invalid (inverted) when the set is empty.
inline SceneBounds bounds_of(std::span<const Vec3> pts) {
    SceneBounds b{Vec3::Constant(std::numeric_limits<double>::infinity()),
                  Vec3::Constant(-std::numeric_limits<double>::infinity())};
    for (const auto &p : pts) {
        b.lo = b.lo.cwiseMin(p);
        b.hi = b.hi.cwiseMax(p);
    }
    return b;
}

/// Turntable camera around the scene: azimuth in degrees about +z (z up),
/// fixed elevation, looking at the bbox center from radius = 2 x diagonal.
inline Camera turntable_camera(const SceneBounds &b, double azimuth_deg, double elevation_deg, int width,
                               int height, double radius_scale = 2.0) {
    const double az = azimuth_deg * std::numbers::pi / 180.0;
    const double el = elevation_deg * std::numbers::pi / 180.0;
    const double r = radius_scale * b.diagonal();
    const Vec3 eye = b.center() + r * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    // Frame the bbox's bounding sphere with a small margin.
    const double half_fov = std::asin(std::min(0.99, 0.5 * b.diagonal() / r)) * 1.15;
    const double focal = 0.5 * std::min(width, height) / std::tan(half_fov);
    return Camera::look_at(eye, b.center(), Vec3::UnitZ(), focal, width, height);
}

} // namespace sketch3d
