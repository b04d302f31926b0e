#pragma once

// A 3D sketch: view-independent Bezier strokes plus superquadric contour
// primitives, rendered to one image and differentiated back to the flat
// parameter vector.

#include "sketch3d/compose.hpp"
#include "sketch3d/contour.hpp"
#include "sketch3d/geometry.hpp"
#include "sketch3d/raster2d.hpp"

#include <span>
#include <vector>

namespace sketch3d {

inline constexpr std::size_t curve_param_count = 12;

struct StrokeSet {
    std::vector<CubicBezier3D> curves;
    std::vector<Superquadric> quadrics;

    std::size_t param_count() const {
        return curve_param_count * curves.size() + superquadric_param_count * quadrics.size();
    }
    /// Offset of the first quadric parameter in the packed vector.
    std::size_t quadric_offset() const { return curve_param_count * curves.size(); }

    /// Curves first (p0..p3, xyz each), then quadrics in their packed layout.
    std::vector<double> pack() const {
        std::vector<double> p;
        p.reserve(param_count());
        for (const auto &c : curves)
            for (const auto &pt : c.points) p.insert(p.end(), {pt.x(), pt.y(), pt.z()});
        for (const auto &q : quadrics) {
            const auto a = q.packed();
            p.insert(p.end(), a.begin(), a.end());
        }
        return p;
    }

    void unpack(std::span<const double> p) {
        if (p.size() != param_count()) throw DomainError("StrokeSet::unpack: length mismatch");
        std::size_t k = 0;
        for (auto &c : curves)
            for (auto &pt : c.points) {
                pt = Vec3(p[k], p[k + 1], p[k + 2]);
                k += 3;
            }
        for (auto &q : quadrics) {
            q = Superquadric::unpack(p.subspan(k).first<superquadric_param_count>());
            k += superquadric_param_count;
        }
    }

    void validate(const SuperquadricBounds &bounds = {}) const {
        if (curves.empty() && quadrics.empty()) throw DomainError("stroke set is empty");
        for (const auto &c : curves)
            if (!c.finite()) throw DomainError("curve with non-finite control point");
        for (const auto &q : quadrics)
            if (!q.satisfies(bounds)) throw DomainError("superquadric outside its parameter bounds");
    }
};

/// Axis-aligned scene bounds.
struct SceneBounds {
    Vec3 lo = Vec3::Constant(-1.0);
    Vec3 hi = Vec3::Constant(1.0);

    Vec3 center() const { return 0.5 * (lo + hi); }
    double diagonal() const { return (hi - lo).norm(); }
    bool valid() const { return lo.allFinite() && hi.allFinite() && (hi - lo).minCoeff() > 0.0; }
};

struct RenderSettings {
    RasterConfig raster;
    ContourConfig contour;
    /// Sphere containing everything the contour branch should see.
    Vec3 march_center = Vec3::Zero();
    double march_radius = 1.0;

    static RenderSettings for_scene(const SceneBounds &b, int width, int height) {
        RenderSettings s;
        s.raster.stroke_width = default_stroke_width(width, height);
        s.march_center = b.center();
        s.march_radius = 0.75 * b.diagonal();
        return s;
    }

    ContourConfig contour_for(const Camera &cam) const {
        ContourConfig c = contour;
        set_march_bounds(c, cam, march_center, march_radius);
        return c;
    }
};

struct SketchRender {
    ImageBuffer ind;
    ImageBuffer dep;
    ImageBuffer image;
    std::vector<std::size_t> visible; // curves fully in front of the camera
};

namespace detail {

inline bool in_front(const Camera &cam, const CubicBezier3D &c) {
    for (const auto &p : c.points)
        if (!(cam.to_camera(p).z() > default_near_plane)) return false;
    return true;
}

inline std::vector<Stroke2D> visible_strokes(const Camera &cam, const StrokeSet &set,
                                             std::vector<std::size_t> &visible) {
    std::vector<Stroke2D> strokes;
    visible.clear();
    for (std::size_t i = 0; i < set.curves.size(); ++i) {
        if (!in_front(cam, set.curves[i])) continue;
        visible.push_back(i);
        strokes.push_back(project_curve(cam, set.curves[i]));
    }
    return strokes;
}

} // namespace detail

inline ImageBuffer render_curves(const Camera &cam, const StrokeSet &set, const RenderSettings &s) {
    std::vector<std::size_t> visible;
    const auto strokes = detail::visible_strokes(cam, set, visible);
    return rasterize_strokes(strokes, cam.width, cam.height, s.raster);
}

inline ImageBuffer render_quadrics(const Camera &cam, const StrokeSet &set, const RenderSettings &s) {
    if (set.quadrics.empty()) return ImageBuffer::white(cam.width, cam.height);
    return render_contour(cam, set.quadrics, s.contour_for(cam));
}

/// Renders both branches. A branch passed in as `cached` is reused instead
/// of being rendered again.
inline SketchRender render_sketch(const Camera &cam, const StrokeSet &set, const RenderSettings &s,
                                  const ImageBuffer *cached_ind = nullptr, const ImageBuffer *cached_dep = nullptr) {
    SketchRender r;
    const auto strokes = detail::visible_strokes(cam, set, r.visible);
    r.ind = cached_ind ? *cached_ind : rasterize_strokes(strokes, cam.width, cam.height, s.raster);
    r.dep = cached_dep ? *cached_dep : render_quadrics(cam, set, s);
    r.image = composite(r.ind, r.dep);
    return r;
}

struct BranchMask {
    bool curves = true;
    bool quadrics = true;
};

/// Gradient of sum_p grad_image(p) * image(p) over the packed parameters.
/// Disabled branches receive exact zeros and are not differentiated.
inline std::vector<double> render_sketch_backward(const Camera &cam, const StrokeSet &set, const RenderSettings &s,
                                                  const SketchRender &fwd, const ImageBuffer &grad_image,
                                                  BranchMask mask = {}) {
    std::vector<double> grad(set.param_count(), 0.0);
    const auto g = composite_backward(fwd.ind, fwd.dep, grad_image);

    if (mask.curves && !fwd.visible.empty()) {
        std::vector<std::size_t> visible;
        const auto strokes = detail::visible_strokes(cam, set, visible);
        const auto dq = rasterize_strokes_backward(strokes, cam.width, cam.height, s.raster, g.ind);
        for (std::size_t k = 0; k < visible.size(); ++k) {
            const auto &curve = set.curves[visible[k]];
            for (int j = 0; j < 4; ++j) {
                const Vec3 d = projection_jacobian(cam, curve.points[j]).transpose() * dq[k][j];
                for (int c = 0; c < 3; ++c) grad[curve_param_count * visible[k] + 3 * j + c] = d[c];
            }
        }
    }
    if (mask.quadrics && !set.quadrics.empty()) {
        const auto dsq = render_contour_backward(cam, set.quadrics, s.contour_for(cam), g.dep);
        const std::size_t off = set.quadric_offset();
        for (std::size_t q = 0; q < dsq.size(); ++q)
            for (std::size_t i = 0; i < superquadric_param_count; ++i)
                grad[off + superquadric_param_count * q + i] = dsq[q][i];
    }
    return grad;
}

} // namespace sketch3d
