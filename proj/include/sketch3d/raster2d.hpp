#pragma once

// Differentiable rasterizer for fixed-width cubic Bezier strokes.
//
// Coverage of a pixel by one stroke is 1 inside the half-width, falls off
// with a smoothstep over a `softness` band and is exactly 0 beyond it.
// Strokes composite as a product of transparencies, so the output does not
// depend on stroke order. Gradients use the envelope theorem on the
// closest-point parameter: d dist / d q_j = b_j(t*) (B(t*) - p) / dist.

#include "sketch3d/geometry.hpp"
#include "sketch3d/image.hpp"

#include <limits>
#include <span>
#include <vector>

namespace sketch3d {

using Stroke2D = Curve2D;

struct RasterConfig {
    double stroke_width = 3.0;
    double softness = 1.0;
};

/// 3 px at 400x400, scaled with the shorter image side.
inline double default_stroke_width(int width, int height) {
    return 3.0 * static_cast<double>(std::min(width, height)) / 400.0;
}

struct CurveDistance {
    double distance;
    double t;
};

namespace detail {

struct PolylinePoint {
    Vec2 position;
    double t;
};

// Point of the cubic's polar form; blossom(a,a,b) etc. give the control
// points of the sub-curve on [a, b].
inline Vec2 blossom(const Curve2D &c, double u1, double u2, double u3) {
    const Vec2 a0 = (1 - u1) * c[0] + u1 * c[1];
    const Vec2 a1 = (1 - u1) * c[1] + u1 * c[2];
    const Vec2 a2 = (1 - u1) * c[2] + u1 * c[3];
    const Vec2 b0 = (1 - u2) * a0 + u2 * a1;
    const Vec2 b1 = (1 - u2) * a1 + u2 * a2;
    return (1 - u3) * b0 + u3 * b1;
}

inline double point_segment_distance(const Vec2 &p, const Vec2 &a, const Vec2 &b, double &s) {
    const Vec2 ab = b - a;
    const double len2 = ab.squaredNorm();
    s = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    return (a + s * ab - p).norm();
}

} // namespace detail

inline constexpr double flatten_tolerance = 0.05;
inline constexpr int newton_max_iterations = 8;

/// Polyline approximation of a cubic with chord deviation below
/// flatten_tolerance, used to seed closest-point queries.
class FlattenedCubic {
public:
    explicit FlattenedCubic(const Curve2D &curve, double tolerance = flatten_tolerance)
        : curve_(curve), tolerance_(tolerance) {
        points_.push_back({curve[0], 0.0});
        subdivide(0.0, 1.0, 0);
        points_.push_back({curve[3], 1.0});
    }

    const Curve2D &curve() const { return curve_; }
    std::span<const detail::PolylinePoint> points() const { return points_; }
    std::size_t segment_count() const { return points_.size() - 1; }

    /// Closest point on the polyline; `segment` receives the segment index.
    CurveDistance polyline_nearest(const Vec2 &p, std::size_t &segment) const {
        CurveDistance best{std::numeric_limits<double>::infinity(), 0.0};
        for (std::size_t i = 0; i + 1 < points_.size(); ++i) {
            double s;
            const double d = detail::point_segment_distance(p, points_[i].position, points_[i + 1].position, s);
            if (d < best.distance) {
                best = {d, points_[i].t + s * (points_[i + 1].t - points_[i].t)};
                segment = i;
            }
        }
        return best;
    }

    /// Newton iterations on (B(t) - p) . B'(t) = 0 from t0; keeps whichever
    /// of the seed and the refined parameter is closer.
    CurveDistance refine(const Vec2 &p, double t0) const {
        double t = t0;
        for (int it = 0; it < newton_max_iterations; ++it) {
            const Vec2 d = bezier_point(curve_, t) - p;
            const Vec2 d1 = bezier_tangent(curve_, t);
            const Vec2 d2 = bezier_second_derivative(curve_, t);
            const double f = d.dot(d1);
            const double fp = d1.squaredNorm() + d.dot(d2);
            if (!(fp > 0.0)) break;
            const double next = std::clamp(t - f / fp, 0.0, 1.0);
            const bool done = std::abs(next - t) < 1e-12;
            t = next;
            if (done) break;
        }
        const double d_seed = (bezier_point(curve_, t0) - p).norm();
        const double d_new = (bezier_point(curve_, t) - p).norm();
        return d_new <= d_seed ? CurveDistance{d_new, t} : CurveDistance{d_seed, t0};
    }

    /// Refines every segment whose polyline distance is within twice the
    /// flattening tolerance of the best one.
    CurveDistance nearest(const Vec2 &p) const {
        std::size_t seg = 0;
        const auto coarse = polyline_nearest(p, seg);
        CurveDistance best = refine(p, coarse.t);
        const double window = coarse.distance + 2.0 * tolerance_;
        for (std::size_t i = 0; i + 1 < points_.size(); ++i) {
            if (i == seg) continue;
            double s;
            const double d = detail::point_segment_distance(p, points_[i].position, points_[i + 1].position, s);
            if (d <= window) {
                const auto c = refine(p, points_[i].t + s * (points_[i + 1].t - points_[i].t));
                if (c.distance < best.distance) best = c;
            }
        }
        return best;
    }

private:
    void subdivide(double a, double b, int depth) {
        const Vec2 c0 = detail::blossom(curve_, a, a, a);
        const Vec2 c1 = detail::blossom(curve_, a, a, b);
        const Vec2 c2 = detail::blossom(curve_, a, b, b);
        const Vec2 c3 = detail::blossom(curve_, b, b, b);
        double s;
        const double flat = std::max(detail::point_segment_distance(c1, c0, c3, s),
                                     detail::point_segment_distance(c2, c0, c3, s));
        if (flat <= tolerance_ || depth >= 16) return;
        const double m = 0.5 * (a + b);
        subdivide(a, m, depth + 1);
        points_.push_back({bezier_point(curve_, m), m});
        subdivide(m, b, depth + 1);
    }

    Curve2D curve_;
    double tolerance_;
    std::vector<detail::PolylinePoint> points_;
};

/// Minimum distance from `pixel` to the curve and the minimizing t in [0,1].
inline CurveDistance distance_to_cubic(const Curve2D &curve, const Vec2 &pixel) {
    return FlattenedCubic(curve).nearest(pixel);
}

// ---------------------------------------------------------------------------

struct CoverageSample {
    std::size_t pixel;
    double coverage;
    double dcoverage_ddist; // zero outside the transition band
    double t;
    Vec2 offset; // B(t*) - p
};

namespace detail {

inline double smoothstep(double u) { return u * u * (3.0 - 2.0 * u); }

// Coverage samples of one stroke. Pixels are visited in row-major order.
inline std::vector<CoverageSample> stroke_coverage(const Curve2D &curve, int width, int height,
                                                   const RasterConfig &cfg) {
    std::vector<CoverageSample> out;
    const double half = 0.5 * cfg.stroke_width;
    const double reach = half + cfg.softness;
    Vec2 lo = curve[0], hi = curve[0];
    for (const auto &q : curve) {
        lo = lo.cwiseMin(q);
        hi = hi.cwiseMax(q);
    }
    if (!lo.allFinite() || !hi.allFinite()) return out;
    const int x0 = std::max(0, static_cast<int>(std::floor(lo.x() - reach - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(lo.y() - reach - 0.5)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(hi.x() + reach)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(hi.y() + reach)));
    if (x0 > x1 || y0 > y1) return out;

    // Splat polyline segments into a local best-distance map, then refine
    // only pixels that can land inside the stroke's reach.
    const FlattenedCubic flat(curve);
    const int bw = x1 - x0 + 1, bh = y1 - y0 + 1;
    std::vector<double> best(static_cast<std::size_t>(bw) * bh, std::numeric_limits<double>::infinity());
    std::vector<double> seed(best.size(), 0.0);
    const auto pts = flat.points();
    const double splat = reach + 2.0 * flatten_tolerance;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const Vec2 a = pts[i].position, b = pts[i + 1].position;
        const int sx0 = std::max(x0, static_cast<int>(std::floor(std::min(a.x(), b.x()) - splat - 0.5)));
        const int sx1 = std::min(x1, static_cast<int>(std::ceil(std::max(a.x(), b.x()) + splat)));
        const int sy0 = std::max(y0, static_cast<int>(std::floor(std::min(a.y(), b.y()) - splat - 0.5)));
        const int sy1 = std::min(y1, static_cast<int>(std::ceil(std::max(a.y(), b.y()) + splat)));
        for (int y = sy0; y <= sy1; ++y) {
            for (int x = sx0; x <= sx1; ++x) {
                double s;
                const double d = point_segment_distance(Vec2(x + 0.5, y + 0.5), a, b, s);
                const std::size_t k = static_cast<std::size_t>(y - y0) * bw + (x - x0);
                if (d < best[k]) {
                    best[k] = d;
                    seed[k] = pts[i].t + s * (pts[i + 1].t - pts[i].t);
                }
            }
        }
    }
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const std::size_t k = static_cast<std::size_t>(y - y0) * bw + (x - x0);
            if (!(best[k] < reach + flatten_tolerance)) continue;
            const Vec2 p(x + 0.5, y + 0.5);
            const auto cd = flat.refine(p, seed[k]);
            if (cd.distance >= reach) continue;
            CoverageSample cs{static_cast<std::size_t>(y) * width + x, 1.0, 0.0, cd.t,
                              bezier_point(curve, cd.t) - p};
            if (cd.distance > half) {
                const double u = (cd.distance - half) / cfg.softness;
                cs.coverage = 1.0 - smoothstep(u);
                cs.dcoverage_ddist = -6.0 * u * (1.0 - u) / cfg.softness;
            }
            out.push_back(cs);
        }
    }
    return out;
}

inline std::vector<std::vector<CoverageSample>> all_coverage(std::span<const Stroke2D> strokes, int width,
                                                             int height, const RasterConfig &cfg) {
    std::vector<std::vector<CoverageSample>> cov(strokes.size());
    parallel::parallel_for(strokes.size(),
                           [&](std::size_t s) { cov[s] = stroke_coverage(strokes[s], width, height, cfg); });
    return cov;
}

} // namespace detail

inline ImageBuffer rasterize_strokes(std::span<const Stroke2D> strokes, int width, int height,
                                     const RasterConfig &cfg) {
    if (width < 1 || height < 1) throw DomainError("canvas dimensions must be at least 1");
    ImageBuffer img = ImageBuffer::white(width, height);
    for (const auto &samples : detail::all_coverage(strokes, width, height, cfg)) {
        for (const auto &cs : samples) img[cs.pixel] *= 1.0 - cs.coverage;
    }
    return img;
}

/// Gradient of sum_p grad_out(p) * image(p) with respect to every control
/// point coordinate, one array of four pixel-space vectors per stroke.
inline std::vector<std::array<Vec2, 4>> rasterize_strokes_backward(std::span<const Stroke2D> strokes, int width,
                                                                   int height, const RasterConfig &cfg,
                                                                   const ImageBuffer &grad_out) {
    if (grad_out.width() != width || grad_out.height() != height) {
        throw DomainError("rasterize_strokes_backward: gradient image size mismatch");
    }
    const auto cov = detail::all_coverage(strokes, width, height, cfg);

    // Product of the non-opaque transparencies and the count of opaque ones,
    // so the product over all other strokes is available without division
    // by zero.
    const std::size_t n = static_cast<std::size_t>(width) * height;
    std::vector<double> partial(n, 1.0);
    std::vector<int> opaque(n, 0);
    for (const auto &samples : cov) {
        for (const auto &cs : samples) {
            const double tr = 1.0 - cs.coverage;
            if (tr == 0.0) {
                ++opaque[cs.pixel];
            } else {
                partial[cs.pixel] *= tr;
            }
        }
    }

    std::vector<std::array<Vec2, 4>> grads(strokes.size());
    parallel::parallel_for(strokes.size(), [&](std::size_t s) {
        std::array<Vec2, 4> g{Vec2::Zero(), Vec2::Zero(), Vec2::Zero(), Vec2::Zero()};
        for (const auto &cs : cov[s]) {
            if (cs.dcoverage_ddist == 0.0) continue;
            const double go = grad_out[cs.pixel];
            if (go == 0.0) continue;
            const double tr = 1.0 - cs.coverage;
            double others;
            if (tr == 0.0) {
                others = opaque[cs.pixel] == 1 ? partial[cs.pixel] : 0.0;
            } else {
                others = opaque[cs.pixel] == 0 ? partial[cs.pixel] / tr : 0.0;
            }
            // d image / d dist = -others * dc/ddist
            const double scale = -go * others * cs.dcoverage_ddist;
            const Vec2 ddist_dpoint = cs.offset / cs.offset.norm();
            for (int j = 0; j < 4; ++j) g[j] += scale * bernstein_basis(j, cs.t) * ddist_dpoint;
        }
        grads[s] = g;
    });
    return grads;
}

} // namespace sketch3d
