#pragma once

// Bezier curves, pinhole/orthographic cameras and superquadric implicit
// surfaces. All functions are pure. Parameter derivatives of the implicit
// function are obtained by forward-mode dual numbers (ceres::Jet) running
// through the same templated code as the scalar path.

#include "sketch3d/common.hpp"

#include <ceres/jet.h>

#include <array>
#include <cmath>
#include <span>
#include <sstream>

namespace sketch3d {

// ---------------------------------------------------------------------------
// Scalar helpers shared by the double and Jet code paths.

inline double value_of(double x) { return x; }
template <typename T, int N>
double value_of(const ceres::Jet<T, N> &x) { return x.a; }

/// base^exponent for base >= 0. Returns an exact zero (with zero
/// derivatives) at base == 0, which is the correct limit for every exponent
/// > 1 used here and avoids log(0) in the dual-number path.
template <typename T>
T nonneg_pow(const T &base, const T &exponent) {
    using std::exp;
    using std::log;
    if (value_of(base) <= 0.0) return T(0.0);
    return exp(exponent * log(base));
}

template <typename T>
T abs_value(const T &x) { return value_of(x) < 0.0 ? -x : x; }

template <typename T>
T sign_of(const T &x) {
    const double v = value_of(x);
    return T(v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
}

template <typename T>
using Vec2T = Eigen::Matrix<T, 2, 1>;
template <typename T>
using Vec3T = Eigen::Matrix<T, 3, 1>;
template <typename T>
using Mat3T = Eigen::Matrix<T, 3, 3>;

// ---------------------------------------------------------------------------
// Bezier curves

inline void check_unit_interval(double t) {
    if (!(t >= 0.0 && t <= 1.0)) {
        std::ostringstream os;
        os << "curve parameter t=" << t << " outside [0,1]";
        throw DomainError(os.str());
    }
}

template <typename T>
T bernstein_basis(int j, const T &t) {
    const T s = T(1.0) - t;
    switch (j) {
    case 0: return s * s * s;
    case 1: return T(3.0) * t * s * s;
    case 2: return T(3.0) * t * t * s;
    case 3: return t * t * t;
    default: throw DomainError("Bernstein index must be in 0..3");
    }
}

/// Cubic Bernstein polynomial C(3,j) t^j (1-t)^(3-j).
inline double bernstein(int j, double t) {
    check_unit_interval(t);
    return bernstein_basis(j, t);
}

template <typename Point>
Point bezier_point(const std::array<Point, 4> &ctrl, double t) {
    Point out = bernstein_basis(0, t) * ctrl[0];
    for (int j = 1; j < 4; ++j) out += bernstein_basis(j, t) * ctrl[j];
    return out;
}

template <typename Point>
Point bezier_tangent(const std::array<Point, 4> &c, double t) {
    const double s = 1.0 - t;
    return 3.0 * s * s * (c[1] - c[0]) + 6.0 * s * t * (c[2] - c[1]) + 3.0 * t * t * (c[3] - c[2]);
}

template <typename Point>
Point bezier_second_derivative(const std::array<Point, 4> &c, double t) {
    return 6.0 * (1.0 - t) * (c[2] - 2.0 * c[1] + c[0]) + 6.0 * t * (c[3] - 2.0 * c[2] + c[1]);
}

struct CubicBezier3D {
    std::array<Vec3, 4> points;

    bool finite() const {
        return std::all_of(points.begin(), points.end(), [](const Vec3 &p) { return p.allFinite(); });
    }
};

using Curve2D = std::array<Vec2, 4>;

inline Vec3 bezier_eval(const CubicBezier3D &curve, double t) {
    check_unit_interval(t);
    return bezier_point(curve.points, t);
}

inline Vec2 bezier_eval(const Curve2D &curve, double t) {
    check_unit_interval(t);
    return bezier_point(curve, t);
}

// ---------------------------------------------------------------------------
// Camera

enum class Projection { perspective, orthographic };

struct Ray {
    Vec3 origin;
    Vec3 direction; // unit length
};

/// World-to-camera pose with a pinhole (or orthographic) intrinsic model.
/// Camera frame: x right, y down, z forward. For orthographic cameras focal
/// is the scale in pixels per world unit.
struct Camera {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    double focal = 1.0;
    Vec2 principal_point = Vec2::Zero();
    int width = 1;
    int height = 1;
    Projection projection = Projection::perspective;

    static Camera look_at(const Vec3 &eye, const Vec3 &target, const Vec3 &up, double focal, int width,
                          int height) {
        const Vec3 forward = (target - eye).normalized();
        Vec3 right = forward.cross(up);
        if (right.norm() < 1e-12) {
            // Looking along the up vector: pick any perpendicular.
            right = forward.unitOrthogonal();
        }
        right.normalize();
        const Vec3 down = forward.cross(right);
        Camera cam;
        cam.rotation.row(0) = right.transpose();
        cam.rotation.row(1) = down.transpose();
        cam.rotation.row(2) = forward.transpose();
        cam.translation = -cam.rotation * eye;
        cam.focal = focal;
        cam.principal_point = Vec2(0.5 * width, 0.5 * height);
        cam.width = width;
        cam.height = height;
        return cam;
    }

    Vec3 center() const { return -rotation.transpose() * translation; }
    Vec3 forward() const { return rotation.row(2).transpose(); }
    Vec3 to_camera(const Vec3 &x) const { return rotation * x + translation; }

    /// Ray through pixel coordinate (px, py); pixel centers sit at +0.5.
    Ray ray(double px, double py) const {
        const double xn = (px - principal_point.x()) / focal;
        const double yn = (py - principal_point.y()) / focal;
        if (projection == Projection::orthographic) {
            return {rotation.transpose() * (Vec3(xn, yn, 0.0) - translation), forward()};
        }
        return {center(), (rotation.transpose() * Vec3(xn, yn, 1.0)).normalized()};
    }

    void validate() const {
        if (!rotation.allFinite() || (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
            std::abs(rotation.determinant() - 1.0) > 1e-6) {
            throw DomainError("camera rotation must be orthonormal with det +1");
        }
        if (!(focal > 0.0) || width < 1 || height < 1) {
            throw DomainError("camera needs focal > 0 and a resolution of at least 1x1");
        }
    }
};

struct ProjectedPoint {
    Vec2 pixel;
    double depth;
};

inline constexpr double default_near_plane = 1e-4;

inline ProjectedPoint project_point(const Camera &cam, const Vec3 &x, double near = default_near_plane) {
    const Vec3 xc = cam.to_camera(x);
    if (!(xc.z() > near)) {
        std::ostringstream os;
        os << "point at depth " << xc.z() << " is not in front of the camera";
        throw ProjectionError(os.str(), xc.z());
    }
    if (cam.projection == Projection::orthographic) {
        return {cam.focal * xc.head<2>() + cam.principal_point, xc.z()};
    }
    return {cam.focal * xc.head<2>() / xc.z() + cam.principal_point, xc.z()};
}

/// d pixel / d x for a world point in front of the camera.
inline Eigen::Matrix<double, 2, 3> projection_jacobian(const Camera &cam, const Vec3 &x) {
    const Vec3 xc = cam.to_camera(x);
    Eigen::Matrix<double, 2, 3> dpix_dxc;
    if (cam.projection == Projection::orthographic) {
        dpix_dxc << cam.focal, 0.0, 0.0, 0.0, cam.focal, 0.0;
    } else {
        const double iz = 1.0 / xc.z();
        dpix_dxc << cam.focal * iz, 0.0, -cam.focal * xc.x() * iz * iz, 0.0, cam.focal * iz,
            -cam.focal * xc.y() * iz * iz;
    }
    return dpix_dxc * cam.rotation;
}

/// Projects the four control points. Exact for orthographic cameras; under
/// perspective this is the constant-weight approximation of the rational
/// curve returned by rational_projection.
inline Curve2D project_curve(const Camera &cam, const CubicBezier3D &curve) {
    Curve2D out;
    for (int j = 0; j < 4; ++j) out[j] = project_point(cam, curve.points[j]).pixel;
    return out;
}

struct RationalBezier2D {
    std::array<Vec2, 4> points;
    std::array<double, 4> weights;
};

inline RationalBezier2D rational_projection(const Camera &cam, const CubicBezier3D &curve) {
    RationalBezier2D rb;
    for (int j = 0; j < 4; ++j) {
        const auto p = project_point(cam, curve.points[j]);
        rb.points[j] = p.pixel;
        rb.weights[j] = p.depth;
    }
    return rb;
}

inline Vec2 rational_bezier_eval(const RationalBezier2D &rb, double t) {
    check_unit_interval(t);
    Vec2 num = Vec2::Zero();
    double den = 0.0;
    for (int j = 0; j < 4; ++j) {
        const double bw = bernstein_basis(j, t) * rb.weights[j];
        num += bw * rb.points[j];
        den += bw;
    }
    if (den == 0.0) throw std::logic_error("rational Bezier denominator vanished");
    return num / den;
}

// ---------------------------------------------------------------------------
// Superquadrics

struct SuperquadricBounds {
    double alpha_min = 0.1;
    double alpha_max = 1.0;
    double eps_min = 0.1;
    double eps_max = 1.9;
};

inline constexpr int superquadric_param_count = 12;

/// Packed layout: alpha[0..3) epsilon[3..5) quaternion w,x,y,z [5..9)
/// translation [9..12).
template <typename T>
using SuperquadricParams = std::array<T, superquadric_param_count>;

struct Superquadric {
    Vec3 alpha = Vec3::Ones();
    Vec2 epsilon = Vec2::Ones();
    Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0); // quaternion (w, x, y, z)
    Vec3 translation = Vec3::Zero();

    SuperquadricParams<double> packed() const {
        return {alpha[0],    alpha[1],    alpha[2],    epsilon[0],     epsilon[1],     rotation[0],
                rotation[1], rotation[2], rotation[3], translation[0], translation[1], translation[2]};
    }

    static Superquadric unpack(std::span<const double, superquadric_param_count> p) {
        Superquadric sq;
        sq.alpha = Vec3(p[0], p[1], p[2]);
        sq.epsilon = Vec2(p[3], p[4]);
        sq.rotation = Vec4(p[5], p[6], p[7], p[8]);
        sq.translation = Vec3(p[9], p[10], p[11]);
        return sq;
    }

    /// Rotation R with x_world = R u + t.
    Mat3 rotation_matrix() const {
        const Eigen::Quaterniond q(rotation[0], rotation[1], rotation[2], rotation[3]);
        return q.normalized().toRotationMatrix();
    }

    /// Clamp shape parameters into bounds and renormalize the quaternion.
    void project(const SuperquadricBounds &b = {}) {
        for (int i = 0; i < 3; ++i) alpha[i] = std::clamp(alpha[i], b.alpha_min, b.alpha_max);
        for (int i = 0; i < 2; ++i) epsilon[i] = std::clamp(epsilon[i], b.eps_min, b.eps_max);
        const double n = rotation.norm();
        rotation = n > 0.0 ? Vec4(rotation / n) : Vec4(1.0, 0.0, 0.0, 0.0);
    }

    bool satisfies(const SuperquadricBounds &b = {}, double quat_tol = 1e-6) const {
        auto in = [](double v, double lo, double hi) { return std::isfinite(v) && v >= lo && v <= hi; };
        for (int i = 0; i < 3; ++i)
            if (!in(alpha[i], b.alpha_min, b.alpha_max)) return false;
        for (int i = 0; i < 2; ++i)
            if (!in(epsilon[i], b.eps_min, b.eps_max)) return false;
        return translation.allFinite() && std::abs(rotation.norm() - 1.0) <= quat_tol;
    }

    /// Radius of a sphere about the center containing every point with
    /// S <= level. The implicit function is homogeneous of degree 2/eps1,
    /// so the level set is the unit surface scaled by level^(eps1/2).
    double bounding_radius(double level) const {
        return alpha.norm() * std::pow(std::max(level, 0.0), 0.5 * epsilon[0]);
    }
};

template <typename T>
Mat3T<T> quaternion_to_matrix(const T &w0, const T &x0, const T &y0, const T &z0) {
    using std::sqrt;
    const T n = sqrt(w0 * w0 + x0 * x0 + y0 * y0 + z0 * z0);
    const T w = w0 / n, x = x0 / n, y = y0 / n, z = z0 / n;
    Mat3T<T> r;
    r(0, 0) = T(1.0) - T(2.0) * (y * y + z * z);
    r(0, 1) = T(2.0) * (x * y - w * z);
    r(0, 2) = T(2.0) * (x * z + w * y);
    r(1, 0) = T(2.0) * (x * y + w * z);
    r(1, 1) = T(1.0) - T(2.0) * (x * x + z * z);
    r(1, 2) = T(2.0) * (y * z - w * x);
    r(2, 0) = T(2.0) * (x * z - w * y);
    r(2, 1) = T(2.0) * (y * z + w * x);
    r(2, 2) = T(1.0) - T(2.0) * (x * x + y * y);
    return r;
}

template <typename T>
struct ImplicitSample {
    T value;
    Vec3T<T> gradient;
};

/// Canonical-frame implicit f(u; alpha, epsilon) and its gradient in u.
/// Base terms take |u| before the fractional powers so f is defined in
/// every octant.
template <typename T>
ImplicitSample<T> canonical_implicit(const Vec3T<T> &u, const T *alpha, const T *epsilon) {
    const T e1 = epsilon[0], e2 = epsilon[1];
    const T pw2 = T(2.0) / e2;
    const T pw1 = T(2.0) / e1;
    const T ratio = e2 / e1;

    const T ax = abs_value(u[0]) / alpha[0];
    const T ay = abs_value(u[1]) / alpha[1];
    const T az = abs_value(u[2]) / alpha[2];

    const T tx = nonneg_pow(ax, pw2);
    const T ty = nonneg_pow(ay, pw2);
    const T inner = tx + ty;
    const T outer = nonneg_pow(inner, ratio);
    const T tz = nonneg_pow(az, pw1);

    // d outer / d inner = ratio * inner^(ratio-1) = ratio * outer / inner.
    const T douter = value_of(inner) > 0.0 ? T(ratio * outer / inner) : T(0.0);
    Vec3T<T> grad_u;
    grad_u[0] = value_of(ax) > 0.0 ? T(douter * pw2 * tx / ax * sign_of(u[0]) / alpha[0]) : T(0.0);
    grad_u[1] = value_of(ay) > 0.0 ? T(douter * pw2 * ty / ay * sign_of(u[1]) / alpha[1]) : T(0.0);
    grad_u[2] = value_of(az) > 0.0 ? T(pw1 * tz / az * sign_of(u[2]) / alpha[2]) : T(0.0);
    return {outer + tz, grad_u};
}

/// S(x) = f(R^-1 (x - t)) and its closed-form spatial gradient R grad_u f.
template <typename T>
ImplicitSample<T> evaluate_superquadric(const SuperquadricParams<T> &p, const Vec3T<T> &x) {
    const Mat3T<T> rot = quaternion_to_matrix(p[5], p[6], p[7], p[8]);
    const Vec3T<T> u = rot.transpose() * (x - Vec3T<T>(p[9], p[10], p[11]));
    auto s = canonical_implicit<T>(u, &p[0], &p[3]);
    s.gradient = rot * s.gradient;
    return s;
}

inline double sq_implicit(const Superquadric &sq, const Vec3 &x) {
    return evaluate_superquadric<double>(sq.packed(), x).value;
}

/// Spatial gradient dS/dx (world frame), unnormalized.
inline Vec3 sq_gradient(const Superquadric &sq, const Vec3 &x) {
    return evaluate_superquadric<double>(sq.packed(), x).gradient;
}

/// dS/d(parameters) in packed order, by forward-mode differentiation.
inline SuperquadricParams<double> sq_implicit_param_gradient(const Superquadric &sq, const Vec3 &x) {
    using J = ceres::Jet<double, superquadric_param_count>;
    const auto packed = sq.packed();
    SuperquadricParams<J> p;
    for (int i = 0; i < superquadric_param_count; ++i) p[i] = J(packed[i], i);
    const auto s = evaluate_superquadric<J>(p, Vec3T<J>(J(x[0]), J(x[1]), J(x[2])));
    SuperquadricParams<double> g;
    for (int i = 0; i < superquadric_param_count; ++i) g[i] = s.value.v[i];
    return g;
}

struct UnionSample {
    double value;
    std::size_t index;
};

/// min_i S_i(x); ties resolve to the lowest index.
inline UnionSample sq_union(std::span<const Superquadric> sqs, const Vec3 &x) {
    if (sqs.empty()) throw DomainError("superquadric union of an empty list");
    UnionSample best{sq_implicit(sqs[0], x), 0};
    for (std::size_t i = 1; i < sqs.size(); ++i) {
        const double v = sq_implicit(sqs[i], x);
        if (v < best.value) best = {v, i};
    }
    return best;
}

inline constexpr double min_normal_magnitude = 1e-12;

/// Unit normal of the union: normalized gradient of the winning primitive.
inline Vec3 sq_normal(std::span<const Superquadric> sqs, const Vec3 &x) {
    const auto win = sq_union(sqs, x);
    const Vec3 g = sq_gradient(sqs[win.index], x);
    const double n = g.norm();
    if (!(n > min_normal_magnitude)) {
        throw DegenerateNormalError("implicit gradient vanishes; normal undefined");
    }
    return g / n;
}

/// d n / d x for a single primitive (3x3, rows = normal components).
inline Mat3 sq_normal_jacobian(const Superquadric &sq, const Vec3 &x) {
    using J = ceres::Jet<double, 3>;
    const auto packed = sq.packed();
    SuperquadricParams<J> p;
    for (int i = 0; i < superquadric_param_count; ++i) p[i] = J(packed[i]);
    const auto s = evaluate_superquadric<J>(p, Vec3T<J>(J(x[0], 0), J(x[1], 1), J(x[2], 2)));
    const Vec3T<J> n = s.gradient / s.gradient.norm();
    Mat3 out;
    for (int r = 0; r < 3; ++r) out.row(r) = n[r].v.transpose();
    return out;
}

} // namespace sketch3d
