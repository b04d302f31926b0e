#pragma once

// View-dependent contour sketches of a superquadric union, rendered by
// ray-marching a density that lives on a thin shell around S = 1 and is
// attenuated where the surface normal faces the ray.

#include "sketch3d/geometry.hpp"
#include "sketch3d/image.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace sketch3d {

struct ContourConfig {
    double gamma_min = 10.0;
    double gamma_max = 40.0;
    double a_min = 3.0;
    double a_max = 12.0;
    double b_min = 2.0;
    double b_max = 6.0;
    double eps_stab = 0.01;
    int beta = 2;
    int n_samples = 192;
    double t_near = 0.0;
    double t_far = 0.0;

    void validate() const {
        auto ordered = [](double lo, double hi) { return lo > 0.0 && lo <= hi; };
        if (!ordered(gamma_min, gamma_max) || !ordered(a_min, a_max) || !ordered(b_min, b_max)) {
            throw DomainError("contour config: bounds must satisfy 0 < min <= max");
        }
        if (!(eps_stab > 0.0)) throw DomainError("contour config: eps_stab must be positive");
        if (beta < 2 || beta % 2 != 0) throw DomainError("contour config: beta must be an even integer >= 2");
        if (n_samples < 16) throw DomainError("contour config: n_samples must be >= 16");
        if (!(t_near < t_far)) throw DomainError("contour config: t_near must be below t_far");
    }
};

// ---------------------------------------------------------------------------
// Density functions

template <typename T>
T sigmoid(const T &z) {
    using std::exp;
    if (value_of(z) >= 0.0) return T(1.0) / (T(1.0) + exp(-z));
    const T e = exp(z);
    return e / (T(1.0) + e);
}

template <typename T>
T sigma_vol(const T &s_val, const T &gamma) {
    return sigmoid(T(gamma * (T(1.0) - s_val)));
}

/// Argument of the sigmoid in sigma_surf.
template <typename T>
T surface_logit(const T &s_val, const T &gamma, const T &b, double eps_stab) {
    const T u = T(1.0) - s_val;
    const T g = gamma * u * u;
    return T(1.0) / (g + T(eps_stab)) - g - b;
}

template <typename T>
T sigma_surf(const T &s_val, const T &gamma, const T &a, const T &b, double eps_stab) {
    return a * sigmoid(surface_logit(s_val, gamma, b, eps_stab));
}

template <typename T>
struct WidthParams {
    T gamma;
    T a;
    T b;
};

namespace detail {

template <typename T>
T min_of(const T &x, const T &y) { return value_of(y) < value_of(x) ? y : x; }
template <typename T>
T max_of(const T &x, const T &y) { return value_of(y) > value_of(x) ? y : x; }

// Linear ramp from t_min at x = 0.1 to t_max at x = 1.0.
template <typename T>
T ramp_up(double t_min, double t_max, const T &x) {
    return T(t_min) + T(t_max - t_min) * (x - T(0.1)) / T(0.9);
}

// Linear ramp from t_max at x = 0.1 down to t_min at x = 0.3.
template <typename T>
T ramp_down(double t_min, double t_max, const T &x) {
    return T(t_max) - T(t_max - t_min) * (x - T(0.1)) / T(0.2);
}

} // namespace detail

/// Width-compensating (gamma, a, b) for one primitive. Vector alpha and
/// epsilon are reduced to their smallest component. Thin primitives
/// (alpha or epsilon at most 0.3) get a raised intensity a, which stays at
/// a_min otherwise.
template <typename T>
WidthParams<T> adaptive_params(const T *alpha, const T *epsilon, const ContourConfig &cfg) {
    using detail::max_of;
    using detail::min_of;
    using detail::ramp_down;
    using detail::ramp_up;
    const T al = min_of(min_of(alpha[0], alpha[1]), alpha[2]);
    const T ep = min_of(epsilon[0], epsilon[1]);

    WidthParams<T> w;
    if (value_of(ep) <= 1.0) {
        w.gamma = min_of(ramp_up(cfg.gamma_min, cfg.gamma_max, al), ramp_up(cfg.gamma_min, cfg.gamma_max, ep));
        w.b = min_of(ramp_up(cfg.b_min, cfg.b_max, al), ramp_up(cfg.b_min, cfg.b_max, ep));
    } else {
        w.gamma = min_of(ramp_up(cfg.gamma_min, cfg.gamma_max, al), T(cfg.gamma_max));
        w.b = min_of(ramp_up(cfg.b_min, cfg.b_max, al), T(cfg.b_max));
    }

    const bool thin_alpha = value_of(al) <= 0.3;
    const bool thin_eps = value_of(ep) <= 0.3;
    if (thin_alpha && thin_eps) {
        w.a = max_of(ramp_down(cfg.a_min, cfg.a_max, al), ramp_down(cfg.a_min, cfg.a_max, ep));
    } else if (thin_alpha) {
        w.a = max_of(ramp_down(cfg.a_min, cfg.a_max, al), T(cfg.a_min));
    } else if (thin_eps) {
        w.a = max_of(ramp_down(cfg.a_min, cfg.a_max, ep), T(cfg.a_min));
    } else {
        w.a = T(cfg.a_min);
    }
    // Below alpha = 0.1 (outside the parameter bounds) the ramps would
    // leave the configured ranges.
    w.gamma = max_of(w.gamma, T(cfg.gamma_min));
    w.b = max_of(w.b, T(cfg.b_min));
    w.a = min_of(w.a, T(cfg.a_max));
    return w;
}

inline WidthParams<double> adaptive_params(const Superquadric &sq, const ContourConfig &cfg) {
    return adaptive_params<double>(sq.alpha.data(), sq.epsilon.data(), cfg);
}

template <typename T>
T integer_power(const T &x, int n) {
    T r(1.0);
    for (int i = 0; i < n; ++i) r = r * x;
    return r;
}

/// Contour density in a primitive's canonical frame: u is the canonical
/// point and view_dir the view direction rotated into the same frame.
template <typename T>
T canonical_contour_density(const Vec3T<T> &u, const Vec3 &view_dir, const T *alpha, const T *epsilon,
                            const ContourConfig &cfg) {
    const auto s = canonical_implicit<T>(u, alpha, epsilon);
    const T norm = s.gradient.norm();
    if (!(value_of(norm) > min_normal_magnitude)) return T(0.0);
    const T cosine = s.gradient.dot(view_dir.cast<T>()) / norm;
    const auto w = adaptive_params<T>(alpha, epsilon, cfg);
    return (T(1.0) - integer_power(cosine, cfg.beta)) * sigma_surf<T>(s.value, w.gamma, w.a, w.b, cfg.eps_stab);
}

/// Density of the union at x for view direction d, evaluated with the
/// winning primitive. A vanishing normal contributes nothing.
inline double sigma_contour(const Vec3 &x, const Vec3 &d, std::span<const Superquadric> sqs,
                            const ContourConfig &cfg) {
    if (sqs.empty()) return 0.0;
    const auto &sq = sqs[sq_union(sqs, x).index];
    const Mat3 rt = sq.rotation_matrix().transpose();
    const Vec3 u = rt * (x - sq.translation);
    return canonical_contour_density<double>(u, rt * d, sq.alpha.data(), sq.epsilon.data(), cfg);
}

// ---------------------------------------------------------------------------
// Volume rendering

namespace detail {

// Samples whose sigmoid logit falls below this carry density < a * 1e-13
// and are skipped by the forward march.
inline constexpr double negligible_logit = -30.0;
// Gradients are accumulated only for samples above this logit.
inline constexpr double gradient_logit = -15.0;

struct PreparedPrimitive {
    Mat3 rot;
    Mat3 rot_t;
    Vec3 center;
    std::array<double, 3> alpha;
    std::array<double, 2> epsilon;
    Vec3 inv_alpha;
    double pw1, pw2, ratio;
    WidthParams<double> width;
    Vec3 cull_half_extent; // canonical box holding every point with S <= cut
    std::array<Mat3, 4> drot_t; // d R^T / d q_k for the raw quaternion

    PreparedPrimitive(const Superquadric &sq, const ContourConfig &cfg)
        : rot(sq.rotation_matrix()), rot_t(rot.transpose()), center(sq.translation),
          alpha{sq.alpha[0], sq.alpha[1], sq.alpha[2]}, epsilon{sq.epsilon[0], sq.epsilon[1]},
          inv_alpha(sq.alpha.cwiseInverse()), pw1(2.0 / sq.epsilon[0]), pw2(2.0 / sq.epsilon[1]),
          ratio(sq.epsilon[1] / sq.epsilon[0]), width(adaptive_params(sq, cfg)) {
        // gamma (1-S)^2 >= 30 pushes the logit below -30.
        const double cut = 1.0 + std::sqrt(-negligible_logit / width.gamma);
        cull_half_extent = sq.alpha * std::pow(cut, 0.5 * sq.epsilon[0]);

        using J4 = ceres::Jet<double, 4>;
        const auto r = quaternion_to_matrix(J4(sq.rotation[0], 0), J4(sq.rotation[1], 1), J4(sq.rotation[2], 2),
                                            J4(sq.rotation[3], 3));
        for (int k = 0; k < 4; ++k)
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) drot_t[k](i, j) = r(j, i).v[k];
    }

    /// Implicit value and canonical gradient; same formula as
    /// canonical_implicit with the exponents precomputed.
    ImplicitSample<double> evaluate(const Vec3 &u) const {
        const double ax = std::abs(u[0]) * inv_alpha[0];
        const double ay = std::abs(u[1]) * inv_alpha[1];
        const double az = std::abs(u[2]) * inv_alpha[2];
        const double tx = ax > 0.0 ? std::pow(ax, pw2) : 0.0;
        const double ty = ay > 0.0 ? std::pow(ay, pw2) : 0.0;
        const double tz = az > 0.0 ? std::pow(az, pw1) : 0.0;
        const double inner = tx + ty;
        const double outer = inner > 0.0 ? std::pow(inner, ratio) : 0.0;
        const double douter = inner > 0.0 ? ratio * outer / inner : 0.0;
        Vec3 g;
        g[0] = ax > 0.0 ? std::copysign(douter * pw2 * tx / ax * inv_alpha[0], u[0]) : 0.0;
        g[1] = ay > 0.0 ? std::copysign(douter * pw2 * ty / ay * inv_alpha[1], u[1]) : 0.0;
        g[2] = az > 0.0 ? std::copysign(pw1 * tz / az * inv_alpha[2], u[2]) : 0.0;
        return {outer + tz, g};
    }

    double density(const ImplicitSample<double> &s, const Vec3 &view_dir, const ContourConfig &cfg) const {
        const double norm = s.gradient.norm();
        if (!(norm > min_normal_magnitude)) return 0.0;
        const double c = s.gradient.dot(view_dir) / norm;
        return (1.0 - integer_power(c, cfg.beta)) *
               sigma_surf<double>(s.value, width.gamma, width.a, width.b, cfg.eps_stab);
    }

    /// Ray parameter interval inside the cull box, for a ray already in the
    /// canonical frame.
    bool box_interval(const Vec3 &o, const Vec3 &d, double &t0, double &t1) const {
        t0 = -std::numeric_limits<double>::infinity();
        t1 = std::numeric_limits<double>::infinity();
        for (int i = 0; i < 3; ++i) {
            const double h = cull_half_extent[i];
            if (std::abs(d[i]) < 1e-15) {
                if (std::abs(o[i]) > h) return false;
                continue;
            }
            double a = (-h - o[i]) / d[i];
            double b = (h - o[i]) / d[i];
            if (a > b) std::swap(a, b);
            t0 = std::max(t0, a);
            t1 = std::min(t1, b);
        }
        return t0 <= t1;
    }
};

struct CanonicalRay {
    Vec3 origin;
    Vec3 direction;
};

struct ShellSample {
    int k;
    std::size_t winner;
};

struct RayMarch {
    double transmittance = 1.0;
    std::vector<ShellSample> shell;
};

// Marches one ray with stratified bin-midpoint samples in [t_near, t_far],
// evaluating only bins inside some primitive's cull box.
inline RayMarch march_ray(const Ray &ray, std::span<const PreparedPrimitive> prims, const ContourConfig &cfg,
                          std::vector<CanonicalRay> &local, bool record) {
    RayMarch out;
    const double delta = (cfg.t_far - cfg.t_near) / cfg.n_samples;
    local.resize(prims.size());
    std::array<std::pair<int, int>, 16> small_ranges;
    std::vector<std::pair<int, int>> ranges;
    std::size_t n_ranges = 0;
    for (std::size_t i = 0; i < prims.size(); ++i) {
        const auto &p = prims[i];
        local[i] = {p.rot_t * (ray.origin - p.center), p.rot_t * ray.direction};
        double t0, t1;
        if (!p.box_interval(local[i].origin, local[i].direction, t0, t1)) continue;
        const int k0 = std::max(0, static_cast<int>(std::ceil((t0 - cfg.t_near) / delta - 0.5)));
        const int k1 = std::min(cfg.n_samples - 1, static_cast<int>(std::floor((t1 - cfg.t_near) / delta - 0.5)));
        if (k0 > k1) continue;
        if (n_ranges < small_ranges.size()) {
            small_ranges[n_ranges] = {k0, k1};
        } else {
            if (ranges.empty()) ranges.assign(small_ranges.begin(), small_ranges.end());
            ranges.emplace_back(k0, k1);
        }
        ++n_ranges;
    }
    if (n_ranges == 0) return out;
    std::span<std::pair<int, int>> rs = ranges.empty() ? std::span(small_ranges.data(), n_ranges) : std::span(ranges);
    std::sort(rs.begin(), rs.end());

    double tau = 0.0;
    int next = 0;
    for (auto [k0, k1] : rs) {
        for (int k = std::max(k0, next); k <= k1; ++k) {
            const double t = cfg.t_near + (k + 0.5) * delta;
            std::size_t win = 0;
            ImplicitSample<double> best{std::numeric_limits<double>::infinity(), Vec3::Zero()};
            for (std::size_t i = 0; i < prims.size(); ++i) {
                const auto e = prims[i].evaluate(local[i].origin + t * local[i].direction);
                if (e.value < best.value) {
                    best = e;
                    win = i;
                }
            }
            const auto &p = prims[win];
            const double logit = surface_logit(best.value, p.width.gamma, p.width.b, cfg.eps_stab);
            if (logit < negligible_logit) continue;
            tau += p.density(best, local[win].direction, cfg) * delta;
            if (record && logit >= gradient_logit) out.shell.push_back({k, win});
        }
        next = std::max(next, k1 + 1);
    }
    out.transmittance = std::exp(-tau);
    return out;
}

inline std::vector<PreparedPrimitive> prepare(std::span<const Superquadric> sqs, const ContourConfig &cfg) {
    std::vector<PreparedPrimitive> prims;
    prims.reserve(sqs.size());
    for (const auto &sq : sqs) prims.emplace_back(sq, cfg);
    return prims;
}

// Per-primitive gradient partial sums. Rotation and translation gradients
// are recovered at the end from the canonical-frame sensitivities:
// u = R^T (x - t) and d_c = R^T d, so dL/dt = -R sum(g_u) and
// dL/dq_k = <dR^T/dq_k, sum(g_u (x - t)^T + g_d d^T)>.
struct PrimitiveAccumulator {
    Vec3 alpha = Vec3::Zero();
    Vec2 epsilon = Vec2::Zero();
    Vec3 g_u = Vec3::Zero();
    Mat3 frame = Mat3::Zero();

    void add(const PrimitiveAccumulator &o) {
        alpha += o.alpha;
        epsilon += o.epsilon;
        g_u += o.g_u;
        frame += o.frame;
    }
};

} // namespace detail

/// Ink-on-white rendering: pixel = prod_k exp(-sigma_k delta), i.e. one
/// minus the accumulated opacity.
inline ImageBuffer render_contour(const Camera &cam, std::span<const Superquadric> sqs, const ContourConfig &cfg) {
    cfg.validate();
    ImageBuffer img = ImageBuffer::white(cam.width, cam.height);
    if (sqs.empty()) return img;
    const auto prims = detail::prepare(sqs, cfg);
    parallel::parallel_for(static_cast<std::size_t>(cam.height), [&](std::size_t row) {
        std::vector<detail::CanonicalRay> local;
        const int y = static_cast<int>(row);
        for (int x = 0; x < cam.width; ++x) {
            img(x, y) = detail::march_ray(cam.ray(x + 0.5, y + 0.5), prims, cfg, local, false).transmittance;
        }
    });
    return img;
}

using SuperquadricGradient = SuperquadricParams<double>;

/// Gradient of sum_p grad_out(p) * render_contour(p) with respect to every
/// primitive's packed parameters. Includes the normal's dependence on the
/// parameters and that of the adaptive (gamma, a, b).
inline std::vector<SuperquadricGradient> render_contour_backward(const Camera &cam, std::span<const Superquadric> sqs,
                                                                 const ContourConfig &cfg,
                                                                 const ImageBuffer &grad_out) {
    cfg.validate();
    if (grad_out.width() != cam.width || grad_out.height() != cam.height) {
        throw DomainError("render_contour_backward: gradient image size mismatch");
    }
    std::vector<SuperquadricGradient> total(sqs.size(), SuperquadricGradient{});
    if (sqs.empty()) return total;
    const auto prims = detail::prepare(sqs, cfg);
    const double delta = (cfg.t_far - cfg.t_near) / cfg.n_samples;
    // Tangents: canonical point (0..2), alpha (3..5), epsilon (6..7).
    using J = ceres::Jet<double, 8>;

    // One partial sum per image row, reduced in row order.
    std::vector<std::vector<detail::PrimitiveAccumulator>> rows(static_cast<std::size_t>(cam.height));
    parallel::parallel_for(static_cast<std::size_t>(cam.height), [&](std::size_t row) {
        std::vector<detail::PrimitiveAccumulator> acc;
        std::vector<detail::CanonicalRay> local;
        const int y = static_cast<int>(row);
        for (int x = 0; x < cam.width; ++x) {
            const double g = grad_out(x, y);
            if (g == 0.0) continue;
            const Ray ray = cam.ray(x + 0.5, y + 0.5);
            const auto march = detail::march_ray(ray, prims, cfg, local, true);
            if (march.shell.empty()) continue;
            if (acc.empty()) acc.resize(sqs.size());
            // pixel = exp(-tau): d pixel / d sigma_k = -pixel * delta.
            const double scale = -g * march.transmittance * delta;
            for (const auto &smp : march.shell) {
                const auto &p = prims[smp.winner];
                const auto &lr = local[smp.winner];
                const double t = cfg.t_near + (smp.k + 0.5) * delta;
                const Vec3 u = lr.origin + t * lr.direction;

                const std::array<J, 3> alpha{J(p.alpha[0], 3), J(p.alpha[1], 4), J(p.alpha[2], 5)};
                const std::array<J, 2> eps{J(p.epsilon[0], 6), J(p.epsilon[1], 7)};
                const Vec3T<J> uj(J(u[0], 0), J(u[1], 1), J(u[2], 2));
                const J sigma = canonical_contour_density<J>(uj, lr.direction, alpha.data(), eps.data(), cfg);

                // Direction sensitivity: sigma = (1 - c^beta) sigma_surf with
                // c = n . d_c, so d sigma / d d_c = -beta c^(beta-1) sigma_surf n.
                const auto s = canonical_implicit<double>(u, p.alpha.data(), p.epsilon.data());
                Vec3 g_d = Vec3::Zero();
                const double norm = s.gradient.norm();
                if (norm > min_normal_magnitude) {
                    const Vec3 n = s.gradient / norm;
                    const double c = n.dot(lr.direction);
                    const double surf = sigma_surf<double>(s.value, p.width.gamma, p.width.a, p.width.b, cfg.eps_stab);
                    g_d = -cfg.beta * integer_power(c, cfg.beta - 1) * surf * n;
                }

                auto &dst = acc[smp.winner];
                const Vec3 g_u(sigma.v[0], sigma.v[1], sigma.v[2]);
                dst.alpha += scale * Vec3(sigma.v[3], sigma.v[4], sigma.v[5]);
                dst.epsilon += scale * Vec2(sigma.v[6], sigma.v[7]);
                dst.g_u += scale * g_u;
                const Vec3 offset = ray.origin + t * ray.direction - p.center;
                dst.frame += scale * (g_u * offset.transpose() + g_d * ray.direction.transpose());
            }
        }
        rows[row] = std::move(acc);
    });

    std::vector<detail::PrimitiveAccumulator> sum(sqs.size());
    for (const auto &r : rows) {
        if (r.empty()) continue;
        for (std::size_t q = 0; q < sum.size(); ++q) sum[q].add(r[q]);
    }
    for (std::size_t q = 0; q < sum.size(); ++q) {
        const auto &p = prims[q];
        auto &out = total[q];
        for (int i = 0; i < 3; ++i) out[i] = sum[q].alpha[i];
        for (int i = 0; i < 2; ++i) out[3 + i] = sum[q].epsilon[i];
        for (int k = 0; k < 4; ++k) out[5 + k] = p.drot_t[k].cwiseProduct(sum[q].frame).sum();
        const Vec3 dt = -p.rot * sum[q].g_u;
        for (int i = 0; i < 3; ++i) out[9 + i] = dt[i];
    }
    return total;
}

/// March bounds covering a bounding sphere as seen from the camera.
inline void set_march_bounds(ContourConfig &cfg, const Camera &cam, const Vec3 &center, double radius) {
    // Perspective rays are parameterized by Euclidean distance from the
    // camera center, orthographic ones by depth from the image plane.
    const double dist = cam.projection == Projection::orthographic ? cam.to_camera(center).z()
                                                                   : (center - cam.center()).norm();
    cfg.t_near = std::max(dist - radius, 1e-3);
    cfg.t_far = std::max(dist + radius, cfg.t_near + 1e-3);
}

} // namespace sketch3d
