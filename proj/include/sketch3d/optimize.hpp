#pragma once

// Initialization, Adam, and the two-stage optimization loop: quadrics
// first, then curves.

#include "sketch3d/dataset.hpp"
#include "sketch3d/losses.hpp"
#include "sketch3d/sketch.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

namespace sketch3d {

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

enum class Stage { quadrics = 1, curves = 2, joint = 3 };

struct OptState {
    std::vector<double> params;
    std::vector<double> m;
    std::vector<double> v;
    long step = 0; // Adam steps taken in the current stage
    Stage stage = Stage::joint;

    explicit OptState(std::vector<double> p = {})
        : params(std::move(p)), m(params.size(), 0.0), v(params.size(), 0.0) {}
};

/// One bias-corrected Adam update of params[begin, end). Entries outside
/// the range, including their moments, are left untouched.
inline void adam_step(OptState &s, std::span<const double> grad, const AdamConfig &cfg, std::size_t begin = 0,
                      std::size_t end = static_cast<std::size_t>(-1)) {
    if (grad.size() != s.params.size()) throw DomainError("adam_step: gradient length mismatch");
    end = std::min(end, s.params.size());
    for (std::size_t i = begin; i < end; ++i) {
        if (!std::isfinite(grad[i])) {
            throw NumericalAbort("non-finite gradient at parameter " + std::to_string(i), s.step);
        }
    }
    ++s.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
    for (std::size_t i = begin; i < end; ++i) {
        s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * grad[i];
        s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        s.params[i] -= cfg.lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + cfg.eps);
    }
}

/// Clamps quadric shape parameters and renormalizes quaternions in a packed
/// parameter vector laid out like `layout`.
inline void project_constraints(const StrokeSet &layout, std::span<double> params, const SuperquadricBounds &b) {
    const std::size_t off = layout.quadric_offset();
    for (std::size_t q = 0; q < layout.quadrics.size(); ++q) {
        auto block = params.subspan(off + superquadric_param_count * q).first<superquadric_param_count>();
        auto sq = Superquadric::unpack(block);
        sq.project(b);
        const auto p = sq.packed();
        std::copy(p.begin(), p.end(), block.begin());
    }
}

// ---------------------------------------------------------------------------
// Farthest point sampling

/// Greedy farthest-point order over n items with a pairwise distance,
/// starting at `start`. Ties go to the lowest index.
template <typename Dist>
std::vector<std::size_t> farthest_point_order(std::size_t n, std::size_t k, std::size_t start, Dist dist) {
    if (k > n) throw DomainError("farthest point sampling: k exceeds the number of items");
    std::vector<std::size_t> chosen;
    if (k == 0) return chosen;
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::size_t cur = start;
    for (;;) {
        chosen.push_back(cur);
        if (chosen.size() == k) break;
        nearest[cur] = -1.0;
        std::size_t best = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (nearest[i] < 0.0) continue;
            nearest[i] = std::min(nearest[i], dist(cur, i));
            if (best == n || nearest[i] > nearest[best]) best = i;
        }
        cur = best;
    }
    return chosen;
}

inline std::vector<Vec3> fps_sample_from(std::span<const Vec3> points, std::size_t k, std::size_t start) {
    if (!points.empty() && start >= points.size()) throw DomainError("fps: start index out of range");
    const auto idx = farthest_point_order(points.size(), k, start,
                                          [&](std::size_t a, std::size_t b) { return (points[a] - points[b]).norm(); });
    std::vector<Vec3> out;
    for (auto i : idx) out.push_back(points[i]);
    return out;
}

/// Farthest point sampling with a seeded uniform choice of the first point.
inline std::vector<Vec3> fps_sample(std::span<const Vec3> points, std::size_t k, std::uint64_t seed) {
    if (k > points.size()) throw DomainError("fps: k exceeds the number of points");
    if (k == 0) return {};
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, points.size() - 1);
    return fps_sample_from(points, k, pick(rng));
}

// ---------------------------------------------------------------------------
// Initialization

enum class InitMethod { random_bbox, fps_points, line_segments };

struct InitConfig {
    std::size_t n_ind = 32;
    std::size_t n_dep = 4;
    InitMethod method = InitMethod::random_bbox;
    std::uint64_t seed = 0;
    double jitter = 0.02;       // fraction of the bbox diagonal
    double quadric_scale = 0.15; // fraction of the bbox diagonal
    SuperquadricBounds bounds;
};

namespace detail {

// Closest distance between two segments.
inline double segment_distance(const Segment3D &s, const Segment3D &t) {
    const Vec3 d1 = s.second - s.first, d2 = t.second - t.first, r = s.first - t.first;
    const double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
    double u = 0.0, v = 0.0;
    if (a <= 1e-300 && e <= 1e-300) return r.norm();
    if (a <= 1e-300) {
        v = std::clamp(f / e, 0.0, 1.0);
    } else {
        const double c = d1.dot(r);
        if (e <= 1e-300) {
            u = std::clamp(-c / a, 0.0, 1.0);
        } else {
            const double b = d1.dot(d2), den = a * e - b * b;
            u = den > 1e-300 ? std::clamp((b * f - c * e) / den, 0.0, 1.0) : 0.0;
            v = (b * u + f) / e;
            if (v < 0.0) {
                v = 0.0;
                u = std::clamp(-c / a, 0.0, 1.0);
            } else if (v > 1.0) {
                v = 1.0;
                u = std::clamp((b - c) / a, 0.0, 1.0);
            }
        }
    }
    return ((s.first + u * d1) - (t.first + v * d2)).norm();
}

inline Superquadric initial_quadric(const Vec3 &center, double diag, const InitConfig &cfg) {
    Superquadric sq;
    sq.alpha = Vec3::Constant(cfg.quadric_scale * diag);
    sq.translation = center;
    sq.project(cfg.bounds);
    return sq;
}

} // namespace detail

inline StrokeSet init_strokes(const Dataset &ds, const InitConfig &cfg) {
    if (cfg.n_ind + cfg.n_dep == 0) throw DomainError("init: need at least one primitive");
    const double diag = ds.bbox.diagonal();
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, cfg.jitter * diag);
    auto jitter = [&](const Vec3 &p) { return Vec3(p.x() + gauss(rng), p.y() + gauss(rng), p.z() + gauss(rng)); };
    auto uniform_in_box = [&] {
        Vec3 p;
        for (int k = 0; k < 3; ++k) p[k] = std::uniform_real_distribution<double>(ds.bbox.lo[k], ds.bbox.hi[k])(rng);
        return p;
    };
    StrokeSet set;

    switch (cfg.method) {
    case InitMethod::random_bbox:
        for (std::size_t i = 0; i < cfg.n_ind; ++i) {
            CubicBezier3D c;
            for (auto &p : c.points) p = uniform_in_box();
            set.curves.push_back(c);
        }
        for (std::size_t i = 0; i < cfg.n_dep; ++i) set.quadrics.push_back(detail::initial_quadric(uniform_in_box(), diag, cfg));
        break;

    case InitMethod::fps_points: {
        if (ds.points.empty()) throw DomainError("init fps: dataset has no points");
        for (const auto &seed : fps_sample(ds.points, cfg.n_ind, rng())) {
            CubicBezier3D c;
            c.points[0] = seed;
            for (int j = 1; j < 4; ++j) c.points[j] = jitter(seed);
            set.curves.push_back(c);
        }
        for (const auto &center : fps_sample(ds.points, cfg.n_dep, rng())) {
            set.quadrics.push_back(detail::initial_quadric(center, diag, cfg));
        }
        break;
    }

    case InitMethod::line_segments: {
        const auto &segs = ds.segments;
        if (segs.empty()) throw DomainError("init lines: dataset has no segments");
        auto order = [&](std::size_t k) {
            // FPS over segments, repeated when more are requested than exist.
            std::vector<std::size_t> out;
            std::uniform_int_distribution<std::size_t> pick(0, segs.size() - 1);
            const auto full = farthest_point_order(segs.size(), std::min(k, segs.size()), pick(rng),
                                                   [&](std::size_t a, std::size_t b) {
                                                       return detail::segment_distance(segs[a], segs[b]);
                                                   });
            for (std::size_t i = 0; i < k; ++i) out.push_back(full[i % full.size()]);
            return out;
        };
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (auto s : order(cfg.n_ind)) {
            std::array<double, 4> t;
            for (auto &x : t) x = unit(rng);
            std::sort(t.begin(), t.end());
            CubicBezier3D c;
            for (int j = 0; j < 4; ++j) c.points[j] = segs[s].first + t[j] * (segs[s].second - segs[s].first);
            set.curves.push_back(c);
        }
        for (auto s : order(cfg.n_dep)) {
            set.quadrics.push_back(detail::initial_quadric(0.5 * (segs[s].first + segs[s].second), diag, cfg));
        }
        break;
    }
    }
    set.validate(cfg.bounds);
    return set;
}

// ---------------------------------------------------------------------------
// Optimization loop

struct Schedule {
    long steps = 2000;
    double stage_split = 0.4; // fraction of steps spent on quadrics
    std::size_t batch = 4;
    std::uint64_t seed = 0;
    long checkpoint_every = 0; // 0 disables checkpoints
    AdamConfig adam_quadrics;
    AdamConfig adam_curves;
};

struct LogEntry {
    long step;
    int stage;
    double loss;
};

struct OptimizeConfig {
    LossConfig loss;
    RenderSettings render;
    Schedule schedule;
    SuperquadricBounds bounds;
    /// Robust wrapping is skipped for curve-only sketches.
    bool robust_only_with_quadrics = true;
    std::function<void(const LogEntry &)> on_step;
    std::function<void(long step, const StrokeSet &)> on_checkpoint;
};

struct OptimizeResult {
    StrokeSet strokes;
    std::vector<LogEntry> history;
};

/// Number of stage-1 (quadric) steps.
inline long quadric_steps(const StrokeSet &set, const Schedule &s) {
    if (set.quadrics.empty()) return 0;
    if (set.curves.empty()) return s.steps;
    return std::lround(s.stage_split * static_cast<double>(s.steps));
}

inline OptimizeResult optimize(const Dataset &ds, StrokeSet strokes, const OptimizeConfig &cfg,
                               PerceptualBackend &backend) {
    ds.validate();
    strokes.validate(cfg.bounds);
    const auto &sch = cfg.schedule;
    if (sch.steps < 0 || sch.batch == 0) throw DomainError("optimize: invalid schedule");
    if (!(sch.stage_split >= 0.0 && sch.stage_split <= 1.0)) throw DomainError("optimize: stage_split outside [0, 1]");

    LossConfig loss_cfg = cfg.loss;
    if (cfg.robust_only_with_quadrics && strokes.quadrics.empty()) loss_cfg.apply_robust = false;

    const std::size_t n_views = ds.views.size();
    const std::size_t batch = std::min(sch.batch, n_views);
    const long stage1 = quadric_steps(strokes, sch);
    const std::size_t q_off = strokes.quadric_offset();

    OptState state(strokes.pack());
    OptimizeResult result;
    std::mt19937_64 rng(sch.seed);
    std::vector<std::size_t> order(n_views);
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = n_views;

    // The frozen branch of each view is rendered once per stage.
    std::vector<ImageBuffer> frozen(n_views);
    Stage frozen_stage = Stage::joint;

    for (long step = 0; step < sch.steps; ++step) {
        const Stage stage = step < stage1 ? Stage::quadrics : Stage::curves;
        if (stage != state.stage) {
            state.stage = stage;
            state.step = 0;
        }
        if (stage != frozen_stage) {
            std::fill(frozen.begin(), frozen.end(), ImageBuffer());
            frozen_stage = stage;
        }

        std::vector<std::size_t> ids;
        while (ids.size() < batch) {
            if (cursor == n_views) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            ids.push_back(order[cursor++]);
        }

        std::vector<SketchRender> renders(ids.size());
        std::vector<ViewPair> pairs(ids.size());
        for (std::size_t b = 0; b < ids.size(); ++b) {
            const auto &view = ds.views[ids[b]];
            auto &fz = frozen[ids[b]];
            if (stage == Stage::quadrics) {
                if (fz.empty()) fz = render_curves(view.camera, strokes, cfg.render);
                renders[b] = render_sketch(view.camera, strokes, cfg.render, &fz, nullptr);
            } else {
                if (fz.empty()) fz = render_quadrics(view.camera, strokes, cfg.render);
                renders[b] = render_sketch(view.camera, strokes, cfg.render, nullptr, &fz);
            }
            pairs[b] = {&view.target, &renders[b].image};
        }

        TotalLoss loss;
        try {
            loss = total_loss(pairs, loss_cfg, backend);
        } catch (const ViewLossError &e) {
            throw ViewLossError(e.what(), ids[e.view]);
        }
        if (!std::isfinite(loss.value)) {
            std::ostringstream os;
            os << "non-finite loss at step " << step << " (views";
            for (auto i : ids) os << ' ' << i;
            os << ')';
            throw NumericalAbort(os.str(), step);
        }

        const BranchMask mask{stage != Stage::quadrics, stage != Stage::curves};
        std::vector<double> grad(state.params.size(), 0.0);
        for (std::size_t b = 0; b < ids.size(); ++b) {
            const auto g = render_sketch_backward(ds.views[ids[b]].camera, strokes, cfg.render, renders[b],
                                                  loss.grads[b], mask);
            for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
        }

        try {
            if (stage == Stage::quadrics) {
                adam_step(state, grad, sch.adam_quadrics, q_off, state.params.size());
                project_constraints(strokes, state.params, cfg.bounds);
            } else {
                adam_step(state, grad, sch.adam_curves, 0, q_off);
            }
        } catch (const NumericalAbort &e) {
            throw NumericalAbort(std::string(e.what()) + " at step " + std::to_string(step), step);
        }
        strokes.unpack(state.params);

        const LogEntry entry{step, static_cast<int>(stage), loss.value};
        result.history.push_back(entry);
        if (cfg.on_step) cfg.on_step(entry);
        if (cfg.on_checkpoint && sch.checkpoint_every > 0 && (step + 1) % sch.checkpoint_every == 0) {
            cfg.on_checkpoint(step + 1, strokes);
        }
    }
    result.strokes = std::move(strokes);
    return result;
}

} // namespace sketch3d
