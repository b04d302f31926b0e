#pragma once

// Image losses: Barron's robust wrapper, cosine distance, pixel L2, an
// edge distance-transform (chamfer) loss, and the per-view total loss that
// combines a structural and a semantic term through a pluggable backend.

#include "sketch3d/common.hpp"
#include "sketch3d/image.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace sketch3d {

// ---------------------------------------------------------------------------
// Robust loss

/// rho(x, alpha, c); alpha = 0 and alpha = 2 use their limit forms.
inline double robust_loss(double x, double alpha, double c) {
    if (!(c > 0.0)) throw DomainError("robust_loss: c must be positive");
    const double z = (x / c) * (x / c);
    if (alpha == 2.0) return 0.5 * z;
    if (alpha == 0.0) return std::log1p(0.5 * z);
    const double k = std::abs(alpha - 2.0);
    return k / alpha * (std::pow(z / k + 1.0, 0.5 * alpha) - 1.0);
}

/// d rho / d x.
inline double robust_loss_derivative(double x, double alpha, double c) {
    if (!(c > 0.0)) throw DomainError("robust_loss: c must be positive");
    const double z = (x / c) * (x / c);
    const double dz = 2.0 * x / (c * c);
    if (alpha == 2.0) return 0.5 * dz;
    if (alpha == 0.0) return 0.5 * dz / (0.5 * z + 1.0);
    const double k = std::abs(alpha - 2.0);
    return 0.5 * std::pow(z / k + 1.0, 0.5 * alpha - 1.0) * dz;
}

// ---------------------------------------------------------------------------
// Plain distances

inline double cosine_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DomainError("cosine_distance: length mismatch");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) throw DomainError("cosine_distance: zero vector");
    return 1.0 - ab / std::sqrt(aa * bb);
}

/// A scalar loss together with its gradient with respect to the render.
struct LossValue {
    double value = 0.0;
    ImageBuffer grad;
};

inline LossValue pixel_l2(const ImageBuffer &target, const ImageBuffer &render) {
    require_same_shape(target, render, "pixel_l2");
    LossValue out{0.0, ImageBuffer(render.width(), render.height())};
    const double n = static_cast<double>(render.size());
    for (std::size_t i = 0; i < render.size(); ++i) {
        const double r = render[i] - target[i];
        out.value += r * r;
        out.grad[i] = 2.0 * r / n;
    }
    out.value /= n;
    return out;
}

// ---------------------------------------------------------------------------
// Distance transform

namespace detail {

// Lower envelope of parabolas: exact 1D squared distance transform.
inline void squared_distance_1d(std::span<const double> f, std::span<double> d, std::vector<int> &v,
                                std::vector<double> &z) {
    const int n = static_cast<int>(f.size());
    constexpr double inf = std::numeric_limits<double>::infinity();
    v.assign(n, 0);
    z.assign(n + 1, 0.0);
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == inf) continue;
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -inf;
            z[1] = inf;
            continue;
        }
        // z[0] = -inf, so popping stops at the first parabola.
        double s;
        for (;;) {
            const int p = v[k];
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * (q - p));
            if (s > z[k]) break;
            --k;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }
    if (k < 0) {
        std::fill(d.begin(), d.end(), inf);
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[j + 1] < q) ++j;
        const double dq = q - v[j];
        d[q] = dq * dq + f[v[j]];
    }
}

} // namespace detail

/// Exact Euclidean distance (in pixels) from every pixel to the nearest
/// pixel where mask is set. Requires at least one set pixel.
inline ImageBuffer euclidean_distance_transform(const std::vector<bool> &mask, int width, int height) {
    if (mask.size() != static_cast<std::size_t>(width) * height) {
        throw DomainError("distance transform: mask size mismatch");
    }
    if (std::find(mask.begin(), mask.end(), true) == mask.end()) {
        throw DomainError("distance transform: no edge pixels");
    }
    constexpr double inf = std::numeric_limits<double>::infinity();
    ImageBuffer out(width, height);
    for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] ? 0.0 : inf;

    std::vector<int> v;
    std::vector<double> z;
    std::vector<double> f(static_cast<std::size_t>(std::max(width, height)));
    std::vector<double> d(f.size());
    for (int x = 0; x < width; ++x) {
        for (int y = 0; y < height; ++y) f[y] = out(x, y);
        detail::squared_distance_1d(std::span(f).first(height), std::span(d).first(height), v, z);
        for (int y = 0; y < height; ++y) out(x, y) = d[y];
    }
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) f[x] = out(x, y);
        detail::squared_distance_1d(std::span(f).first(width), std::span(d).first(width), v, z);
        for (int x = 0; x < width; ++x) out(x, y) = std::sqrt(d[x]);
    }
    return out;
}

/// Edge set of an ink-on-white image: pixels darker than 0.5.
inline std::vector<bool> edge_mask(const ImageBuffer &img) {
    std::vector<bool> mask(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) mask[i] = img[i] < 0.5;
    return mask;
}

/// Ink-weighted mean distance of the render's ink to the target edge set,
/// given the target's distance transform. A render without ink scores 0.
inline LossValue distance_transform_loss(const ImageBuffer &edge_distance, const ImageBuffer &render) {
    require_same_shape(edge_distance, render, "distance_transform_loss");
    LossValue out{0.0, ImageBuffer(render.width(), render.height())};
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < render.size(); ++i) {
        const double ink = 1.0 - render[i];
        num += ink * edge_distance[i];
        den += ink;
    }
    if (den <= 0.0) return out;
    out.value = num / den;
    // ink = 1 - pixel, so d L / d pixel = -(DT - L) / sum(ink).
    for (std::size_t i = 0; i < render.size(); ++i) out.grad[i] = -(edge_distance[i] - out.value) / den;
    return out;
}

inline LossValue distance_transform_loss_from_edges(const ImageBuffer &target_edges, const ImageBuffer &render) {
    return distance_transform_loss(
        euclidean_distance_transform(edge_mask(target_edges), target_edges.width(), target_edges.height()), render);
}

/// Cosine distance between the ink vectors (1 - pixel) of two images. Two
/// blank images score 0; one blank image scores 1 with zero gradient.
inline LossValue ink_cosine_distance(const ImageBuffer &target, const ImageBuffer &render) {
    require_same_shape(target, render, "ink_cosine_distance");
    LossValue out{0.0, ImageBuffer(render.width(), render.height())};
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < render.size(); ++i) {
        const double a = 1.0 - target[i];
        const double b = 1.0 - render[i];
        ab += a * b;
        aa += a * a;
        bb += b * b;
    }
    if (aa == 0.0 && bb == 0.0) return out;
    if (aa == 0.0 || bb == 0.0) {
        out.value = 1.0;
        return out;
    }
    const double na = std::sqrt(aa), nb = std::sqrt(bb);
    const double cos = ab / std::sqrt(aa * bb);
    out.value = 1.0 - cos;
    // d(1 - cos)/d b_i = -(a_i / |a| - cos b_i / |b|) / |b|; pixel = 1 - b.
    // Identical images give exactly cos = 1 and a zero gradient.
    for (std::size_t i = 0; i < render.size(); ++i) {
        const double a = 1.0 - target[i];
        const double b = 1.0 - render[i];
        out.grad[i] = (a / na - cos * b / nb) / nb;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Backends

/// A target view as seen by the losses: the grayscale image used by the
/// built-in losses, optional interleaved RGB for remote models, and the
/// distance transform of the target's edge set (empty if it has none).
struct TargetImage {
    ImageBuffer gray;
    std::vector<float> rgb;
    ImageBuffer edge_distance;

    TargetImage() = default;
    explicit TargetImage(ImageBuffer gray_, std::vector<float> rgb_ = {})
        : gray(std::move(gray_)), rgb(std::move(rgb_)) {
        if (!rgb.empty() && rgb.size() != 3 * gray.size()) throw DomainError("target RGB size mismatch");
        const auto mask = edge_mask(gray);
        if (std::find(mask.begin(), mask.end(), true) != mask.end()) {
            edge_distance = euclidean_distance_transform(mask, gray.width(), gray.height());
        }
    }

    bool has_edges() const { return !edge_distance.empty(); }
};

class PerceptualBackend {
public:
    virtual ~PerceptualBackend() = default;
    virtual std::string name() const = 0;
    virtual LossValue structural(const TargetImage &target, const ImageBuffer &render) = 0;
    virtual LossValue semantic(const TargetImage &target, const ImageBuffer &render) = 0;
    /// Largest number of concurrent calls the backend accepts; 0 = any.
    virtual int max_concurrency() const { return 0; }
};

/// Built-in backends share the ink-cosine semantic term.
class LocalBackend : public PerceptualBackend {
public:
    LossValue semantic(const TargetImage &target, const ImageBuffer &render) override {
        return ink_cosine_distance(target.gray, render);
    }
};

class PixelL2Backend final : public LocalBackend {
public:
    std::string name() const override { return "pixel-l2"; }
    LossValue structural(const TargetImage &target, const ImageBuffer &render) override {
        return pixel_l2(target.gray, render);
    }
};

class DistanceTransformBackend final : public LocalBackend {
public:
    std::string name() const override { return "distance-transform"; }
    LossValue structural(const TargetImage &target, const ImageBuffer &render) override {
        if (!target.has_edges()) throw DomainError("distance_transform_loss: target has no edge pixels");
        return distance_transform_loss(target.edge_distance, render);
    }
};

/// pixel_l2 + weight * distance_transform_loss. A target without edges
/// contributes only the L2 part.
class CombinedBackend final : public LocalBackend {
public:
    explicit CombinedBackend(double dt_weight) : dt_weight_(dt_weight) {}
    std::string name() const override { return "l2+dt"; }
    LossValue structural(const TargetImage &target, const ImageBuffer &render) override {
        auto out = pixel_l2(target.gray, render);
        if (!target.has_edges() || dt_weight_ == 0.0) return out;
        const auto dt = distance_transform_loss(target.edge_distance, render);
        out.value += dt_weight_ * dt.value;
        for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += dt_weight_ * dt.grad[i];
        return out;
    }

private:
    double dt_weight_;
};

// ---------------------------------------------------------------------------
// Total loss

struct LossConfig {
    double lambda = 1.0;
    double robust_alpha = 1.0;
    double robust_c = 0.1;
    bool apply_robust = true;
    double semantic_weight = 1.0;

    void validate() const {
        if (!(lambda >= 0.0)) throw DomainError("loss config: lambda must be non-negative");
        if (!(robust_c > 0.0)) throw DomainError("loss config: robust_c must be positive");
        if (!(semantic_weight >= 0.0)) throw DomainError("loss config: semantic_weight must be non-negative");
    }
};

/// A backend failure tagged with the batch position of the view.
struct ViewLossError : Error {
    ViewLossError(const std::string &what, std::size_t view_)
        : Error("view " + std::to_string(view_) + ": " + what), view(view_) {}
    std::size_t view;
};

struct ViewPair {
    const TargetImage *target;
    const ImageBuffer *render;
};

struct TotalLoss {
    double value = 0.0;
    std::vector<double> per_view;
    std::vector<ImageBuffer> grads;
};

/// Sum over views of lambda * rho(structural) + semantic, with the
/// gradient of each view's term with respect to its render.
inline TotalLoss total_loss(std::span<const ViewPair> views, const LossConfig &cfg, PerceptualBackend &backend) {
    cfg.validate();
    TotalLoss out;
    out.per_view.resize(views.size());
    out.grads.resize(views.size());
    auto one = [&](std::size_t v) {
        try {
            const auto &tgt = *views[v].target;
            const auto &ren = *views[v].render;
            require_same_shape(tgt.gray, ren, "total_loss");
            ImageBuffer grad(ren.width(), ren.height());
            double value = 0.0;
            if (cfg.lambda != 0.0) {
                const auto s = backend.structural(tgt, ren);
                double scale = cfg.lambda;
                if (cfg.apply_robust) {
                    value += cfg.lambda * robust_loss(s.value, cfg.robust_alpha, cfg.robust_c);
                    scale *= robust_loss_derivative(s.value, cfg.robust_alpha, cfg.robust_c);
                } else {
                    value += cfg.lambda * s.value;
                }
                for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += scale * s.grad[i];
            }
            if (cfg.semantic_weight != 0.0) {
                const auto m = backend.semantic(tgt, ren);
                value += cfg.semantic_weight * m.value;
                for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += cfg.semantic_weight * m.grad[i];
            }
            out.per_view[v] = value;
            out.grads[v] = std::move(grad);
        } catch (const ViewLossError &) {
            throw;
        } catch (const std::exception &e) {
            throw ViewLossError(e.what(), v);
        }
    };
    if (backend.max_concurrency() == 1) {
        for (std::size_t v = 0; v < views.size(); ++v) one(v);
    } else {
        parallel::parallel_for(views.size(), one);
    }
    for (double v : out.per_view) out.value += v;
    return out;
}

} // namespace sketch3d
