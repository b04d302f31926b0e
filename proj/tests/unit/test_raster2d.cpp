#include "sketch3d/raster2d.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace sketch3d;

namespace {

Curve2D random_stroke(std::mt19937_64 &rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    return {Vec2(u(rng), u(rng)), Vec2(u(rng), u(rng)), Vec2(u(rng), u(rng)), Vec2(u(rng), u(rng))};
}

// Dense sampling oracle for the closest point.
std::pair<double, double> dense_nearest(const Curve2D &c, const Vec2 &p, int n = 100000) {
    double best = std::numeric_limits<double>::infinity(), best_t = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double t = i / double(n);
        const double d = (bezier_eval(c, t) - p).norm();
        if (d < best) {
            best = d;
            best_t = t;
        }
    }
    return {best, best_t};
}

double image_sum(const ImageBuffer &img) {
    double s = 0.0;
    for (double v : img.pixels()) s += v;
    return s;
}

} // namespace

TEST(DistanceToCubic, StraightSegment) {
    const Curve2D c{Vec2(0, 0), Vec2(1, 0), Vec2(2, 0), Vec2(3, 0)};
    const auto d = distance_to_cubic(c, Vec2(1.5, 2.0));
    EXPECT_NEAR(d.distance, 2.0, 1e-9);
    EXPECT_NEAR(d.t, 0.5, 1e-6);
}

TEST(DistanceToCubic, FirstControlPoint) {
    const Curve2D c{Vec2(1, 1), Vec2(4, 9), Vec2(7, -3), Vec2(10, 2)};
    const auto d = distance_to_cubic(c, c[0]);
    EXPECT_NEAR(d.distance, 0.0, 1e-12);
    EXPECT_NEAR(d.t, 0.0, 1e-9);
}

TEST(DistanceToCubic, MatchesDenseSampling) {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(-10.0, 60.0);
    for (int k = 0; k < 30; ++k) {
        const auto c = random_stroke(rng, 0.0, 50.0);
        const Vec2 p(u(rng), u(rng));
        const auto d = distance_to_cubic(c, p);
        const auto [oracle, t] = dense_nearest(c, p);
        EXPECT_NEAR(d.distance, oracle, 1e-3) << "case " << k;
        EXPECT_NEAR((bezier_eval(c, d.t) - p).norm(), d.distance, 1e-9);
    }
}

TEST(RasterizeStrokes, EmptyListIsWhite) {
    const auto img = rasterize_strokes({}, 16, 12, RasterConfig{});
    for (double v : img.pixels()) EXPECT_EQ(v, 1.0);
}

TEST(RasterizeStrokes, StrokeThroughPixelCenterIsDark) {
    const Curve2D c{Vec2(0, 10.5), Vec2(7, 10.5), Vec2(14, 10.5), Vec2(20, 10.5)};
    const std::vector<Curve2D> strokes{c};
    const auto img = rasterize_strokes(strokes, 21, 21, RasterConfig{4.0, 1.0});
    EXPECT_LE(img(10, 10), 0.05);
}

TEST(RasterizeStrokes, OutsideTransitionBandIsExactlyWhite) {
    const Curve2D c{Vec2(0, 10.5), Vec2(7, 10.5), Vec2(14, 10.5), Vec2(20, 10.5)};
    const std::vector<Curve2D> strokes{c};
    const RasterConfig cfg{3.0, 1.0};
    const auto img = rasterize_strokes(strokes, 21, 21, cfg);
    for (int y = 0; y < 21; ++y) {
        for (int x = 0; x < 21; ++x) {
            const double d = distance_to_cubic(c, Vec2(x + 0.5, y + 0.5)).distance;
            if (d >= 0.5 * cfg.stroke_width + cfg.softness) {
                EXPECT_EQ(img(x, y), 1.0);
            }
        }
    }
}

TEST(RasterizeStrokes, OutputInUnitRange) {
    std::mt19937_64 rng(22);
    std::vector<Curve2D> strokes;
    for (int k = 0; k < 12; ++k) strokes.push_back(random_stroke(rng, -5.0, 45.0));
    const auto img = rasterize_strokes(strokes, 40, 40, RasterConfig{});
    for (double v : img.pixels()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(RasterizeStrokes, OrderInvariant) {
    std::mt19937_64 rng(23);
    std::vector<Curve2D> strokes;
    for (int k = 0; k < 6; ++k) strokes.push_back(random_stroke(rng, 0.0, 48.0));
    const auto a = rasterize_strokes(strokes, 48, 48, RasterConfig{});
    for (int trial = 0; trial < 5; ++trial) {
        std::shuffle(strokes.begin(), strokes.end(), rng);
        const auto b = rasterize_strokes(strokes, 48, 48, RasterConfig{});
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
    }
}

TEST(RasterizeStrokes, IntegerTranslationShiftsImage) {
    std::mt19937_64 rng(24);
    std::vector<Curve2D> strokes{random_stroke(rng, 12.0, 28.0), random_stroke(rng, 12.0, 28.0)};
    auto shifted = strokes;
    for (auto &c : shifted)
        for (auto &p : c) p += Vec2(5, 3);
    const auto a = rasterize_strokes(strokes, 48, 48, RasterConfig{});
    const auto b = rasterize_strokes(shifted, 48, 48, RasterConfig{});
    for (int y = 0; y < 40; ++y)
        for (int x = 0; x < 40; ++x) EXPECT_NEAR(b(x + 5, y + 3), a(x, y), 1e-9);
}

TEST(RasterizeStrokesBackward, ZeroUpstreamGivesZeroGradient) {
    std::mt19937_64 rng(25);
    const std::vector<Curve2D> strokes{random_stroke(rng, 0.0, 30.0)};
    const auto g = rasterize_strokes_backward(strokes, 32, 32, RasterConfig{}, ImageBuffer(32, 32));
    for (const auto &p : g[0]) EXPECT_EQ(p, Vec2::Zero());
}

TEST(RasterizeStrokesBackward, MatchesFiniteDifferences) {
    std::mt19937_64 rng(26);
    const RasterConfig cfg{3.0, 1.0};
    const int w = 48, h = 48;
    int checked = 0;
    for (int scene = 0; scene < 20; ++scene) {
        std::vector<Curve2D> strokes;
        const int n = 1 + scene % 3;
        for (int k = 0; k < n; ++k) strokes.push_back(random_stroke(rng, 4.0, 44.0));
        std::uniform_real_distribution<double> gw(-1.0, 1.0);
        ImageBuffer up(w, h);
        for (auto &v : up.pixels()) v = gw(rng);
        auto loss = [&](const std::vector<Curve2D> &s) {
            const auto img = rasterize_strokes(s, w, h, cfg);
            double acc = 0.0;
            for (std::size_t i = 0; i < img.size(); ++i) acc += up[i] * img[i];
            return acc;
        };
        const auto g = rasterize_strokes_backward(strokes, w, h, cfg, up);
        for (std::size_t s = 0; s < strokes.size(); ++s) {
            for (int j = 0; j < 4; ++j) {
                for (int c = 0; c < 2; ++c) {
                    auto plus = strokes, minus = strokes;
                    const double step = 1e-3;
                    plus[s][j][c] += step;
                    minus[s][j][c] -= step;
                    const double fd = (loss(plus) - loss(minus)) / (2 * step);
                    const double an = g[s][j][c];
                    EXPECT_LT(std::abs(an - fd), 1e-2 * std::max(1.0, std::abs(fd)))
                        << "scene " << scene << " stroke " << s << " point " << j << " coord " << c;
                    ++checked;
                }
            }
        }
    }
    EXPECT_GT(checked, 0);
}

TEST(RasterizeStrokesBackward, SumLossMatchesFiniteDifferences) {
    const Curve2D c{Vec2(5.2, 8.1), Vec2(14.7, 30.3), Vec2(25.9, -2.0), Vec2(35.4, 20.6)};
    const std::vector<Curve2D> strokes{c};
    const RasterConfig cfg{3.0, 1.0};
    const auto g = rasterize_strokes_backward(strokes, 40, 40, cfg, ImageBuffer(40, 40, 1.0));
    for (int j = 0; j < 4; ++j) {
        for (int k = 0; k < 2; ++k) {
            auto plus = strokes, minus = strokes;
            plus[0][j][k] += 1e-3;
            minus[0][j][k] -= 1e-3;
            const double fd =
                (image_sum(rasterize_strokes(plus, 40, 40, cfg)) - image_sum(rasterize_strokes(minus, 40, 40, cfg))) / 2e-3;
            EXPECT_LT(std::abs(g[0][j][k] - fd), 1e-2 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST(RasterizeStrokesBackward, DisjointStrokesAreIndependent) {
    const Curve2D a{Vec2(2, 2), Vec2(6, 8), Vec2(10, 2), Vec2(14, 8)};
    const Curve2D b{Vec2(40, 40), Vec2(44, 50), Vec2(50, 40), Vec2(56, 50)};
    Curve2D b_moved = b;
    for (auto &p : b_moved) p += Vec2(1.3, -0.7);
    const ImageBuffer up(64, 64, 1.0);
    const std::vector<Curve2D> s1{a, b}, s2{a, b_moved};
    const auto g1 = rasterize_strokes_backward(s1, 64, 64, RasterConfig{}, up);
    const auto g2 = rasterize_strokes_backward(s2, 64, 64, RasterConfig{}, up);
    for (int j = 0; j < 4; ++j) EXPECT_EQ(g1[0][j], g2[0][j]);
}

TEST(RasterizeStrokes, DefaultWidthScalesWithResolution) {
    EXPECT_DOUBLE_EQ(default_stroke_width(400, 400), 3.0);
    EXPECT_DOUBLE_EQ(default_stroke_width(800, 800), 6.0);
    EXPECT_DOUBLE_EQ(default_stroke_width(200, 400), 1.5);
}
