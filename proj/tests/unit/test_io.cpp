#include "sketch3d/io.hpp"

#include "support/synthetic.hpp"

#include <gtest/gtest.h>

#include <random>
#include <regex>

#include <unistd.h>

using namespace sketch3d;
namespace fx = sketch3d::testing;

namespace {

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                ("sketch3d_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path &path() const { return path_; }
    fs::path operator/(const std::string &name) const { return path_ / name; }

private:
    fs::path path_;
};

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path &p, const std::string &s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
}

template <typename T>
void put_le(std::string &out, T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out.append(b, sizeof(T));
}

StrokeSet random_strokes(std::mt19937_64 &rng, std::size_t n_ind, std::size_t n_dep) {
    std::uniform_real_distribution<double> u(-1.0, 1.0), a(0.1, 1.0), e(0.1, 1.9);
    StrokeSet s;
    for (std::size_t i = 0; i < n_ind; ++i) {
        CubicBezier3D c;
        for (auto &p : c.points) p = Vec3(u(rng), u(rng), u(rng));
        s.curves.push_back(c);
    }
    for (std::size_t i = 0; i < n_dep; ++i) {
        Superquadric q;
        q.alpha = Vec3(a(rng), a(rng), a(rng));
        q.epsilon = Vec2(e(rng), e(rng));
        q.rotation = Vec4(u(rng), u(rng), u(rng), u(rng)).normalized();
        q.translation = Vec3(u(rng), u(rng), u(rng));
        s.quadrics.push_back(q);
    }
    return s;
}

// Spacing of binary16 values around v.
double half_ulp(double v) {
    const double m = std::max(std::abs(v), std::ldexp(1.0, -14));
    return std::ldexp(1.0, std::ilogb(m) - 10);
}

// Reference rasterizer for SVG cubic paths: flattened to a fine polyline,
// stroked with round caps and box-filtered with 8x8 supersampling.
ImageBuffer reference_stroke_render(const std::vector<Curve2D> &paths, double width, int w, int h) {
    std::vector<std::pair<Vec2, Vec2>> segs;
    for (const auto &c : paths) {
        Vec2 prev = c[0];
        for (int i = 1; i <= 256; ++i) {
            const double t = i / 256.0, s = 1.0 - t;
            const Vec2 p = s * s * s * c[0] + 3 * s * s * t * c[1] + 3 * s * t * t * c[2] + t * t * t * c[3];
            segs.emplace_back(prev, p);
            prev = p;
        }
    }
    ImageBuffer img(w, h, 1.0);
    const double r = 0.5 * width;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int inside = 0;
            for (int sy = 0; sy < 8; ++sy) {
                for (int sx = 0; sx < 8; ++sx) {
                    const Vec2 q(x + (sx + 0.5) / 8.0, y + (sy + 0.5) / 8.0);
                    for (const auto &[a, b] : segs) {
                        const Vec2 d = b - a;
                        const double t = d.squaredNorm() > 0 ? std::clamp((q - a).dot(d) / d.squaredNorm(), 0.0, 1.0) : 0.0;
                        if ((a + t * d - q).norm() <= r) {
                            ++inside;
                            break;
                        }
                    }
                }
            }
            img(x, y) = 1.0 - inside / 64.0;
        }
    }
    return img;
}

std::vector<Curve2D> parse_svg_paths(const std::string &svg) {
    std::vector<Curve2D> out;
    const std::regex path_re(R"re(<path d="M ([^"]*)"/>)re");
    for (auto it = std::sregex_iterator(svg.begin(), svg.end(), path_re); it != std::sregex_iterator(); ++it) {
        std::string body = (*it)[1];
        std::replace(body.begin(), body.end(), 'C', ' ');
        std::istringstream in(body);
        Curve2D c;
        for (auto &p : c) in >> p.x() >> p.y();
        out.push_back(c);
    }
    return out;
}

// Checks that every element opened is closed in order.
bool balanced_tags(const std::string &xml) {
    std::vector<std::string> stack;
    const std::regex tag_re(R"re(<(/?)([A-Za-z]+)[^>]*?(/?)>)re");
    for (auto it = std::sregex_iterator(xml.begin(), xml.end(), tag_re); it != std::sregex_iterator(); ++it) {
        const auto &m = *it;
        if (m[3] == "/") continue;
        if (m[1] == "/") {
            if (stack.empty() || stack.back() != m[2]) return false;
            stack.pop_back();
        } else {
            stack.push_back(m[2]);
        }
    }
    return stack.empty();
}

} // namespace

TEST(Png, RoundTripQuantizesToEightBits) {
    TempDir dir;
    ImageBuffer img(7, 5);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 7; ++x) img(x, y) = (x * 5 + y) / 34.0;
    write_png(dir / "a.png", img);
    const auto back = read_png(dir / "a.png");
    ASSERT_EQ(back.gray.width(), 7);
    ASSERT_EQ(back.gray.height(), 5);
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back.gray[i], img[i], 0.5 / 255.0 + 1e-9);
    EXPECT_EQ(back.rgb.size(), 3 * img.size());
}

TEST(Png, MissingFileIsIoError) {
    EXPECT_THROW(read_png("/nonexistent/file.png"), IoError);
}

TEST(Cameras, FocalFromFieldOfView) {
    const double angle = 0.6911112, width = 800.0;
    const double oracle = width / (2.0 * std::tan(angle / 2.0));
    EXPECT_NEAR(focal_from_fov(angle, 800), oracle, 1e-9);
    EXPECT_NEAR(focal_from_fov(angle, 800), 1111.111, 1e-3);
}

TEST(Cameras, IdentityTransformLooksDownMinusZ) {
    const auto cam = camera_from_c2w(Eigen::Matrix4d::Identity(), 100.0, 64, 64);
    EXPECT_NEAR(cam.center().norm(), 0.0, 1e-15);
    EXPECT_NEAR((cam.forward() - Vec3(0, 0, -1)).norm(), 0.0, 1e-15);
    const auto px = project_point(cam, Vec3(0, 0, -2));
    EXPECT_NEAR(px.pixel.x(), 32.0, 1e-12);
    EXPECT_NEAR(px.pixel.y(), 32.0, 1e-12);
    EXPECT_NEAR(px.depth, 2.0, 1e-12);
    // Camera +y (up) maps to decreasing image rows.
    EXPECT_LT(project_point(cam, Vec3(0, 0.5, -2)).pixel.y(), 32.0);
    EXPECT_GT(project_point(cam, Vec3(0.5, 0, -2)).pixel.x(), 32.0);
}

TEST(Cameras, C2wRoundTrip) {
    std::mt19937_64 rng(71);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int k = 0; k < 20; ++k) {
        const auto cam = Camera::look_at(Vec3(u(rng), u(rng), u(rng)) + Vec3(0, 0, 10), Vec3::Zero(), Vec3::UnitZ(),
                                         300.0, 80, 60);
        const auto back = camera_from_c2w(c2w_from_camera(cam), 300.0, 80, 60);
        EXPECT_LT((back.rotation - cam.rotation).norm(), 1e-12);
        EXPECT_LT((back.translation - cam.translation).norm(), 1e-12);
    }
}

TEST(Cameras, SingularOrReflectedTransformRejected) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m(2, 2) = 0.0;
    EXPECT_THROW(camera_from_c2w(m, 100.0, 8, 8), IoError);
    m(2, 2) = -1.0;
    EXPECT_THROW(camera_from_c2w(m, 100.0, 8, 8), IoError);
}

TEST(Dataset, SaveLoadRoundTrip) {
    TempDir dir;
    const auto b = fx::unit_bounds();
    auto ds = fx::turntable_dataset(fx::ground_truth_scene(), b, 3, 32);
    ds.points = {Vec3(0.1, 0.2, 0.3), Vec3(-0.5, 0.25, 0.125)};
    save_dataset(dir.path(), ds);
    const auto back = load_dataset(dir.path());
    ASSERT_EQ(back.views.size(), 3u);
    EXPECT_EQ(back.width(), 32);
    EXPECT_EQ(back.bbox.lo, b.lo);
    EXPECT_EQ(back.bbox.hi, b.hi);
    ASSERT_EQ(back.points.size(), 2u);
    EXPECT_LT((back.points[1] - ds.points[1]).norm(), 1e-7);
    for (std::size_t v = 0; v < 3; ++v) {
        EXPECT_LT((back.views[v].camera.rotation - ds.views[v].camera.rotation).norm(), 1e-9);
        EXPECT_LT((back.views[v].camera.translation - ds.views[v].camera.translation).norm(), 1e-9);
        EXPECT_NEAR(back.views[v].camera.focal, ds.views[v].camera.focal, 1e-9);
        for (std::size_t i = 0; i < back.views[v].target.gray.size(); ++i)
            ASSERT_NEAR(back.views[v].target.gray[i], ds.views[v].target.gray[i], 0.5 / 255.0 + 1e-9);
    }
    const auto again = load_dataset(dir.path());
    for (std::size_t v = 0; v < 3; ++v) EXPECT_TRUE(again.views[v].target.gray == back.views[v].target.gray);
}

TEST(Dataset, MissingImageNamesThePath) {
    TempDir dir;
    write_text(dir / "transforms.json",
               R"({"camera_angle_x": 0.69, "frames": [{"file_path": "./images/r_0", "transform_matrix":
               [[1,0,0,0],[0,1,0,0],[0,0,1,4],[0,0,0,1]]}]})");
    try {
        load_dataset(dir.path());
        FAIL() << "expected IoError";
    } catch (const IoError &e) {
        EXPECT_NE(std::string(e.what()).find("r_0.png"), std::string::npos) << e.what();
    }
}

TEST(Dataset, MissingTransformsIsIoError) {
    TempDir dir;
    EXPECT_THROW(load_dataset(dir.path()), IoError);
}

TEST(Ply, AsciiVerticesInFileOrder) {
    TempDir dir;
    write_text(dir / "a.ply", "ply\nformat ascii 1.0\ncomment test\nelement vertex 3\nproperty float x\n"
                              "property float y\nproperty float z\nproperty uchar red\nend_header\n"
                              "1 2 3 255\n4 5 6 0\n-1 -2 -3 7\n");
    const auto pts = load_points(dir / "a.ply");
    ASSERT_EQ(pts.size(), 3u);
    EXPECT_EQ(pts[0], Vec3(1, 2, 3));
    EXPECT_EQ(pts[1], Vec3(4, 5, 6));
    EXPECT_EQ(pts[2], Vec3(-1, -2, -3));
}

TEST(Ply, EmptyVertexElement) {
    TempDir dir;
    write_text(dir / "e.ply", "ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nproperty float y\n"
                              "property float z\nend_header\n");
    EXPECT_TRUE(load_points(dir / "e.ply").empty());
}

TEST(Ply, BinaryMatchesAscii) {
    TempDir dir;
    std::mt19937_64 rng(72);
    std::uniform_real_distribution<float> u(-10.0f, 10.0f);
    std::vector<Vec3> cloud;
    for (int i = 0; i < 25; ++i) cloud.emplace_back(u(rng), u(rng), u(rng));

    std::string ascii = "ply\nformat ascii 1.0\nelement vertex 25\nproperty float x\nproperty float y\n"
                        "property float z\nproperty uchar red\nelement face 1\nproperty list uchar int vertex_indices\n"
                        "end_header\n";
    std::ostringstream body;
    body << std::setprecision(9);
    for (const auto &p : cloud) body << float(p.x()) << ' ' << float(p.y()) << ' ' << float(p.z()) << " 9\n";
    body << "3 0 1 2\n";
    write_text(dir / "a.ply", ascii + body.str());

    std::string bin = "ply\nformat binary_little_endian 1.0\nelement vertex 25\nproperty float x\nproperty uchar red\n"
                      "property float y\nproperty double z\nelement face 1\nproperty list uchar int vertex_indices\n"
                      "end_header\n";
    for (const auto &p : cloud) {
        put_le<float>(bin, float(p.x()));
        put_le<std::uint8_t>(bin, 9);
        put_le<float>(bin, float(p.y()));
        put_le<double>(bin, double(float(p.z())));
    }
    put_le<std::uint8_t>(bin, 3);
    for (int i = 0; i < 3; ++i) put_le<std::int32_t>(bin, i);
    write_text(dir / "b.ply", bin);

    const auto a = load_points(dir / "a.ply"), b = load_points(dir / "b.ply");
    ASSERT_EQ(a.size(), 25u);
    EXPECT_EQ(a, b);
}

TEST(Ply, TruncatedBinaryIsIoError) {
    TempDir dir;
    std::string bin = "ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                      "property float z\nend_header\n";
    put_le<float>(bin, 1.0f);
    write_text(dir / "t.ply", bin);
    EXPECT_THROW(load_points(dir / "t.ply"), IoError);
    write_text(dir / "n.ply", "not a ply\n");
    EXPECT_THROW(load_points(dir / "n.ply"), IoError);
}

TEST(Segments, ParsesLinesAndComments) {
    TempDir dir;
    write_text(dir / "s.txt", "# endpoints\n0 0 0 1 1 1\n\n-1 2 -3 4 -5 6\n");
    const auto s = load_segments(dir / "s.txt");
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s[1].first, Vec3(-1, 2, -3));
    EXPECT_EQ(s[1].second, Vec3(4, -5, 6));
    write_text(dir / "bad.txt", "0 0 0 1 1\n");
    EXPECT_THROW(load_segments(dir / "bad.txt"), IoError);
}

TEST(StrokeFile, DefaultConfigurationFitsBudget) {
    std::mt19937_64 rng(73);
    const auto s = random_strokes(rng, 32, 4);
    const auto bytes = encode_strokes(s);
    EXPECT_EQ(bytes.size() - stroke_header_bytes, 864u);
    EXPECT_EQ(bytes.size(), 875u);
    EXPECT_LT(bytes.size(), 1536u);
    TempDir dir;
    save_strokes(dir / "s.3dl", s);
    EXPECT_EQ(fs::file_size(dir / "s.3dl"), bytes.size());
}

TEST(StrokeFile, HalfPrecisionRoundTripWithinUlp) {
    std::mt19937_64 rng(74);
    for (int k = 0; k < 20; ++k) {
        const auto s = random_strokes(rng, 1 + k, k % 4);
        const auto back = decode_strokes(encode_strokes(s, Precision::half));
        const auto a = s.pack(), b = back.pack();
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(std::abs(a[i] - b[i]), half_ulp(a[i])) << a[i];
    }
}

TEST(StrokeFile, FullPrecisionIsLossless) {
    std::mt19937_64 rng(75);
    const auto s = random_strokes(rng, 5, 3);
    TempDir dir;
    save_strokes(dir / "f.3dl", s, Precision::full);
    EXPECT_EQ(load_strokes(dir / "f.3dl").pack(), s.pack());
    const auto single = decode_strokes(encode_strokes(s, Precision::single)).pack();
    const auto p = s.pack();
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(single[i], double(float(p[i])));
}

TEST(StrokeFile, RejectsEmptyAndCorrupt) {
    EXPECT_THROW(encode_strokes(StrokeSet{}), DomainError);
    std::mt19937_64 rng(76);
    auto bytes = encode_strokes(random_strokes(rng, 2, 1));
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_strokes(bad), IoError);
    bad = bytes;
    bad.pop_back();
    EXPECT_THROW(decode_strokes(bad), IoError);
    bad = bytes;
    bad[10] = 9;
    EXPECT_THROW(decode_strokes(bad), IoError);
    EXPECT_THROW(load_strokes("/nonexistent/x.3dl"), IoError);
}

TEST(Svg, OneCurveIsOneCubicPath) {
    TempDir dir;
    StrokeSet s;
    s.curves.push_back({{Vec3(-0.5, -0.2, 0), Vec3(-0.2, 0.4, 0.1), Vec3(0.2, -0.4, 0), Vec3(0.5, 0.2, -0.1)}});
    const auto cam = Camera::look_at(Vec3(0, 0, 4), Vec3::Zero(), Vec3::UnitY(), 100.0, 64, 64);
    const auto rep = export_svg(s, cam, dir / "one.svg", 2.0, RenderSettings::for_scene(fx::unit_bounds(), 64, 64));
    EXPECT_EQ(rep.paths, 1u);
    EXPECT_TRUE(rep.warnings.empty());
    const auto svg = slurp(dir / "one.svg");
    const std::regex path_re(R"re(<path d="M( -?[0-9.]+){2} C( -?[0-9.]+){6}"/>)re");
    EXPECT_EQ(std::distance(std::sregex_iterator(svg.begin(), svg.end(), path_re), std::sregex_iterator()), 1);
    EXPECT_TRUE(balanced_tags(svg));
}

TEST(Svg, CurveBehindCameraIsSkippedWithWarning) {
    TempDir dir;
    StrokeSet s;
    s.curves.push_back({{Vec3(0, 0, 5), Vec3(0.1, 0, 6), Vec3(0.2, 0, 7), Vec3(0.3, 0, 8)}});
    const auto cam = Camera::look_at(Vec3(0, 0, 4), Vec3::Zero(), Vec3::UnitY(), 100.0, 64, 64);
    const auto rep = export_svg(s, cam, dir / "none.svg", 2.0, RenderSettings::for_scene(fx::unit_bounds(), 64, 64));
    EXPECT_EQ(rep.paths, 0u);
    EXPECT_EQ(rep.warnings.size(), 1u);
    EXPECT_EQ(slurp(dir / "none.svg").find("<path"), std::string::npos);
}

TEST(Svg, QuadricContoursBecomePolylines) {
    TempDir dir;
    StrokeSet s;
    s.quadrics.resize(1);
    s.quadrics[0].alpha = Vec3::Constant(0.6);
    const auto cam = Camera::look_at(Vec3(0, 0, 4), Vec3::Zero(), Vec3::UnitY(), 64.0, 64, 64);
    const auto rep = export_svg(s, cam, dir / "q.svg", 2.0, RenderSettings::for_scene(fx::unit_bounds(), 64, 64));
    EXPECT_GE(rep.polylines, 1u);
    EXPECT_TRUE(balanced_tags(slurp(dir / "q.svg")));
}

TEST(Svg, ReferenceRasterMatchesRasterizer) {
    TempDir dir;
    const auto b = fx::unit_bounds();
    auto scene = fx::ground_truth_scene();
    scene.quadrics.clear();
    const int res = 96;
    const auto settings = RenderSettings::for_scene(b, res, res);
    const double width = 2.0;
    auto raster = settings;
    raster.raster.stroke_width = width;
    for (double az : {0.0, 110.0}) {
        const auto cam = turntable_camera(b, az, 30.0, res, res);
        export_svg(scene, cam, dir / "c.svg", width, settings);
        const auto paths = parse_svg_paths(slurp(dir / "c.svg"));
        ASSERT_EQ(paths.size(), scene.curves.size());
        const auto reference = reference_stroke_render(paths, width, res, res);
        const auto ours = render_sketch(cam, scene, raster).image;
        double mad = 0.0;
        for (std::size_t i = 0; i < ours.size(); ++i) mad += std::abs(ours[i] - reference[i]);
        EXPECT_LT(mad / ours.size(), 0.05) << "azimuth " << az;
    }
}

TEST(Ridges, ThinLineTracesToOnePolyline) {
    ImageBuffer img(40, 20, 1.0);
    for (int x = 5; x < 35; ++x)
        for (int y = 9; y < 12; ++y) img(x, y) = 0.0;
    const auto lines = trace_ridges(img);
    ASSERT_EQ(lines.size(), 1u);
    EXPECT_GE(lines[0].size(), 25u);
    for (const auto &p : lines[0]) EXPECT_NEAR(p.y(), 10.5, 1.01);
    EXPECT_TRUE(trace_ridges(ImageBuffer(8, 8, 1.0)).empty());
}
