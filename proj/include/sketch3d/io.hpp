#pragma once

// File formats: PNG images, NeRF-style transforms.json datasets, PLY point
// clouds, line-segment lists, binary stroke files and SVG export.

#include "sketch3d/dataset.hpp"

#include <Eigen/Dense>
#include <json.hpp>
#include <png.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace sketch3d {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// PNG

struct DecodedImage {
    ImageBuffer gray;
    std::vector<float> rgb; // interleaved, composited over white
};

inline DecodedImage read_png(const fs::path &path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
        throw IoError("cannot read PNG " + path.string() + ": " + img.message);
    }
    img.format = PNG_FORMAT_RGBA;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
    }
    const int w = static_cast<int>(img.width), h = static_cast<int>(img.height);
    DecodedImage out{ImageBuffer(w, h), std::vector<float>(3 * static_cast<std::size_t>(w) * h)};
    for (std::size_t i = 0; i < out.gray.size(); ++i) {
        const double a = buf[4 * i + 3] / 255.0;
        double c[3];
        for (int k = 0; k < 3; ++k) {
            c[k] = a * (buf[4 * i + k] / 255.0) + (1.0 - a);
            out.rgb[3 * i + k] = static_cast<float>(c[k]);
        }
        out.gray[i] = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
    }
    return out;
}

/// Writes an 8-bit grayscale PNG, clamping values to [0, 1].
inline void write_png(const fs::path &path, const ImageBuffer &img) {
    png_image out{};
    out.version = PNG_IMAGE_VERSION;
    out.width = static_cast<png_uint_32>(img.width());
    out.height = static_cast<png_uint_32>(img.height());
    out.format = PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buf(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
        buf[i] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(img[i], 0.0, 1.0)));
    }
    if (!png_image_write_to_file(&out, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
        throw IoError("cannot write PNG " + path.string() + ": " + out.message);
    }
}

// ---------------------------------------------------------------------------
// PLY points and line segments

namespace detail {

inline std::size_t ply_type_size(const std::string &t) {
    if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
    if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
    if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32") return 4;
    if (t == "double" || t == "float64") return 8;
    throw IoError("PLY: unknown property type " + t);
}

template <typename T>
T read_le(std::istream &in) {
    std::array<unsigned char, sizeof(T)> b{};
    if (!in.read(reinterpret_cast<char *>(b.data()), sizeof(T))) throw IoError("PLY: truncated payload");
    if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
    T v;
    std::memcpy(&v, b.data(), sizeof(T));
    return v;
}

inline double read_binary_value(std::istream &in, const std::string &t) {
    if (t == "char" || t == "int8") return read_le<std::int8_t>(in);
    if (t == "uchar" || t == "uint8") return read_le<std::uint8_t>(in);
    if (t == "short" || t == "int16") return read_le<std::int16_t>(in);
    if (t == "ushort" || t == "uint16") return read_le<std::uint16_t>(in);
    if (t == "int" || t == "int32") return read_le<std::int32_t>(in);
    if (t == "uint" || t == "uint32") return read_le<std::uint32_t>(in);
    if (t == "float" || t == "float32") return read_le<float>(in);
    if (t == "double" || t == "float64") return read_le<double>(in);
    throw IoError("PLY: unknown property type " + t);
}

struct PlyProperty {
    std::string name;
    std::string type;
    std::string count_type; // non-empty for list properties
};

struct PlyElement {
    std::string name;
    std::size_t count = 0;
    std::vector<PlyProperty> props;
};

} // namespace detail

/// Vertex positions of an ASCII or binary little-endian PLY file. Other
/// elements and properties are skipped.
inline std::vector<Vec3> load_points(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw IoError("PLY: missing magic in " + path.string());
    bool binary = false;
    std::vector<detail::PlyElement> elements;
    for (;;) {
        if (!std::getline(in, line)) throw IoError("PLY: header not terminated");
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string kw;
        ls >> kw;
        if (kw == "end_header") break;
        if (kw == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt == "binary_little_endian") binary = true;
            else if (fmt != "ascii") throw IoError("PLY: unsupported format " + fmt);
        } else if (kw == "element") {
            detail::PlyElement e;
            if (!(ls >> e.name >> e.count)) throw IoError("PLY: malformed element line");
            elements.push_back(e);
        } else if (kw == "property") {
            if (elements.empty()) throw IoError("PLY: property before element");
            detail::PlyProperty p;
            std::string t;
            ls >> t;
            if (t == "list") {
                ls >> p.count_type >> p.type >> p.name;
                detail::ply_type_size(p.count_type);
            } else {
                p.type = t;
                ls >> p.name;
            }
            if (p.name.empty()) throw IoError("PLY: malformed property line");
            detail::ply_type_size(p.type);
            elements.back().props.push_back(p);
        } else if (kw != "comment" && kw != "obj_info" && !kw.empty()) {
            throw IoError("PLY: unexpected header keyword " + kw);
        }
    }

    std::vector<Vec3> points;
    for (const auto &e : elements) {
        int ix = -1, iy = -1, iz = -1;
        for (std::size_t k = 0; k < e.props.size(); ++k) {
            if (!e.props[k].count_type.empty()) continue;
            if (e.props[k].name == "x") ix = static_cast<int>(k);
            if (e.props[k].name == "y") iy = static_cast<int>(k);
            if (e.props[k].name == "z") iz = static_cast<int>(k);
        }
        const bool is_vertex = e.name == "vertex";
        if (is_vertex && (ix < 0 || iy < 0 || iz < 0)) throw IoError("PLY: vertex element lacks x, y, z");
        std::vector<double> vals(e.props.size());
        for (std::size_t i = 0; i < e.count; ++i) {
            if (binary) {
                for (std::size_t k = 0; k < e.props.size(); ++k) {
                    const auto &p = e.props[k];
                    if (p.count_type.empty()) {
                        vals[k] = detail::read_binary_value(in, p.type);
                    } else {
                        const auto n = static_cast<std::size_t>(detail::read_binary_value(in, p.count_type));
                        for (std::size_t j = 0; j < n; ++j) detail::read_binary_value(in, p.type);
                    }
                }
            } else {
                if (!std::getline(in, line)) throw IoError("PLY: truncated payload");
                std::istringstream ls(line);
                for (std::size_t k = 0; k < e.props.size(); ++k) {
                    const auto &p = e.props[k];
                    if (p.count_type.empty()) {
                        if (!(ls >> vals[k])) throw IoError("PLY: malformed vertex line");
                        if (p.type == "float" || p.type == "float32") vals[k] = static_cast<float>(vals[k]);
                    } else {
                        std::size_t n;
                        double skip;
                        if (!(ls >> n)) throw IoError("PLY: malformed list");
                        for (std::size_t j = 0; j < n; ++j)
                            if (!(ls >> skip)) throw IoError("PLY: malformed list");
                    }
                }
            }
            if (is_vertex) points.emplace_back(vals[ix], vals[iy], vals[iz]);
        }
    }
    return points;
}

inline void save_points_ascii(const fs::path &path, std::span<const Vec3> points) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
        << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
    out << std::setprecision(9);
    for (const auto &p : points) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
}

/// Line segments, six numbers (two endpoints) per non-empty line; '#'
/// starts a comment.
inline std::vector<Segment3D> load_segments(const fs::path &path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<Segment3D> segs;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        double v[6];
        int n = 0;
        while (n < 6 && ls >> v[n]) ++n;
        if (n == 0 && ls.eof()) continue;
        std::string rest;
        if (n != 6 || (ls >> rest)) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected six numbers");
        }
        segs.emplace_back(Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5]));
    }
    return segs;
}

// ---------------------------------------------------------------------------
// transforms.json datasets

/// Focal length in pixels from a horizontal field of view.
inline double focal_from_fov(double camera_angle_x, int width) { return 0.5 * width / std::tan(0.5 * camera_angle_x); }

/// World-to-camera pose from a camera-to-world matrix whose camera looks
/// down its own -z with y up.
inline Camera camera_from_c2w(const Eigen::Matrix4d &c2w, double focal, int width, int height) {
    const Mat3 r = c2w.topLeftCorner<3, 3>();
    if (!c2w.allFinite() || std::abs(r.determinant()) < 1e-9) throw IoError("transform_matrix is not invertible");
    // Nearest rotation, guarding against rounding in stored matrices.
    Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 rot = svd.matrixU() * svd.matrixV().transpose();
    if (rot.determinant() < 0.0) throw IoError("transform_matrix has a reflection");
    const Mat3 flip = Vec3(1.0, -1.0, -1.0).asDiagonal();
    Camera cam;
    cam.rotation = flip * rot.transpose();
    cam.translation = -cam.rotation * c2w.topRightCorner<3, 1>();
    cam.focal = focal;
    cam.principal_point = Vec2(0.5 * width, 0.5 * height);
    cam.width = width;
    cam.height = height;
    return cam;
}

inline Eigen::Matrix4d c2w_from_camera(const Camera &cam) {
    const Mat3 flip = Vec3(1.0, -1.0, -1.0).asDiagonal();
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = (flip * cam.rotation).transpose();
    m.topRightCorner<3, 1>() = cam.center();
    return m;
}

struct DatasetOptions {
    fs::path points;   // defaults to <root>/points.ply when present
    fs::path segments; // defaults to <root>/segments.txt when present
};

/// Loads <root>/transforms.json. The bounding box comes from an optional
/// "bbox": [[lo], [hi]] entry, else from the points, else the segments,
/// else the cube [-1, 1]^3.
inline Dataset load_dataset(const fs::path &root, const DatasetOptions &opt = {}) {
    const fs::path tf = root / "transforms.json";
    std::ifstream in(tf);
    if (!in) throw IoError("cannot open " + tf.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception &e) {
        throw IoError(tf.string() + ": " + e.what());
    }
    Dataset ds;
    try {
        const double angle = j.at("camera_angle_x").get<double>();
        for (const auto &fr : j.at("frames")) {
            fs::path file = fr.at("file_path").get<std::string>();
            if (!file.has_extension()) file += ".png";
            const fs::path img_path = root / file;
            if (!fs::exists(img_path)) throw IoError("missing image " + img_path.string());
            auto img = read_png(img_path);
            Eigen::Matrix4d m;
            const auto &rows = fr.at("transform_matrix");
            if (rows.size() != 4) throw IoError("transform_matrix must be 4x4 in " + tf.string());
            for (int r = 0; r < 4; ++r) {
                if (rows[r].size() != 4) throw IoError("transform_matrix must be 4x4 in " + tf.string());
                for (int c = 0; c < 4; ++c) m(r, c) = rows[r][c].get<double>();
            }
            const int w = img.gray.width(), h = img.gray.height();
            if (!ds.views.empty() && (w != ds.width() || h != ds.height())) {
                throw IoError("resolution mismatch at " + img_path.string());
            }
            View v;
            v.camera = camera_from_c2w(m, focal_from_fov(angle, w), w, h);
            v.target = TargetImage(std::move(img.gray), std::move(img.rgb));
            v.name = file.string();
            ds.views.push_back(std::move(v));
        }
        if (j.contains("bbox")) {
            const auto &b = j.at("bbox");
            for (int k = 0; k < 3; ++k) {
                ds.bbox.lo[k] = b.at(0).at(k).get<double>();
                ds.bbox.hi[k] = b.at(1).at(k).get<double>();
            }
        }
    } catch (const nlohmann::json::exception &e) {
        throw IoError(tf.string() + ": " + e.what());
    }
    if (ds.views.empty()) throw IoError(tf.string() + ": no frames");

    const fs::path pts = !opt.points.empty() ? opt.points : root / "points.ply";
    if (!opt.points.empty() || fs::exists(pts)) ds.points = load_points(pts);
    const fs::path seg = !opt.segments.empty() ? opt.segments : root / "segments.txt";
    if (!opt.segments.empty() || fs::exists(seg)) ds.segments = load_segments(seg);

    if (!j.contains("bbox")) {
        if (!ds.points.empty()) {
            ds.bbox = bounds_of(ds.points);
        } else if (!ds.segments.empty()) {
            std::vector<Vec3> ends;
            for (const auto &[a, b] : ds.segments) ends.insert(ends.end(), {a, b});
            ds.bbox = bounds_of(ends);
        }
    }
    ds.validate();
    return ds;
}

/// Writes a dataset in the layout load_dataset reads (gray PNGs).
inline void save_dataset(const fs::path &root, const Dataset &ds) {
    fs::create_directories(root / "images");
    nlohmann::json j;
    const auto &c0 = ds.views.front().camera;
    j["camera_angle_x"] = 2.0 * std::atan(0.5 * c0.width / c0.focal);
    j["bbox"] = {{ds.bbox.lo.x(), ds.bbox.lo.y(), ds.bbox.lo.z()}, {ds.bbox.hi.x(), ds.bbox.hi.y(), ds.bbox.hi.z()}};
    j["frames"] = nlohmann::json::array();
    for (std::size_t i = 0; i < ds.views.size(); ++i) {
        std::ostringstream name;
        name << "images/view_" << std::setw(3) << std::setfill('0') << i;
        write_png(root / (name.str() + ".png"), ds.views[i].target.gray);
        const auto m = c2w_from_camera(ds.views[i].camera);
        nlohmann::json rows = nlohmann::json::array();
        for (int r = 0; r < 4; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
        j["frames"].push_back({{"file_path", name.str()}, {"transform_matrix", rows}});
    }
    std::ofstream out(root / "transforms.json");
    if (!out) throw IoError("cannot write " + (root / "transforms.json").string());
    out << std::setprecision(17) << j.dump(2) << '\n';
    if (!ds.points.empty()) save_points_ascii(root / "points.ply", ds.points);
}

// ---------------------------------------------------------------------------
// Stroke files
//
// "3DDL", u16 version, u16 n_ind, u16 n_dep, u8 precision
// (0 = binary16, 1 = binary32, 2 = binary64), then 12 numbers per curve and
// 12 per quadric in StrokeSet::pack order, little-endian.

enum class Precision : std::uint8_t { half = 0, single = 1, full = 2 };

inline constexpr std::uint16_t stroke_file_version = 1;
inline constexpr std::size_t stroke_header_bytes = 4 + 2 + 2 + 2 + 1;

inline std::size_t precision_bytes(Precision p) {
    switch (p) {
    case Precision::half: return 2;
    case Precision::single: return 4;
    case Precision::full: return 8;
    }
    throw IoError("unknown stroke precision");
}

/// Value as stored and reloaded at the given precision.
inline double quantize(double v, Precision p) {
    switch (p) {
    case Precision::half: return static_cast<double>(static_cast<float>(Eigen::half(static_cast<float>(v))));
    case Precision::single: return static_cast<double>(static_cast<float>(v));
    case Precision::full: return v;
    }
    return v;
}

inline std::vector<std::uint8_t> encode_strokes(const StrokeSet &set, Precision prec = Precision::half) {
    if (set.curves.empty() && set.quadrics.empty()) throw DomainError("cannot save an empty stroke set");
    if (set.curves.size() > 0xffff || set.quadrics.size() > 0xffff) throw DomainError("too many primitives");
    std::vector<std::uint8_t> out{'3', 'D', 'D', 'L'};
    auto put = [&out](std::uint64_t v, int bytes) {
        for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    put(stroke_file_version, 2);
    put(set.curves.size(), 2);
    put(set.quadrics.size(), 2);
    put(static_cast<std::uint8_t>(prec), 1);
    for (double v : set.pack()) {
        switch (prec) {
        case Precision::half:
            put(std::bit_cast<std::uint16_t>(Eigen::half(static_cast<float>(v))), 2);
            break;
        case Precision::single: put(std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4); break;
        case Precision::full: put(std::bit_cast<std::uint64_t>(v), 8); break;
        }
    }
    return out;
}

inline StrokeSet decode_strokes(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < stroke_header_bytes || std::memcmp(bytes.data(), "3DDL", 4) != 0) {
        throw IoError("stroke file: bad magic");
    }
    auto get = [&bytes](std::size_t off, int n) {
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes[off + i]) << (8 * i);
        return v;
    };
    if (get(4, 2) != stroke_file_version) throw IoError("stroke file: unsupported version " + std::to_string(get(4, 2)));
    StrokeSet set;
    set.curves.resize(get(6, 2));
    set.quadrics.resize(get(8, 2));
    const auto flag = get(10, 1);
    if (flag > 2) throw IoError("stroke file: bad precision flag");
    const auto prec = static_cast<Precision>(flag);
    const std::size_t nb = precision_bytes(prec);
    const std::size_t n = set.param_count();
    if (n == 0) throw IoError("stroke file: empty stroke set");
    if (bytes.size() != stroke_header_bytes + n * nb) throw IoError("stroke file: payload length mismatch");
    std::vector<double> p(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto raw = get(stroke_header_bytes + i * nb, static_cast<int>(nb));
        switch (prec) {
        case Precision::half:
            p[i] = static_cast<float>(std::bit_cast<Eigen::half>(static_cast<std::uint16_t>(raw)));
            break;
        case Precision::single: p[i] = std::bit_cast<float>(static_cast<std::uint32_t>(raw)); break;
        case Precision::full: p[i] = std::bit_cast<double>(raw); break;
        }
    }
    set.unpack(p);
    return set;
}

inline void save_strokes(const fs::path &path, const StrokeSet &set, Precision prec = Precision::half) {
    const auto bytes = encode_strokes(set, prec);
    std::ofstream out(path, std::ios::binary);
    if (!out || !out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
        throw IoError("cannot write " + path.string());
    }
}

inline StrokeSet load_strokes(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_strokes(bytes);
    } catch (const IoError &e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// SVG export

namespace detail {

// Zhang-Suen thinning of a binary mask to one-pixel-wide ridges.
inline void thin(std::vector<std::uint8_t> &m, int w, int h) {
    auto at = [&](int x, int y) -> int { return x >= 0 && y >= 0 && x < w && y < h ? m[y * w + x] : 0; };
    std::vector<int> drop;
    for (bool changed = true; changed;) {
        changed = false;
        for (int pass = 0; pass < 2; ++pass) {
            drop.clear();
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    if (!m[y * w + x]) continue;
                    const int p[8] = {at(x, y - 1), at(x + 1, y - 1), at(x + 1, y), at(x + 1, y + 1),
                                      at(x, y + 1), at(x - 1, y + 1), at(x - 1, y), at(x - 1, y - 1)};
                    int b = 0, a = 0;
                    for (int k = 0; k < 8; ++k) {
                        b += p[k];
                        a += p[k] == 0 && p[(k + 1) % 8] == 1;
                    }
                    if (b < 2 || b > 6 || a != 1) continue;
                    if (pass == 0 && (p[0] * p[2] * p[4] != 0 || p[2] * p[4] * p[6] != 0)) continue;
                    if (pass == 1 && (p[0] * p[2] * p[6] != 0 || p[0] * p[4] * p[6] != 0)) continue;
                    drop.push_back(y * w + x);
                }
            }
            for (int i : drop) m[i] = 0;
            changed = changed || !drop.empty();
        }
    }
}

} // namespace detail

/// Polylines along the ridges of the ink (1 - pixel > 0.5) of an image,
/// in pixel coordinates of the pixel centers.
inline std::vector<std::vector<Vec2>> trace_ridges(const ImageBuffer &img) {
    const int w = img.width(), h = img.height();
    std::vector<std::uint8_t> m(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) m[i] = 1.0 - img[i] > 0.5;
    detail::thin(m, w, h);

    static constexpr int dx[8] = {1, 1, 0, -1, -1, -1, 0, 1};
    static constexpr int dy[8] = {0, 1, 1, 1, 0, -1, -1, -1};
    auto degree = [&](int x, int y) {
        int n = 0;
        for (int k = 0; k < 8; ++k) {
            const int u = x + dx[k], v = y + dy[k];
            n += u >= 0 && v >= 0 && u < w && v < h && m[v * w + u];
        }
        return n;
    };
    std::vector<std::uint8_t> seen(m.size(), 0);
    std::vector<std::vector<Vec2>> lines;
    auto walk = [&](int x, int y) {
        std::vector<Vec2> line;
        for (;;) {
            seen[y * w + x] = 1;
            line.emplace_back(x + 0.5, y + 0.5);
            bool moved = false;
            for (int k = 0; k < 8 && !moved; ++k) {
                const int u = x + dx[k], v = y + dy[k];
                if (u >= 0 && v >= 0 && u < w && v < h && m[v * w + u] && !seen[v * w + u]) {
                    x = u;
                    y = v;
                    moved = true;
                }
            }
            if (!moved) break;
        }
        if (line.size() >= 2) lines.push_back(std::move(line));
    };
    // Open chains from their endpoints first, then closed loops.
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (m[y * w + x] && !seen[y * w + x] && degree(x, y) == 1) walk(x, y);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (m[y * w + x] && !seen[y * w + x]) walk(x, y);
    return lines;
}

struct SvgExport {
    std::size_t paths = 0;
    std::size_t polylines = 0;
    std::vector<std::string> warnings;
};

/// One cubic path per visible curve, plus polylines traced from the
/// rendered contour image of the quadrics.
inline SvgExport export_svg(const StrokeSet &set, const Camera &cam, const fs::path &path, double width_px,
                            const RenderSettings &settings) {
    SvgExport rep;
    std::ostringstream svg;
    svg << std::setprecision(6) << std::fixed;
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << cam.width << "\" height=\""
        << cam.height << "\" viewBox=\"0 0 " << cam.width << ' ' << cam.height << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<g fill=\"none\" stroke=\"black\" stroke-width=\"" << width_px
        << "\" stroke-linecap=\"round\" stroke-linejoin=\"round\">\n";
    for (std::size_t i = 0; i < set.curves.size(); ++i) {
        if (!detail::in_front(cam, set.curves[i])) {
            rep.warnings.push_back("curve " + std::to_string(i) + " is behind the camera; skipped");
            continue;
        }
        const auto q = project_curve(cam, set.curves[i]);
        svg << "<path d=\"M " << q[0].x() << ' ' << q[0].y() << " C " << q[1].x() << ' ' << q[1].y() << ' '
            << q[2].x() << ' ' << q[2].y() << ' ' << q[3].x() << ' ' << q[3].y() << "\"/>\n";
        ++rep.paths;
    }
    if (!set.quadrics.empty()) {
        for (const auto &line : trace_ridges(render_quadrics(cam, set, settings))) {
            svg << "<polyline points=\"";
            for (std::size_t k = 0; k < line.size(); ++k) svg << (k ? " " : "") << line[k].x() << ',' << line[k].y();
            svg << "\"/>\n";
            ++rep.polylines;
        }
    }
    svg << "</g>\n</svg>\n";
    std::ofstream out(path);
    if (!out || !(out << svg.str())) throw IoError("cannot write " + path.string());
    return rep;
}

} // namespace sketch3d
