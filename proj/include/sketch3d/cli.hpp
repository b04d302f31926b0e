#pragma once

// Command-line front end: init, optimize, render, export-svg, eval.
// Exit codes: 0 success, 1 usage, 2 I/O, 3 numerical abort.

#include "sketch3d/sketch3d.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>

namespace sketch3d::cli {

enum ExitCode { ok = 0, usage = 1, io = 2, numerical = 3 };

namespace detail {

struct CameraArgs {
    int turntable = 0;
    double elevation = 30.0;
    int frame = -1;
    std::vector<double> eye, target, up{0.0, 0.0, 1.0};
    double focal = 0.0;
    int res = 400;
};

struct CommonArgs {
    std::string data;
    std::string strokes;
    std::string out;
    int threads = 0;
    int beta = 2;
    int n_samples = 192;
    double width_px = 0.0;
};

inline void add_camera_options(CLI::App *app, CameraArgs &c) {
    app->add_option("--turntable", c.turntable, "Render N views on a turntable around the scene")
        ->check(CLI::PositiveNumber);
    app->add_option("--elevation", c.elevation, "Turntable elevation in degrees");
    app->add_option("--frame", c.frame, "Use the camera of this dataset frame")->check(CLI::NonNegativeNumber);
    app->add_option("--eye", c.eye, "Look-at camera position x y z")->expected(3);
    app->add_option("--target", c.target, "Look-at target x y z")->expected(3);
    app->add_option("--up", c.up, "Look-at up vector x y z")->expected(3);
    app->add_option("--focal", c.focal, "Focal length in pixels for look-at cameras");
    app->add_option("--res", c.res, "Output resolution (square)")->check(CLI::PositiveNumber);
}

inline void add_render_options(CLI::App *app, CommonArgs &a) {
    app->add_option("--beta", a.beta, "Contour attenuation exponent (even)");
    app->add_option("--n-samples", a.n_samples, "Ray samples per pixel for contours");
    app->add_option("--width-px", a.width_px, "Stroke width in pixels (default scales with resolution)");
    app->add_option("--threads", a.threads, "Worker threads (0 = all cores)");
}

inline RenderSettings make_settings(const SceneBounds &b, int w, int h, const CommonArgs &a) {
    auto s = RenderSettings::for_scene(b, w, h);
    s.contour.beta = a.beta;
    s.contour.n_samples = a.n_samples;
    if (a.width_px > 0.0) s.raster.stroke_width = a.width_px;
    return s;
}

/// Bounds of everything drawn by a stroke set.
inline SceneBounds strokes_bounds(const StrokeSet &s) {
    std::vector<Vec3> pts;
    for (const auto &c : s.curves) pts.insert(pts.end(), c.points.begin(), c.points.end());
    for (const auto &q : s.quadrics) {
        const double r = q.bounding_radius(1.0);
        pts.push_back(q.translation - Vec3::Constant(r));
        pts.push_back(q.translation + Vec3::Constant(r));
    }
    auto b = bounds_of(pts);
    const Vec3 pad = (b.hi - b.lo).cwiseMax(1e-3) * 0.05 + Vec3::Constant(1e-3);
    b.lo -= pad;
    b.hi += pad;
    return b;
}

inline std::vector<std::pair<std::string, Camera>> cameras_for(const CameraArgs &c, const SceneBounds &b,
                                                               const std::optional<Dataset> &ds) {
    std::vector<std::pair<std::string, Camera>> cams;
    if (c.turntable > 0) {
        for (int k = 0; k < c.turntable; ++k) {
            char name[32];
            std::snprintf(name, sizeof name, "turntable_%03d", k);
            cams.emplace_back(name, turntable_camera(b, 360.0 * k / c.turntable, c.elevation, c.res, c.res));
        }
    } else if (c.frame >= 0) {
        if (!ds) throw DomainError("--frame requires --data");
        if (static_cast<std::size_t>(c.frame) >= ds->views.size()) throw DomainError("--frame out of range");
        char name[32];
        std::snprintf(name, sizeof name, "frame_%03d", c.frame);
        cams.emplace_back(name, ds->views[c.frame].camera);
    } else if (!c.eye.empty()) {
        const Vec3 target = c.target.empty() ? b.center() : Vec3(c.target[0], c.target[1], c.target[2]);
        const Vec3 eye(c.eye[0], c.eye[1], c.eye[2]);
        double focal = c.focal;
        if (focal <= 0.0) {
            const double half = std::asin(std::min(0.99, 0.5 * b.diagonal() / (eye - target).norm())) * 1.15;
            focal = 0.5 * c.res / std::tan(half);
        }
        cams.emplace_back("view", Camera::look_at(eye, target, Vec3(c.up[0], c.up[1], c.up[2]), focal, c.res, c.res));
    } else {
        throw DomainError("choose a camera with --turntable, --frame or --eye");
    }
    return cams;
}

inline std::unique_ptr<PerceptualBackend> make_backend(const std::string &name, double dt_weight,
                                                       const std::string &addr) {
    if (name == "l2") return std::make_unique<PixelL2Backend>();
    if (name == "dt") return std::make_unique<DistanceTransformBackend>();
    if (name == "l2dt") return std::make_unique<CombinedBackend>(dt_weight);
    if (name == "sidecar") return std::make_unique<SidecarBackend>(addr);
    throw DomainError("unknown loss backend " + name);
}

inline InitMethod parse_init(const std::string &s) {
    if (s == "random") return InitMethod::random_bbox;
    if (s == "fps") return InitMethod::fps_points;
    if (s == "lines") return InitMethod::line_segments;
    throw DomainError("unknown init method " + s);
}

inline Precision parse_precision(const std::string &s) {
    if (s == "half") return Precision::half;
    if (s == "single") return Precision::single;
    if (s == "double") return Precision::full;
    throw DomainError("unknown precision " + s);
}

class SubcommandToml : public CLI::ConfigTOML {
  public:
    explicit SubcommandToml(std::string sub) : sub_(std::move(sub)) {}

    std::vector<CLI::ConfigItem> from_config(std::istream &input) const override {
        auto items = CLI::ConfigTOML::from_config(input);
        if (sub_.empty()) return items;
        for (auto &item : items)
            if (item.parents.empty() && item.name != "++" && item.name != "--") item.parents.push_back(sub_);
        return items;
    }

  private:
    std::string sub_;
};

} // namespace detail

inline int run(int argc, const char *const *argv, std::ostream &out = std::cout, std::ostream &err = std::cerr) {
    CLI::App app{"sketch3d: fit 3D Bezier and superquadric contour sketches to posed images"};
    app.set_config("--config", "", "TOML file providing values for any flag");
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    detail::CommonArgs common;
    detail::CameraArgs camera;
    std::size_t n_ind = 32, n_dep = 4;
    std::string init_method = "random", loss_name = "l2", sidecar_addr = "127.0.0.1:7301", precision = "half";
    std::string log_path, checkpoint_dir, points_path, segments_path;
    std::uint64_t seed = 0;
    long steps = 2000, checkpoint_every = 0;
    double stage_split = 0.4, lambda = 1.0, lr = 1e-3, dt_weight = 0.01, semantic_weight = 1.0;
    std::size_t batch = 4;
    bool no_robust = false;

    auto *init = app.add_subcommand("init", "Initialize a stroke file from a dataset");
    init->add_option("--data", common.data, "Dataset directory with transforms.json")->required();
    init->add_option("-o,--out", common.out, "Output stroke file")->required();
    init->add_option("--n-ind", n_ind, "Number of Bezier curves");
    init->add_option("--n-dep", n_dep, "Number of superquadrics");
    init->add_option("--init", init_method, "Initialization: random, fps or lines")
        ->check(CLI::IsMember({"random", "fps", "lines"}));
    init->add_option("--seed", seed, "Random seed");
    init->add_option("--points", points_path, "PLY point cloud (default <data>/points.ply)");
    init->add_option("--segments", segments_path, "Line segments (default <data>/segments.txt)");
    init->add_option("--precision", precision, "Stored precision: half, single or double")
        ->check(CLI::IsMember({"half", "single", "double"}));

    auto *opt = app.add_subcommand("optimize", "Optimize a stroke file against a dataset");
    opt->add_option("--data", common.data, "Dataset directory with transforms.json")->required();
    opt->add_option("--init", common.strokes, "Initial stroke file")->required();
    opt->add_option("-o,--out", common.out, "Output stroke file")->required();
    opt->add_option("--log", log_path, "Loss log (step,stage,loss); default <out>.log.csv");
    opt->add_option("--seed", seed, "Seed for the view order");
    opt->add_option("--steps", steps, "Total optimization steps")->check(CLI::NonNegativeNumber);
    opt->add_option("--stage-split", stage_split, "Fraction of steps spent on superquadrics")
        ->check(CLI::Range(0.0, 1.0));
    opt->add_option("--batch", batch, "Views per step")->check(CLI::PositiveNumber);
    opt->add_option("--loss", loss_name, "Structural loss: l2, dt, l2dt or sidecar")
        ->check(CLI::IsMember({"l2", "dt", "l2dt", "sidecar"}));
    opt->add_option("--dt-weight", dt_weight, "Weight of the distance-transform term in l2dt");
    opt->add_option("--sidecar-addr", sidecar_addr, "Sidecar host:port");
    opt->add_option("--lambda", lambda, "Weight of the structural term")->check(CLI::NonNegativeNumber);
    opt->add_option("--semantic-weight", semantic_weight, "Weight of the semantic term")
        ->check(CLI::NonNegativeNumber);
    opt->add_flag("--no-robust", no_robust, "Do not wrap the structural term in the robust loss");
    opt->add_option("--lr", lr, "Adam learning rate");
    opt->add_option("--checkpoint-every", checkpoint_every, "Write a checkpoint every N steps");
    opt->add_option("--checkpoint-dir", checkpoint_dir, "Checkpoint directory (default next to --out)");
    opt->add_option("--precision", precision, "Stored precision: half, single or double")
        ->check(CLI::IsMember({"half", "single", "double"}));
    detail::add_render_options(opt, common);

    auto *render = app.add_subcommand("render", "Render a stroke file to PNG images");
    render->add_option("--strokes", common.strokes, "Stroke file")->required();
    render->add_option("--out-dir", common.out, "Output directory")->required();
    render->add_option("--data", common.data, "Dataset (for --frame cameras and scene bounds)");
    detail::add_camera_options(render, camera);
    detail::add_render_options(render, common);

    auto *svg = app.add_subcommand("export-svg", "Export a stroke file as SVG");
    svg->add_option("--strokes", common.strokes, "Stroke file")->required();
    svg->add_option("-o,--out", common.out, "Output SVG file, or directory for --turntable")->required();
    svg->add_option("--data", common.data, "Dataset (for --frame cameras and scene bounds)");
    detail::add_camera_options(svg, camera);
    detail::add_render_options(svg, common);

    auto *eval = app.add_subcommand("eval", "Per-view pixel-L2 and distance-transform report");
    eval->add_option("--strokes", common.strokes, "Stroke file")->required();
    eval->add_option("--data", common.data, "Dataset directory")->required();
    eval->add_option("-o,--out", common.out, "Write the report here instead of stdout");
    detail::add_render_options(eval, common);

    // --config may follow the subcommand; top-level keys in the file then
    // belong to that subcommand.
    std::vector<std::string> args(argv, argv + argc);
    std::string active;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            std::rotate(args.begin() + 1, args.begin() + i, args.begin() + i + 2);
            ++i;
        } else if (args[i].rfind("--config=", 0) == 0) {
            std::rotate(args.begin() + 1, args.begin() + i, args.begin() + i + 1);
        } else if (active.empty() && app.get_subcommand_no_throw(args[i]) != nullptr) {
            active = args[i];
        }
    }
    app.config_formatter(std::make_shared<detail::SubcommandToml>(active));
    std::vector<const char *> reordered;
    for (const auto &a : args) reordered.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(reordered.size()), reordered.data());
    } catch (const CLI::CallForHelp &e) {
        out << app.help();
        return ok;
    } catch (const CLI::CallForAllHelp &e) {
        out << app.help("", CLI::AppFormatMode::All);
        return ok;
    } catch (const CLI::ParseError &e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return usage;
    }

    try {
        parallel::set_thread_count(common.threads);
        std::optional<Dataset> ds;
        auto load = [&] {
            DatasetOptions o{points_path, segments_path};
            ds = load_dataset(common.data, o);
        };

        if (*init) {
            load();
            InitConfig ic;
            ic.n_ind = n_ind;
            ic.n_dep = n_dep;
            ic.method = detail::parse_init(init_method);
            ic.seed = seed;
            const auto set = init_strokes(*ds, ic);
            save_strokes(common.out, set, detail::parse_precision(precision));
            out << "wrote " << common.out << " (" << set.curves.size() << " curves, " << set.quadrics.size()
                << " superquadrics)\n";
            return ok;
        }

        if (*opt) {
            load();
            const auto strokes = load_strokes(common.strokes);
            OptimizeConfig oc;
            oc.render = detail::make_settings(ds->bbox, ds->width(), ds->height(), common);
            oc.loss.lambda = lambda;
            oc.loss.apply_robust = !no_robust;
            oc.loss.semantic_weight = semantic_weight;
            oc.schedule.steps = steps;
            oc.schedule.stage_split = stage_split;
            oc.schedule.batch = batch;
            oc.schedule.seed = seed;
            oc.schedule.checkpoint_every = checkpoint_every;
            oc.schedule.adam_curves.lr = lr;
            oc.schedule.adam_quadrics.lr = lr;
            const auto prec = detail::parse_precision(precision);

            const fs::path out_path = common.out;
            const fs::path log_file = log_path.empty() ? fs::path(out_path.string() + ".log.csv") : fs::path(log_path);
            std::ofstream log(log_file);
            if (!log) throw IoError("cannot write " + log_file.string());
            log << "step,stage,loss\n";
            oc.on_step = [&](const LogEntry &e) {
                char line[64];
                std::snprintf(line, sizeof line, "%ld,%d,%.17g\n", e.step, e.stage, e.loss);
                log << line;
            };
            const fs::path ckdir = checkpoint_dir.empty() ? out_path.parent_path() : fs::path(checkpoint_dir);
            oc.on_checkpoint = [&](long step, const StrokeSet &s) {
                if (!ckdir.empty()) fs::create_directories(ckdir);
                char name[64];
                std::snprintf(name, sizeof name, "checkpoint_%06ld.3ddl", step);
                save_strokes(ckdir / name, s, prec);
            };
            auto backend = detail::make_backend(loss_name, dt_weight, sidecar_addr);
            const auto result = optimize(*ds, strokes, oc, *backend);
            save_strokes(out_path, result.strokes, prec);
            if (!log.flush()) throw IoError("cannot write " + log_file.string());
            out << "wrote " << out_path.string() << " and " << log_file.string();
            if (!result.history.empty()) out << " (final loss " << result.history.back().loss << ")";
            out << '\n';
            return ok;
        }

        if (*render || *svg) {
            const auto strokes = load_strokes(common.strokes);
            if (!common.data.empty()) load();
            const SceneBounds b = ds ? ds->bbox : detail::strokes_bounds(strokes);
            const auto cams = detail::cameras_for(camera, b, ds);
            const bool to_dir = *render || cams.size() > 1;
            if (to_dir) fs::create_directories(common.out);
            for (const auto &[name, cam] : cams) {
                const auto settings = detail::make_settings(b, cam.width, cam.height, common);
                if (*render) {
                    const fs::path p = fs::path(common.out) / (name + ".png");
                    write_png(p, render_sketch(cam, strokes, settings).image);
                    out << "wrote " << p.string() << '\n';
                } else {
                    const fs::path p = to_dir ? fs::path(common.out) / (name + ".svg") : fs::path(common.out);
                    const auto rep = export_svg(strokes, cam, p, settings.raster.stroke_width, settings);
                    for (const auto &w : rep.warnings) err << "warning: " << w << '\n';
                    out << "wrote " << p.string() << " (" << rep.paths << " paths, " << rep.polylines
                        << " polylines)\n";
                }
            }
            return ok;
        }

        if (*eval) {
            load();
            const auto strokes = load_strokes(common.strokes);
            const auto settings = detail::make_settings(ds->bbox, ds->width(), ds->height(), common);
            std::ofstream file;
            if (!common.out.empty()) {
                file.open(common.out);
                if (!file) throw IoError("cannot write " + common.out);
            }
            std::ostream &rep = common.out.empty() ? out : file;
            rep << "view,pixel_l2,distance_transform\n";
            double sum_l2 = 0.0, sum_dt = 0.0;
            for (std::size_t i = 0; i < ds->views.size(); ++i) {
                const auto &v = ds->views[i];
                const auto img = render_sketch(v.camera, strokes, settings).image;
                const double l2 = pixel_l2(v.target.gray, img).value;
                const double dt = v.target.has_edges() ? distance_transform_loss(v.target.edge_distance, img).value
                                                       : std::numeric_limits<double>::quiet_NaN();
                sum_l2 += l2;
                sum_dt += dt;
                rep << v.name << ',' << l2 << ',' << dt << '\n';
            }
            const double n = static_cast<double>(ds->views.size());
            rep << "mean," << sum_l2 / n << ',' << sum_dt / n << '\n';
            return ok;
        }
    } catch (const NumericalAbort &e) {
        err << "numerical abort: " << e.what() << '\n';
        return numerical;
    } catch (const DomainError &e) {
        err << "error: " << e.what() << '\n';
        return usage;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << '\n';
        return io;
    }
    return usage;
}

} // namespace sketch3d::cli
