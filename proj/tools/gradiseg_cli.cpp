// gradiseg command-line front end: gen, train, render, segment, eval, edit.

#include "gradiseg/dataset.hpp"
#include "gradiseg/error.hpp"
#include "gradiseg/metrics.hpp"
#include "gradiseg/render.hpp"
#include "gradiseg/scene_io.hpp"
#include "gradiseg/simd.hpp"
#include "gradiseg/synth.hpp"
#include "gradiseg/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace gradiseg;
using ojson = nlohmann::ordered_json;

namespace {

struct Options {
    std::uint64_t seed = 42;
    bool seed_given = false;
    bool verbose = false;

    fs::path spec, data, config, scene, out;
    int view = 0;
    int iters = -1;
    int band = 0;
    std::string background = "0,0,0";
    std::int32_t remove = -1, extract = -1;
    std::string recolor;
};

Vec3 parse_rgb(const std::string& text, const char* what) {
    std::stringstream ss(text);
    std::string part;
    Vec3 v;
    int c = 0;
    while (std::getline(ss, part, ',')) {
        if (c >= 3) break;
        try {
            std::size_t used = 0;
            v[c] = std::stod(part, &used);
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw ValidationError(std::string(what) + ": '" + text + "' is not r,g,b");
        }
        ++c;
    }
    if (c != 3 || std::getline(ss, part)) throw ValidationError(std::string(what) + ": expected r,g,b");
    if ((v.array() < 0.0).any() || (v.array() > 1.0).any()) {
        throw ValidationError(std::string(what) + ": components must lie in [0,1]");
    }
    return v;
}

fs::path run_json_dir(const fs::path& out, bool out_is_dir) {
    if (out_is_dir) return out;
    const fs::path parent = out.parent_path();
    return parent.empty() ? fs::path(".") : parent;
}

void write_run_json(const fs::path& dir, const std::string& command, const Options& o, ojson extra) {
    fs::create_directories(dir);
    ojson j;
    j["command"] = command;
    j["seed"] = o.seed;
    j["simd"] = std::string(simd::isa_name(simd::kernels().isa));
    for (auto& [k, v] : extra.items()) j[k] = v;
    std::ofstream f(dir / "run.json");
    if (!f) throw IoError("cannot write " + (dir / "run.json").string());
    f << j.dump(2) << "\n";
}

// Cameras for render/segment: the dataset's when given, the default ring otherwise.
CameraView pick_view(const Options& o) {
    std::vector<CameraView> views;
    if (!o.data.empty()) {
        views = load_dataset(o.data).views;
    } else {
        views = camera_ring(SceneSpec::standard());
    }
    if (o.view < 0 || static_cast<std::size_t>(o.view) >= views.size()) {
        throw ValidationError("--view " + std::to_string(o.view) + " out of range (" +
                              std::to_string(views.size()) + " views)");
    }
    return views[static_cast<std::size_t>(o.view)];
}

int cmd_gen(const Options& o) {
    SceneSpec spec = o.spec.empty() ? SceneSpec::standard() : load_scene_spec(o.spec);
    spec.seed = o.seed;
    const SynthScene scene = generate(spec);
    save_dataset(scene.dataset, o.out);
    save_scene(scene.cloud, scene.head, o.out / "gt_scene.gseg");
    save_scene_spec(spec, o.out / "scene_spec.json");
    write_run_json(o.out, "gen", o,
                   {{"spec", o.spec.empty() ? "builtin:standard" : o.spec.string()},
                    {"views", scene.dataset.views.size()},
                    {"gaussians", scene.cloud.size()}});
    spdlog::info("wrote {} views and {} ground-truth gaussians to {}", scene.dataset.views.size(),
                 scene.cloud.size(), o.out.string());
    return 0;
}

int cmd_train(const Options& o) {
    TrainSchedule s = o.config.empty() ? TrainSchedule{} : TrainSchedule::load(o.config);
    if (o.seed_given || o.config.empty()) s.seed = o.seed;
    if (o.iters >= 0) s.total_iters = o.iters;
    s.validate();
    const Dataset data = load_dataset(o.data);
    const TrainResult r = train(data, s, o.out);
    if (!r.metrics.empty()) {
        const MetricsRow& last = r.metrics.back();
        spdlog::info("iter {}: l1 {:.4f} l2d {:.4f} l3d {:.4f} N {} heldout psnr {:.2f}", last.iter,
                     last.l1, last.l2d, last.l3d, last.count, last.psnr);
    }
    return 0;
}

int cmd_render(const Options& o) {
    const auto [cloud, head] = load_scene(o.scene);
    const CameraView cam = pick_view(o);
    const RenderOutput out = render(cloud, cam, parse_rgb(o.background, "--background"));
    write_ppm(out.color, o.out);
    write_run_json(run_json_dir(o.out, false), "render", o,
                   {{"scene", o.scene.string()}, {"view", o.view}, {"out", o.out.string()}});
    return 0;
}

int cmd_segment(const Options& o) {
    const auto [cloud, head] = load_scene(o.scene);
    const CameraView cam = pick_view(o);
    write_pgm(segment_view(cloud, head, cam), o.out);
    write_run_json(run_json_dir(o.out, false), "segment", o,
                   {{"scene", o.scene.string()}, {"view", o.view}, {"out", o.out.string()}});
    return 0;
}

int cmd_eval(const Options& o) {
    const auto [cloud, head] = load_scene(o.scene);
    Dataset data = load_dataset(o.data);
    std::vector<std::size_t> views = data.test_indices();
    if (views.empty()) views = data.train_indices();
    std::vector<Mask> pred, gt;
    std::vector<Image> rendered, reference;
    const Vec3 bg = parse_rgb(o.background, "--background");
    for (const std::size_t v : views) {
        const CameraView& cam = data.views[v];
        const RenderOutput out = render(cloud, cam, bg);
        rendered.push_back(out.color);
        reference.push_back(cam.image);
        pred.push_back(segment_view(cloud, head, cam));
        gt.push_back(cam.mask);
    }
    const int band = o.band > 0 ? o.band : default_band(data.views[views.front()].width(),
                                                         data.views[views.front()].height());
    const EvalReport report = evaluate(pred, gt, rendered, reference, band);
    {
        const fs::path parent = o.out.parent_path();
        if (!parent.empty()) fs::create_directories(parent);
        std::ofstream f(o.out);
        if (!f) throw IoError("cannot write " + o.out.string());
        f << report.to_json() << "\n";
    }
    write_run_json(run_json_dir(o.out, false), "eval", o,
                   {{"scene", o.scene.string()}, {"data", o.data.string()}, {"band_px", band},
                    {"views", views.size()}, {"out", o.out.string()}});
    spdlog::info("mIoU {:.4f} mBIoU {:.4f} PSNR {:.2f} dB", report.miou, report.mbiou, report.mean_psnr);
    return 0;
}

int cmd_edit(const Options& o) {
    const int chosen = (o.remove >= 0) + (o.extract >= 0) + (!o.recolor.empty());
    if (chosen != 1) throw ValidationError("edit needs exactly one of --remove, --recolor, --extract");
    const auto [cloud, head] = load_scene(o.scene);
    GaussianCloud edited;
    ojson extra = {{"scene", o.scene.string()}, {"out", o.out.string()}};
    if (o.remove >= 0) {
        edited = remove_group(cloud, o.remove);
        extra["remove"] = o.remove;
    } else if (o.extract >= 0) {
        edited = extract_group(cloud, o.extract);
        extra["extract"] = o.extract;
    } else {
        const auto colon = o.recolor.find(':');
        if (colon == std::string::npos) throw ValidationError("--recolor expects GID:R,G,B");
        std::int32_t gid = 0;
        try {
            std::size_t used = 0;
            gid = std::stoi(o.recolor.substr(0, colon), &used);
            if (used != colon || gid < 0) throw std::invalid_argument("gid");
        } catch (const std::exception&) {
            throw ValidationError("--recolor: bad group id in '" + o.recolor + "'");
        }
        edited = recolor_group(cloud, gid, parse_rgb(o.recolor.substr(colon + 1), "--recolor"));
        extra["recolor"] = o.recolor;
    }
    save_scene(edited, head, o.out);
    extra["gaussians"] = edited.size();
    write_run_json(run_json_dir(o.out, false), "edit", o, extra);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gradiseg: Gaussian splatting with identity encodings for 3D segmentation"};
    app.require_subcommand(1);
    Options o;
    auto* seed = app.add_option("--seed", o.seed, "Seed for every random choice (default 42)");
    app.add_flag("-v,--verbose", o.verbose, "Debug logging");

    auto* gen = app.add_subcommand("gen", "Generate a synthetic multi-view dataset");
    gen->add_option("--spec", o.spec, "Scene spec JSON (default: built-in three-object scene)")
        ->check(CLI::ExistingFile);
    gen->add_option("--out", o.out, "Output dataset directory")->required();

    auto* tr = app.add_subcommand("train", "Optimize a scene on a dataset");
    tr->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    tr->add_option("--config", o.config, "key=value run config")->check(CLI::ExistingFile);
    tr->add_option("--out", o.out, "Output run directory")->required();
    tr->add_option("--iters", o.iters, "Override total_iters");

    auto* rd = app.add_subcommand("render", "Render one view of a scene to PPM");
    auto* sg = app.add_subcommand("segment", "Write the predicted label mask of one view as PGM");
    for (auto* sub : {rd, sg}) {
        sub->add_option("--scene", o.scene, "GSEG1 scene")->required()->check(CLI::ExistingFile);
        sub->add_option("--view", o.view, "View index")->required();
        sub->add_option("--data", o.data, "Dataset whose cameras to use (default: built-in ring)")
            ->check(CLI::ExistingDirectory);
        sub->add_option("--out", o.out, "Output file")->required();
    }
    rd->add_option("--background", o.background, "Background r,g,b in [0,1]");

    auto* ev = app.add_subcommand("eval", "Score a scene on a dataset's held-out views");
    ev->add_option("--scene", o.scene, "GSEG1 scene")->required()->check(CLI::ExistingFile);
    ev->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--out", o.out, "Report JSON")->required();
    ev->add_option("--band", o.band, "Boundary band in pixels (default 2% of the diagonal)");
    ev->add_option("--background", o.background, "Background r,g,b in [0,1]");

    auto* ed = app.add_subcommand("edit", "Remove, recolor or extract a group");
    ed->add_option("--scene", o.scene, "GSEG1 scene")->required()->check(CLI::ExistingFile);
    ed->add_option("--remove", o.remove, "Group id to drop")->check(CLI::NonNegativeNumber);
    ed->add_option("--recolor", o.recolor, "GID:R,G,B with components in [0,1]");
    ed->add_option("--extract", o.extract, "Group id to keep")->check(CLI::NonNegativeNumber);
    ed->add_option("--out", o.out, "Output scene")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    o.seed_given = seed->count() > 0;
    spdlog::set_level(o.verbose ? spdlog::level::debug : spdlog::level::info);

    try {
        if (gen->parsed()) return cmd_gen(o);
        if (tr->parsed()) return cmd_train(o);
        if (rd->parsed()) return cmd_render(o);
        if (sg->parsed()) return cmd_segment(o);
        if (ev->parsed()) return cmd_eval(o);
        if (ed->parsed()) return cmd_edit(o);
    } catch (const ValidationError& e) {
        spdlog::error("{}", e.what());
        return 2;
    } catch (const IoError& e) {
        spdlog::error("{}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("internal error: {}", e.what());
        return 1;
    }
    return 2;
}
