#include "gradiseg/synth.hpp"

#include "gradiseg/error.hpp"
#include "gradiseg/parallel.hpp"
#include "gradiseg/render.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace gradiseg {

using nlohmann::json;

namespace {

constexpr std::size_t kMaxObjects = 8;

const char* primitive_name(Primitive p) {
    switch (p) {
        case Primitive::sphere: return "sphere";
        case Primitive::box: return "box";
        case Primitive::ellipsoid: return "ellipsoid";
    }
    return "sphere";
}

Primitive parse_primitive(const std::string& s) {
    if (s == "sphere") return Primitive::sphere;
    if (s == "box") return Primitive::box;
    if (s == "ellipsoid") return Primitive::ellipsoid;
    throw ValidationError("unknown primitive '" + s + "'");
}

Vec3 half_extent(const ObjectSpec& o) {
    return o.primitive == Primitive::sphere ? Vec3::Constant(o.size.x()) : o.size;
}

double volume(const ObjectSpec& o) {
    const Vec3 h = half_extent(o);
    const double box = 8.0 * h.x() * h.y() * h.z();
    return o.primitive == Primitive::box ? box : box * std::numbers::pi / 6.0;
}

Vec3 to_vec3(const json& j, const char* what) {
    if (!j.is_array() || j.size() != 3) {
        throw ValidationError(std::string("scene spec field '") + what + "' must be a 3-vector");
    }
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json from_vec3(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 centroid(const SceneSpec& spec) {
    Vec3 c = Vec3::Zero();
    for (const auto& o : spec.objects) c += o.center;
    return c / static_cast<double>(spec.objects.size());
}

}  // namespace

void SceneSpec::validate() const {
    if (objects.empty()) throw ValidationError("scene spec has no objects");
    if (objects.size() > kMaxObjects) throw ValidationError("scene spec has more than 8 objects");
    for (std::size_t i = 0; i < objects.size(); ++i) {
        const ObjectSpec& o = objects[i];
        const std::string tag = "object " + std::to_string(i + 1);
        const Vec3 h = half_extent(o);
        if (!(h.minCoeff() > 0.0) || !h.allFinite()) throw ValidationError(tag + ": size must be positive");
        if (((o.center - h).array() < -1.0).any() || ((o.center + h).array() > 1.0).any()) {
            throw ValidationError(tag + ": extends outside the unit working volume [-1,1]^3");
        }
        if ((o.color.array() < 0.0).any() || (o.color.array() > 1.0).any()) {
            throw ValidationError(tag + ": color outside [0,1]");
        }
        if (o.samples < 1) throw ValidationError(tag + ": samples must be >= 1");
    }
    if (views < 2) throw ValidationError("scene spec needs at least 2 views");
    if (held_out_views < 0) throw ValidationError("held_out_views must be >= 0");
    if (image_size < 4 || image_size > 4096) throw ValidationError("image_size out of range");
    if (!(ring_radius > 1.8)) throw ValidationError("ring_radius must keep cameras outside the working volume");
    if (!(half_field > 0.0)) throw ValidationError("half_field must be positive");
    if (encoding_dim <= objects.size()) {
        throw ValidationError("encoding_dim must exceed the object count");
    }
    if (num_classes <= objects.size() || num_classes > 256) {
        throw ValidationError("num_classes must exceed the object count and be <= 256");
    }
}

SceneSpec SceneSpec::standard() {
    SceneSpec s;
    ObjectSpec a;
    a.primitive = Primitive::sphere;
    a.center = Vec3(-0.45, -0.35, 0.0);
    a.size = Vec3::Constant(0.35);
    a.color = Vec3(0.85, 0.25, 0.2);
    ObjectSpec b;
    b.primitive = Primitive::box;
    b.center = Vec3(0.5, -0.25, -0.05);
    b.size = Vec3(0.28, 0.28, 0.3);
    b.color = Vec3(0.2, 0.75, 0.3);
    ObjectSpec c;
    c.primitive = Primitive::ellipsoid;
    c.center = Vec3(0.05, 0.55, 0.05);
    c.size = Vec3(0.45, 0.25, 0.3);
    c.color = Vec3(0.25, 0.35, 0.9);
    s.objects = {a, b, c};
    return s;
}

SceneSpec load_scene_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open scene spec " + path.string());
    SceneSpec spec;
    try {
        const json j = json::parse(in);
        spec.objects.clear();
        for (const json& jo : j.at("objects")) {
            ObjectSpec o;
            o.primitive = parse_primitive(jo.value("primitive", std::string("sphere")));
            o.center = to_vec3(jo.at("center"), "center");
            if (jo.contains("size")) {
                const json& sz = jo.at("size");
                o.size = sz.is_number() ? Vec3::Constant(sz.get<double>()) : to_vec3(sz, "size");
            }
            if (jo.contains("color")) o.color = to_vec3(jo.at("color"), "color");
            o.samples = jo.value("samples", o.samples);
            spec.objects.push_back(o);
        }
        spec.views = j.value("views", spec.views);
        spec.held_out_views = j.value("held_out_views", spec.held_out_views);
        spec.ring_radius = j.value("ring_radius", spec.ring_radius);
        spec.elevation_deg = j.value("elevation_deg", spec.elevation_deg);
        spec.image_size = j.value("image_size", spec.image_size);
        spec.half_field = j.value("half_field", spec.half_field);
        spec.encoding_dim = j.value("encoding_dim", spec.encoding_dim);
        spec.num_classes = j.value("num_classes", spec.num_classes);
        spec.seed = j.value("seed", spec.seed);
    } catch (const json::exception& e) {
        throw ValidationError("malformed scene spec: " + std::string(e.what()));
    }
    spec.validate();
    return spec;
}

void save_scene_spec(const SceneSpec& spec, const std::filesystem::path& path) {
    json objects = json::array();
    for (const auto& o : spec.objects) {
        objects.push_back({{"primitive", primitive_name(o.primitive)},
                           {"center", from_vec3(o.center)},
                           {"size", from_vec3(o.size)},
                           {"color", from_vec3(o.color)},
                           {"samples", o.samples}});
    }
    const json j = {{"objects", objects},
                    {"views", spec.views},
                    {"held_out_views", spec.held_out_views},
                    {"ring_radius", spec.ring_radius},
                    {"elevation_deg", spec.elevation_deg},
                    {"image_size", spec.image_size},
                    {"half_field", spec.half_field},
                    {"encoding_dim", spec.encoding_dim},
                    {"num_classes", spec.num_classes},
                    {"seed", spec.seed}};
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

std::vector<CameraView> camera_ring(const SceneSpec& spec) {
    const Vec3 target = centroid(spec);
    const double elev = spec.elevation_deg * std::numbers::pi / 180.0;
    const double focal = 0.5 * spec.image_size * spec.ring_radius / spec.half_field;
    const double center = 0.5 * (spec.image_size - 1);
    auto make = [&](double azimuth) {
        CameraView v;
        const Vec3 eye = target + spec.ring_radius * Vec3(std::cos(elev) * std::cos(azimuth),
                                                          std::cos(elev) * std::sin(azimuth),
                                                          std::sin(elev));
        v.world_to_camera = look_at(eye, target, Vec3(0.0, 0.0, 1.0));
        v.intrinsics = {focal, focal, center, center, spec.image_size, spec.image_size};
        return v;
    };
    std::vector<CameraView> views;
    const double step = 2.0 * std::numbers::pi / spec.views;
    for (int i = 0; i < spec.views; ++i) views.push_back(make(step * i));
    // Held-out cameras sit halfway between ring cameras, spread around the ring.
    for (int h = 0; h < spec.held_out_views; ++h) {
        const int slot = (h * spec.views) / std::max(1, spec.held_out_views);
        views.push_back(make(step * (slot + 0.5)));
    }
    return views;
}

SynthScene generate(const SceneSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.03);

    SynthScene scene;
    scene.cloud = GaussianCloud(spec.encoding_dim);
    for (std::size_t k = 0; k < spec.objects.size(); ++k) {
        const ObjectSpec& o = spec.objects[k];
        const Vec3 h = half_extent(o);
        const double spacing = std::cbrt(volume(o) / o.samples);
        const auto gid = static_cast<std::int32_t>(k + 1);
        for (int s = 0; s < o.samples; ++s) {
            Vec3 u;
            do {
                u = Vec3(unit(rng), unit(rng), unit(rng));
            } while (o.primitive != Primitive::box && u.squaredNorm() > 1.0);
            Gaussian g;
            g.position = o.center + u.cwiseProduct(h);
            g.scale = Vec3::Constant(0.6 * spacing);
            g.opacity = 0.8;
            // Vertical shading keeps the images from being flat color fields.
            const double shade = 0.75 + 0.25 * (0.5 * (u.z() + 1.0));
            for (int c = 0; c < 3; ++c) {
                g.color[c] = std::clamp(o.color[c] * shade + noise(rng), 0.0, 1.0);
            }
            g.encoding.assign(spec.encoding_dim, 0.0);
            g.encoding[k + 1] = 1.0;
            scene.cloud.push_back(g);
            scene.cloud.group_id.back() = gid;
        }
    }

    // Logit 0 = 1 - sum of foreground weights, logit g = weight of group g:
    // exactly the scores group_weight_mask compares.
    scene.head = ClassifierHead(spec.num_classes, spec.encoding_dim);
    scene.head.biases[0] = 1.0;
    for (std::size_t g = 1; g <= spec.objects.size(); ++g) {
        scene.head.weight(g, g) = 1.0;
        scene.head.weight(0, g) = -1.0;
    }

    Dataset& data = scene.dataset;
    data.views = camera_ring(spec);
    data.num_classes = spec.num_classes;
    data.bounds_min = Vec3::Constant(-1.0);
    data.bounds_max = Vec3::Constant(1.0);
    const std::size_t groups = spec.objects.size() + 1;
    for (std::size_t v = 0; v < data.views.size(); ++v) {
        CameraView& cam = data.views[v];
        const RenderOutput out = render(scene.cloud, cam);
        cam.image = out.color;
        cam.mask = group_weight_mask(render_group_weights(scene.cloud, cam, groups), cam.width(),
                                     cam.height(), groups);
        const bool held = v >= static_cast<std::size_t>(spec.views);
        data.held_out.push_back(held);
        char name[32];
        std::snprintf(name, sizeof name, held ? "test_%02zu" : "view_%02zu",
                      held ? v - spec.views : v);
        data.names.emplace_back(name);
    }
    return scene;
}

}  // namespace gradiseg
