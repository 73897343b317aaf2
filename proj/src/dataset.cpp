#include "gradiseg/dataset.hpp"

#include "gradiseg/error.hpp"
#include "gradiseg/scene.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace gradiseg {

using nlohmann::json;

std::vector<std::size_t> Dataset::train_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < views.size(); ++i) {
        if (!held_out[i]) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> Dataset::test_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < views.size(); ++i) {
        if (held_out[i]) out.push_back(i);
    }
    return out;
}

double Dataset::extent() const { return scene_extent(bounds_min, bounds_max); }

namespace {

json vec3(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 to_vec3(const json& j, const char* what) {
    if (!j.is_array() || j.size() != 3) {
        throw ValidationError(std::string("manifest field '") + what + "' must be a 3-vector");
    }
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "masks");
    json views = json::array();
    for (std::size_t i = 0; i < data.views.size(); ++i) {
        const CameraView& v = data.views[i];
        const std::string& name = data.names[i];
        json pose = json::array();
        for (int r = 0; r < 4; ++r) {
            for (int c = 0; c < 4; ++c) {
                pose.push_back(v.world_to_camera(r, c));
            }
        }
        const std::string image = "images/" + name + ".ppm";
        const std::string mask = "masks/" + name + ".pgm";
        write_ppm(v.image, dir / image);
        write_pgm(v.mask, dir / mask);
        views.push_back({{"name", name},
                         {"split", data.held_out[i] ? "test" : "train"},
                         {"mode", v.mode == Projection::pinhole ? "pinhole" : "orthographic"},
                         {"width", v.intrinsics.width},
                         {"height", v.intrinsics.height},
                         {"fx", v.intrinsics.fx},
                         {"fy", v.intrinsics.fy},
                         {"cx", v.intrinsics.cx},
                         {"cy", v.intrinsics.cy},
                         {"world_to_camera", pose},
                         {"image", image},
                         {"mask", mask}});
    }
    const json manifest = {{"format", "gradiseg-dataset"},
                           {"version", 1},
                           {"num_classes", data.num_classes},
                           {"bounds_min", vec3(data.bounds_min)},
                           {"bounds_max", vec3(data.bounds_max)},
                           {"views", views}};
    std::ofstream out(dir / "manifest.json");
    if (!out) {
        throw IoError("cannot write " + (dir / "manifest.json").string());
    }
    out << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError("manifest is not valid JSON: " + std::string(e.what()));
    }
    Dataset data;
    try {
        data.num_classes = manifest.value("num_classes", std::size_t{256});
        data.bounds_min = to_vec3(manifest.at("bounds_min"), "bounds_min");
        data.bounds_max = to_vec3(manifest.at("bounds_max"), "bounds_max");
        for (const json& jv : manifest.at("views")) {
            CameraView v;
            v.intrinsics.width = jv.at("width").get<int>();
            v.intrinsics.height = jv.at("height").get<int>();
            v.intrinsics.fx = jv.at("fx").get<double>();
            v.intrinsics.fy = jv.at("fy").get<double>();
            v.intrinsics.cx = jv.at("cx").get<double>();
            v.intrinsics.cy = jv.at("cy").get<double>();
            const std::string mode = jv.value("mode", std::string("pinhole"));
            if (mode != "pinhole" && mode != "orthographic") {
                throw ValidationError("unknown camera mode '" + mode + "'");
            }
            v.mode = mode == "pinhole" ? Projection::pinhole : Projection::orthographic;
            const json& pose = jv.at("world_to_camera");
            if (!pose.is_array() || pose.size() != 16) {
                throw ValidationError("world_to_camera must hold 16 numbers (row-major 4x4)");
            }
            for (int r = 0; r < 4; ++r) {
                for (int c = 0; c < 4; ++c) {
                    v.world_to_camera(r, c) = pose[r * 4 + c].get<double>();
                }
            }
            v.image = read_ppm(dir / jv.at("image").get<std::string>());
            v.mask = read_pgm(dir / jv.at("mask").get<std::string>());
            v.validate(data.num_classes);
            data.names.push_back(jv.value("name", "view_" + std::to_string(data.views.size())));
            data.held_out.push_back(jv.value("split", std::string("train")) == "test");
            data.views.push_back(std::move(v));
        }
    } catch (const json::exception& e) {
        throw ValidationError("malformed manifest: " + std::string(e.what()));
    }
    return data;
}

}  // namespace gradiseg
