#pragma once

#include "gradiseg/dataset.hpp"
#include "gradiseg/scene.hpp"
#include "gradiseg/semantic_head.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gradiseg {

enum class Primitive { sphere, box, ellipsoid };

struct ObjectSpec {
    Primitive primitive = Primitive::sphere;
    Vec3 center = Vec3::Zero();
    Vec3 size = Vec3::Constant(0.3);  // radius per axis (sphere uses size.x)
    Vec3 color = Vec3::Constant(0.8);
    int samples = 400;
};

/// Procedural scene: objects inside [-1,1]^3 and a ring of cameras looking
/// at the object centroid.
struct SceneSpec {
    std::vector<ObjectSpec> objects;
    int views = 16;
    int held_out_views = 2;
    double ring_radius = 4.0;
    double elevation_deg = 25.0;
    int image_size = 64;
    double half_field = 1.5;  // world half-width covered at the ring radius
    std::size_t encoding_dim = 16;
    std::size_t num_classes = 256;
    std::uint64_t seed = 42;

    void validate() const;
    /// Three objects of different shape and color, well separated.
    static SceneSpec standard();
};

SceneSpec load_scene_spec(const std::filesystem::path& path);
void save_scene_spec(const SceneSpec& spec, const std::filesystem::path& path);

struct SynthScene {
    GaussianCloud cloud;   // group ids 1..objects
    ClassifierHead head;   // maps the one-hot ground-truth encodings to ids
    Dataset dataset;
};

/// Samples each object as a Gaussian cluster, renders every view and derives
/// masks from the per-group blending weights.
SynthScene generate(const SceneSpec& spec);

/// The same camera set without any objects rendered, for callers that need
/// a pose layout only.
std::vector<CameraView> camera_ring(const SceneSpec& spec);

}  // namespace gradiseg
