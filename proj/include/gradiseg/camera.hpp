#pragma once

#include "gradiseg/image.hpp"
#include "gradiseg/math.hpp"
#include "gradiseg/scene.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace gradiseg {

inline constexpr double kNearPlane = 0.01;
inline constexpr double kCovDilation = 0.3;

enum class Projection { pinhole, orthographic };

struct Intrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;
};

/// Camera looking down +z of its own frame (x right, y down). Pixel centers
/// sit at integer coordinates. Image and mask are optional payloads used for
/// training and evaluation.
struct CameraView {
    Mat4 world_to_camera = Mat4::Identity();
    Intrinsics intrinsics;
    Projection mode = Projection::pinhole;
    Image image;
    Mask mask;

    int width() const { return intrinsics.width; }
    int height() const { return intrinsics.height; }

    /// Throws ValidationError on bad intrinsics or a non-rigid pose.
    void validate(std::size_t num_classes = kDefaultClasses) const;
};

/// Builds a world_to_camera pose at `eye` looking at `target` with the given
/// world up vector.
Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& up);

struct Splat2D {
    Vec2 mean2d = Vec2::Zero();
    Mat2 cov2d = Mat2::Identity();
    double depth = 0.0;
    std::int64_t source_index = -1;
};

/// Screen-space Gaussian plus the Jacobian pieces the backward pass reuses.
struct ProjectedGaussian {
    Splat2D splat;
    Vec3 cam_point = Vec3::Zero();  // camera-space center
    Mat23 jacobian = Mat23::Zero();  // d(pixel)/d(camera point)
    Mat3 cov_cam = Mat3::Zero();     // W Sigma3d W^T
    Mat3 rotation = Mat3::Identity();  // Gaussian orientation R(q)
};

/// Projects g into cam. Returns nullopt when the center is behind the near
/// plane or the 3-sigma box lies fully outside the image.
std::optional<ProjectedGaussian> project_gaussian(const Gaussian& g, const CameraView& cam,
                                                  std::int64_t source_index = -1);

/// Same as project_gaussian for row i of a cloud, without copying it out.
std::optional<ProjectedGaussian> project_row(const GaussianCloud& cloud, std::size_t i,
                                             const CameraView& cam);

/// Ascending depth, ties by ascending source_index. Throws ValidationError on
/// a NaN depth.
std::vector<std::size_t> depth_sort(std::span<const Splat2D> splats);

}  // namespace gradiseg
