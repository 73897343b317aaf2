#include "gradiseg/camera.hpp"

#include "gradiseg/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gradiseg {

void CameraView::validate(std::size_t num_classes) const {
    const Intrinsics& k = intrinsics;
    if (!(k.fx > 0.0) || !(k.fy > 0.0)) {
        throw ValidationError("camera focal lengths must be positive");
    }
    if (k.width < 1 || k.height < 1) {
        throw ValidationError("camera image size must be at least 1x1");
    }
    const Mat3 rot = world_to_camera.topLeftCorner<3, 3>();
    if ((rot * rot.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-5 ||
        std::abs(rot.determinant() - 1.0) > 1e-5) {
        throw ValidationError("world_to_camera rotation block is not orthonormal");
    }
    if (!world_to_camera.allFinite() ||
        (world_to_camera.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-9) {
        throw ValidationError("world_to_camera is not a rigid transform");
    }
    if (!image.data.empty() && (image.width != k.width || image.height != k.height)) {
        throw ValidationError("view image size does not match the intrinsics");
    }
    if (!mask.data.empty()) {
        if (mask.width != k.width || mask.height != k.height) {
            throw ValidationError("view mask size does not match the intrinsics");
        }
        for (const std::uint8_t v : mask.data) {
            if (v >= num_classes) {
                throw ValidationError("mask id " + std::to_string(v) + " >= class count");
            }
        }
    }
}

Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
    const Vec3 forward = (target - eye).normalized();
    const Vec3 right = forward.cross(up).normalized();
    const Vec3 down = forward.cross(right);
    Mat3 rot;
    rot.row(0) = right.transpose();
    rot.row(1) = down.transpose();
    rot.row(2) = forward.transpose();
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rot;
    m.topRightCorner<3, 1>() = -rot * eye;
    return m;
}

namespace {

std::optional<ProjectedGaussian> project_impl(const Vec3& position, const Vec3& scale,
                                              const Vec4& rotation, const CameraView& cam,
                                              std::int64_t source_index) {
    const Mat3 view_rot = cam.world_to_camera.topLeftCorner<3, 3>();
    const Vec3 t = view_rot * position + cam.world_to_camera.topRightCorner<3, 1>();
    if (!(t.z() > kNearPlane)) {
        return std::nullopt;
    }
    const Intrinsics& k = cam.intrinsics;
    ProjectedGaussian pg;
    pg.cam_point = t;
    Mat23 jac = Mat23::Zero();
    Vec2 mean;
    if (cam.mode == Projection::pinhole) {
        const double inv_z = 1.0 / t.z();
        mean = Vec2(k.fx * t.x() * inv_z + k.cx, k.fy * t.y() * inv_z + k.cy);
        jac(0, 0) = k.fx * inv_z;
        jac(0, 2) = -k.fx * t.x() * inv_z * inv_z;
        jac(1, 1) = k.fy * inv_z;
        jac(1, 2) = -k.fy * t.y() * inv_z * inv_z;
    } else {
        mean = Vec2(k.fx * t.x() + k.cx, k.fy * t.y() + k.cy);
        jac(0, 0) = k.fx;
        jac(1, 1) = k.fy;
    }
    pg.jacobian = jac;
    pg.rotation = quat_to_rotation(rotation);
    const Mat3 m = pg.rotation * scale.asDiagonal();
    pg.cov_cam = view_rot * (m * m.transpose()) * view_rot.transpose();
    Mat2 cov = jac * pg.cov_cam * jac.transpose();
    const double off = 0.5 * (cov(0, 1) + cov(1, 0));
    cov(0, 1) = off;
    cov(1, 0) = off;
    cov(0, 0) += kCovDilation;
    cov(1, 1) += kCovDilation;

    const double half_trace = 0.5 * (cov(0, 0) + cov(1, 1));
    const double det = cov(0, 0) * cov(1, 1) - off * off;
    const double lambda_max = half_trace + std::sqrt(std::max(0.0, half_trace * half_trace - det));
    const double radius = 3.0 * std::sqrt(lambda_max);
    if (mean.x() + radius < -0.5 || mean.x() - radius > k.width - 0.5 ||
        mean.y() + radius < -0.5 || mean.y() - radius > k.height - 0.5) {
        return std::nullopt;
    }
    pg.splat.mean2d = mean;
    pg.splat.cov2d = cov;
    pg.splat.depth = t.z();
    pg.splat.source_index = source_index;
    return pg;
}

}  // namespace

std::optional<ProjectedGaussian> project_gaussian(const Gaussian& g, const CameraView& cam,
                                                  std::int64_t source_index) {
    return project_impl(g.position, g.scale, g.rotation, cam, source_index);
}

std::optional<ProjectedGaussian> project_row(const GaussianCloud& cloud, std::size_t i,
                                             const CameraView& cam) {
    return project_impl(cloud.positions[i], cloud.scales[i], cloud.rotations[i], cam,
                        static_cast<std::int64_t>(i));
}

std::vector<std::size_t> depth_sort(std::span<const Splat2D> splats) {
    for (const Splat2D& s : splats) {
        if (std::isnan(s.depth)) {
            throw ValidationError("depth_sort: NaN depth");
        }
    }
    std::vector<std::size_t> order(splats.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (splats[a].depth != splats[b].depth) {
            return splats[a].depth < splats[b].depth;
        }
        return splats[a].source_index < splats[b].source_index;
    });
    return order;
}

}  // namespace gradiseg
