#pragma once

// Internal rasterizer state shared by the forward and backward passes.

#include "gradiseg/camera.hpp"
#include "gradiseg/scene.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace gradiseg::detail {

/// Inverse 2D covariance [[a, b], [b, c]].
struct Conic {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;

    /// -0.5 d^T conic d
    double power(double dx, double dy) const {
        return -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
    }
};

Conic conic_of(const Mat2& cov);

struct RasterSplat {
    std::int32_t source = -1;
    Vec2 mean = Vec2::Zero();
    Conic conic;
    double opacity = 0.0;
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel box
};

struct RasterSetup {
    std::vector<std::optional<ProjectedGaussian>> projections;
    std::vector<RasterSplat> splats;  // depth order
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<std::vector<std::uint32_t>> tile_lists;  // indices into splats, depth order
};

RasterSetup prepare(const GaussianCloud& cloud, const CameraView& cam);

}  // namespace gradiseg::detail
