#pragma once

#include "gradiseg/camera.hpp"
#include "gradiseg/image.hpp"
#include "gradiseg/scene.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace gradiseg {

inline constexpr double kAlphaMax = 0.99;
inline constexpr double kAlphaMin = 1.0 / 255.0;
inline constexpr int kTileSize = 16;

struct Fragment {
    std::int32_t source_index = -1;
    bool clamped = false;  // alpha hit kAlphaMax
    double alpha = 0.0;
    double transmittance_before = 1.0;
};

struct RenderOutput {
    int width = 0;
    int height = 0;
    std::size_t dim = 0;
    Image color;
    std::vector<double> identity;  // pixels x dim
    std::vector<double> final_transmittance;
    // Fragments of pixel p are fragments[fragment_begin[p] .. fragment_end[p]).
    std::vector<Fragment> fragments;
    std::vector<std::uint32_t> fragment_begin;
    std::vector<std::uint32_t> fragment_end;
    // Projection of every cloud row for this view; nullopt when culled.
    std::vector<std::optional<ProjectedGaussian>> projections;

    std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
    std::span<const Fragment> pixel_fragments(std::size_t p) const {
        return {fragments.data() + fragment_begin[p], fragment_end[p] - fragment_begin[p]};
    }
};

/// o * exp(-0.5 d^T cov^-1 d), clamped to kAlphaMax. Values below
/// kAlphaMin are returned as-is; the rasterizer drops them. Throws
/// ValidationError for a singular covariance.
double pixel_alpha(const Splat2D& splat, double opacity, const Vec2& pixel);

/// Front-to-back alpha compositing of color and identity encodings, tiled
/// 16x16 and parallel over tiles. Identity gets no background term.
RenderOutput render(const GaussianCloud& cloud, const CameraView& cam,
                    const Vec3& background = Vec3::Zero());

/// Per pixel and group, the summed blending weight of that group's
/// fragments. Layout pixels x num_groups. Throws ValidationError if any
/// Gaussian is unassigned or has an id >= num_groups.
std::vector<double> render_group_weights(const GaussianCloud& cloud, const CameraView& cam,
                                         std::size_t num_groups);

/// Id mask from group weights: background (0) scores 1 - sum of weights of
/// groups >= 1, each group scores its weight, argmax with lowest id on ties.
Mask group_weight_mask(const std::vector<double>& weights, int width, int height,
                       std::size_t num_groups);

}  // namespace gradiseg
