#pragma once

#include "gradiseg/camera.hpp"
#include "gradiseg/render.hpp"
#include "gradiseg/scene.hpp"

#include <cstddef>
#include <vector>

namespace gradiseg {

/// Gradients in optimizer coordinates: log-scale, logit-opacity, and
/// rotation projected onto the tangent space of the unit quaternion.
struct ParamGrads {
    std::size_t dim = 0;
    std::vector<Vec3> position;
    std::vector<Vec3> log_scale;
    std::vector<Vec4> rotation;
    std::vector<double> opacity_logit;
    std::vector<Vec3> color;
    std::vector<double> encoding;  // N x dim
    std::vector<std::uint8_t> visible;  // produced >= 1 fragment
    HeadGrads head;

    ParamGrads() = default;
    ParamGrads(std::size_t n, std::size_t encoding_dim);

    std::size_t size() const { return position.size(); }
    std::span<double> encoding_of(std::size_t i) { return {encoding.data() + i * dim, dim}; }
    std::span<const double> encoding_of(std::size_t i) const {
        return {encoding.data() + i * dim, dim};
    }

    /// Elementwise this += scale * other (head included when shapes match).
    void add(const ParamGrads& other, double scale = 1.0);
    bool all_finite() const;
};

/// Upstream gradient per pixel: 3 color channels then dim identity channels.
struct PixelGrads {
    std::size_t dim = 0;
    std::vector<double> values;  // pixels x (3 + dim)

    PixelGrads() = default;
    PixelGrads(std::size_t pixels, std::size_t encoding_dim)
        : dim(encoding_dim), values(pixels * (3 + encoding_dim), 0.0) {}
    std::size_t stride() const { return 3 + dim; }
};

/// Exact reverse-mode gradients of render() for the given upstream pixel
/// gradients. `out` must come from render(cloud, cam, background).
/// `identity_geometry_scale` weights the identity channels' contribution to
/// the geometry/opacity gradients (1 = exact; encodings are always exact).
ParamGrads backward(const GaussianCloud& cloud, const CameraView& cam, const RenderOutput& out,
                    const PixelGrads& pixel_grads, const Vec3& background = Vec3::Zero(),
                    double identity_geometry_scale = 1.0);

enum class MonitorMode { norm_sum, vector_sum };

/// Identity-gradient monitor, visibility count and position-gradient EMA.
void accumulate_monitors(GaussianCloud& cloud, const ParamGrads& grads,
                         MonitorMode mode = MonitorMode::norm_sum);

}  // namespace gradiseg
