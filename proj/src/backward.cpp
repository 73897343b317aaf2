#include "gradiseg/backward.hpp"

#include "gradiseg/error.hpp"
#include "gradiseg/parallel.hpp"
#include "gradiseg/raster_detail.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

namespace gradiseg {

ParamGrads::ParamGrads(std::size_t n, std::size_t encoding_dim)
    : dim(encoding_dim),
      position(n, Vec3::Zero()),
      log_scale(n, Vec3::Zero()),
      rotation(n, Vec4::Zero()),
      opacity_logit(n, 0.0),
      color(n, Vec3::Zero()),
      encoding(n * encoding_dim, 0.0),
      visible(n, 0) {}

void ParamGrads::add(const ParamGrads& other, double scale) {
    if (other.size() != size() || other.dim != dim) {
        throw Error("ParamGrads::add: shape mismatch");
    }
    for (std::size_t i = 0; i < size(); ++i) {
        position[i] += scale * other.position[i];
        log_scale[i] += scale * other.log_scale[i];
        rotation[i] += scale * other.rotation[i];
        opacity_logit[i] += scale * other.opacity_logit[i];
        color[i] += scale * other.color[i];
        visible[i] = visible[i] | other.visible[i];
    }
    for (std::size_t k = 0; k < encoding.size(); ++k) {
        encoding[k] += scale * other.encoding[k];
    }
    if (other.head.weights.size() == head.weights.size()) {
        for (std::size_t k = 0; k < head.weights.size(); ++k) {
            head.weights[k] += scale * other.head.weights[k];
        }
        for (std::size_t k = 0; k < head.biases.size(); ++k) {
            head.biases[k] += scale * other.head.biases[k];
        }
    }
}

bool ParamGrads::all_finite() const {
    auto ok = [](const auto& v) { return v.allFinite(); };
    auto ok_s = [](double v) { return std::isfinite(v); };
    return std::all_of(position.begin(), position.end(), ok) &&
           std::all_of(log_scale.begin(), log_scale.end(), ok) &&
           std::all_of(rotation.begin(), rotation.end(), ok) &&
           std::all_of(opacity_logit.begin(), opacity_logit.end(), ok_s) &&
           std::all_of(color.begin(), color.end(), ok) &&
           std::all_of(encoding.begin(), encoding.end(), ok_s) &&
           std::all_of(head.weights.begin(), head.weights.end(), ok_s) &&
           std::all_of(head.biases.begin(), head.biases.end(), ok_s);
}

namespace {

// Screen-space gradient of one Gaussian, before the projection chain rule.
struct SplatGrad {
    Vec2 mean = Vec2::Zero();
    double conic_a = 0.0, conic_b = 0.0, conic_c = 0.0;
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
};

struct TileGrads {
    std::vector<std::int32_t> sources;  // first-appearance order
    std::vector<SplatGrad> splat;
    std::vector<double> encoding;  // sources.size() x dim
};

}  // namespace

ParamGrads backward(const GaussianCloud& cloud, const CameraView& cam, const RenderOutput& out,
                    const PixelGrads& pixel_grads, const Vec3& background,
                    double identity_geometry_scale) {
    const std::size_t n = cloud.size();
    const std::size_t dim = cloud.dim();
    const int width = cam.width();
    const int height = cam.height();
    const std::size_t pixels = static_cast<std::size_t>(width) * height;
    if (out.width != width || out.height != height || out.dim != dim ||
        out.projections.size() != n || out.fragment_begin.size() != pixels) {
        throw ValidationError("backward: render output does not match the cloud and camera");
    }
    if (pixel_grads.dim != dim || pixel_grads.values.size() != pixels * pixel_grads.stride()) {
        throw ValidationError("backward: pixel gradient buffer has the wrong shape");
    }

    std::vector<detail::Conic> conics(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (out.projections[i]) {
            conics[i] = detail::conic_of(out.projections[i]->splat.cov2d);
        }
    }

    const int tiles_x = (width + kTileSize - 1) / kTileSize;
    const int tiles_y = (height + kTileSize - 1) / kTileSize;
    const std::size_t tile_count = static_cast<std::size_t>(tiles_x) * tiles_y;
    std::vector<TileGrads> tiles(tile_count);
    std::atomic<bool> mismatch{false};

    parallel_for(tile_count, [&](std::size_t t) {
        TileGrads& tg = tiles[t];
        std::vector<std::int32_t> slot(n, -1);
        const int tx = static_cast<int>(t % tiles_x);
        const int ty = static_cast<int>(t / tiles_x);
        const std::size_t stride = pixel_grads.stride();
        for (int py = ty * kTileSize; py < std::min(height, (ty + 1) * kTileSize); ++py) {
            for (int px = tx * kTileSize; px < std::min(width, (tx + 1) * kTileSize); ++px) {
                const std::size_t p = static_cast<std::size_t>(py) * width + px;
                const auto frags = out.pixel_fragments(p);
                if (frags.empty()) {
                    continue;
                }
                const double* g = pixel_grads.values.data() + p * stride;
                const Vec3 g_color(g[0], g[1], g[2]);
                const double* g_ident = g + 3;
                double suffix = g_color.dot(background) * out.final_transmittance[p];
                for (std::size_t k = frags.size(); k-- > 0;) {
                    const Fragment& f = frags[k];
                    const auto src = static_cast<std::size_t>(f.source_index);
                    if (src >= n || !out.projections[src]) {
                        mismatch = true;
                        return;
                    }
                    std::int32_t s = slot[src];
                    if (s < 0) {
                        s = static_cast<std::int32_t>(tg.sources.size());
                        slot[src] = s;
                        tg.sources.push_back(f.source_index);
                        tg.splat.emplace_back();
                        tg.encoding.resize(tg.encoding.size() + dim, 0.0);
                    }
                    SplatGrad& sg = tg.splat[static_cast<std::size_t>(s)];
                    double* ge = tg.encoding.data() + static_cast<std::size_t>(s) * dim;

                    const double alpha = f.alpha;
                    const double w = alpha * f.transmittance_before;
                    const double* e = cloud.encodings.data() + src * dim;
                    double ident = 0.0;
                    for (std::size_t d = 0; d < dim; ++d) {
                        ident += g_ident[d] * e[d];
                        ge[d] += w * g_ident[d];
                    }
                    const double value = g_color.dot(cloud.colors[src]) + identity_geometry_scale * ident;
                    sg.color += w * g_color;

                    const double g_alpha = value * f.transmittance_before - suffix / (1.0 - alpha);
                    suffix += value * w;
                    if (f.clamped) {
                        continue;
                    }
                    const Vec2 mean = out.projections[src]->splat.mean2d;
                    const detail::Conic& cn = conics[src];
                    const double dx = px - mean.x();
                    const double dy = py - mean.y();
                    const double opacity = cloud.opacities[src];
                    sg.opacity += g_alpha * alpha / opacity;
                    const double g_power = g_alpha * alpha;
                    sg.mean += g_power * Vec2(cn.a * dx + cn.b * dy, cn.b * dx + cn.c * dy);
                    sg.conic_a += g_power * (-0.5 * dx * dx);
                    sg.conic_b += g_power * (-dx * dy);
                    sg.conic_c += g_power * (-0.5 * dy * dy);
                }
            }
        }
    });
    if (mismatch) {
        throw ValidationError("backward: fragment refers to a culled or missing gaussian");
    }

    std::vector<SplatGrad> screen(n);
    ParamGrads grads(n, dim);
    for (const TileGrads& tg : tiles) {
        for (std::size_t s = 0; s < tg.sources.size(); ++s) {
            const auto src = static_cast<std::size_t>(tg.sources[s]);
            SplatGrad& acc = screen[src];
            const SplatGrad& sg = tg.splat[s];
            acc.mean += sg.mean;
            acc.conic_a += sg.conic_a;
            acc.conic_b += sg.conic_b;
            acc.conic_c += sg.conic_c;
            acc.opacity += sg.opacity;
            acc.color += sg.color;
            double* ge = grads.encoding.data() + src * dim;
            const double* te = tg.encoding.data() + s * dim;
            for (std::size_t d = 0; d < dim; ++d) {
                ge[d] += te[d];
            }
            grads.visible[src] = 1;
        }
    }

    const Mat3 view_rot = cam.world_to_camera.topLeftCorner<3, 3>();
    const Intrinsics& k = cam.intrinsics;
    parallel_for(n, [&](std::size_t i) {
        if (!grads.visible[i]) {
            return;
        }
        const ProjectedGaussian& pg = *out.projections[i];
        const SplatGrad& sg = screen[i];
        const double o = cloud.opacities[i];
        grads.color[i] = sg.color;
        grads.opacity_logit[i] = sg.opacity * o * (1.0 - o);

        // conic -> 2D covariance: dL/dSigma = -A G A with G the symmetric
        // gradient of the conic matrix.
        const detail::Conic& cn = conics[i];
        Mat2 conic_m;
        conic_m << cn.a, cn.b, cn.b, cn.c;
        Mat2 g_conic;
        g_conic << sg.conic_a, 0.5 * sg.conic_b, 0.5 * sg.conic_b, sg.conic_c;
        const Mat2 g_cov2d = -conic_m * g_conic * conic_m;

        const Mat23& jac = pg.jacobian;
        const Mat23 g_jac = 2.0 * g_cov2d * jac * pg.cov_cam;
        const Mat3 g_cov_cam = jac.transpose() * g_cov2d * jac;
        const Mat3 g_cov3d = view_rot.transpose() * g_cov_cam * view_rot;

        const Vec3& s = cloud.scales[i];
        const Mat3 m = pg.rotation * s.asDiagonal();
        const Mat3 g_m = 2.0 * g_cov3d * m;
        const Mat3 g_rot = g_m * s.asDiagonal();
        Vec3 g_scale;
        for (int b = 0; b < 3; ++b) {
            g_scale[b] = pg.rotation.col(b).dot(g_m.col(b));
        }
        grads.log_scale[i] = g_scale.cwiseProduct(s);
        grads.rotation[i] = quat_to_rotation_backward(cloud.rotations[i], g_rot);

        const Vec3& t = pg.cam_point;
        Vec3 g_t = Vec3::Zero();
        if (cam.mode == Projection::pinhole) {
            const double iz = 1.0 / t.z();
            const double iz2 = iz * iz;
            const double iz3 = iz2 * iz;
            g_t.x() += sg.mean.x() * k.fx * iz;
            g_t.y() += sg.mean.y() * k.fy * iz;
            g_t.z() += -sg.mean.x() * k.fx * t.x() * iz2 - sg.mean.y() * k.fy * t.y() * iz2;
            g_t.x() += g_jac(0, 2) * (-k.fx * iz2);
            g_t.y() += g_jac(1, 2) * (-k.fy * iz2);
            g_t.z() += g_jac(0, 0) * (-k.fx * iz2) + g_jac(0, 2) * (2.0 * k.fx * t.x() * iz3) +
                       g_jac(1, 1) * (-k.fy * iz2) + g_jac(1, 2) * (2.0 * k.fy * t.y() * iz3);
        } else {
            g_t.x() += sg.mean.x() * k.fx;
            g_t.y() += sg.mean.y() * k.fy;
        }
        grads.position[i] = view_rot.transpose() * g_t;
    });
    return grads;
}

void accumulate_monitors(GaussianCloud& cloud, const ParamGrads& grads, MonitorMode mode) {
    const std::size_t n = cloud.size();
    const std::size_t dim = cloud.dim();
    if (grads.size() != n || grads.dim != dim) {
        throw ValidationError("accumulate_monitors: gradient shape does not match the cloud");
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto ge = grads.encoding_of(i);
        if (mode == MonitorMode::norm_sum) {
            double sq = 0.0;
            for (double v : ge) {
                sq += v * v;
            }
            cloud.id_grad_accum[i] += std::sqrt(sq);
        } else {
            double* acc = cloud.id_grad_vector.data() + i * dim;
            double sq = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                acc[d] += ge[d];
                sq += acc[d] * acc[d];
            }
            cloud.id_grad_accum[i] = std::sqrt(sq);
        }
        if (grads.visible[i]) {
            ++cloud.visible_count[i];
        }
        cloud.pos_grad_ema[i] = 0.9 * cloud.pos_grad_ema[i] + 0.1 * grads.position[i];
    }
}

}  // namespace gradiseg
