#include "gradiseg/render.hpp"

#include "gradiseg/error.hpp"
#include "gradiseg/parallel.hpp"
#include "gradiseg/raster_detail.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gradiseg {

double pixel_alpha(const Splat2D& splat, double opacity, const Vec2& pixel) {
    const detail::Conic conic = detail::conic_of(splat.cov2d);
    const Vec2 d = pixel - splat.mean2d;
    const double power = conic.power(d.x(), d.y());
    return std::min(kAlphaMax, opacity * std::exp(power));
}

namespace detail {

Conic conic_of(const Mat2& cov) {
    const double x = cov(0, 0);
    const double y = 0.5 * (cov(0, 1) + cov(1, 0));
    const double z = cov(1, 1);
    const double det = x * z - y * y;
    if (!(det > 0.0) || !(x > 0.0)) {
        throw ValidationError("singular or indefinite 2D covariance");
    }
    return {z / det, -y / det, x / det};
}

RasterSetup prepare(const GaussianCloud& cloud, const CameraView& cam) {
    RasterSetup setup;
    const std::size_t n = cloud.size();
    setup.projections.resize(n);
    parallel_for(n, [&](std::size_t i) { setup.projections[i] = project_row(cloud, i, cam); });

    const int width = cam.width();
    const int height = cam.height();
    std::vector<Splat2D> splats;
    std::vector<RasterSplat> candidates;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& pg = setup.projections[i];
        const double o = cloud.opacities[i];
        if (!pg || !(o >= kAlphaMin)) {
            continue;
        }
        RasterSplat rs;
        rs.source = static_cast<std::int32_t>(i);
        rs.mean = pg->splat.mean2d;
        rs.conic = conic_of(pg->splat.cov2d);
        rs.opacity = o;
        // Pixels with o * G >= 1/255 satisfy |d|^2 <= 2 ln(255 o) lambda_max.
        const Mat2& cov = pg->splat.cov2d;
        const double half_trace = 0.5 * (cov(0, 0) + cov(1, 1));
        const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(0, 1);
        const double lambda_max =
            half_trace + std::sqrt(std::max(0.0, half_trace * half_trace - det));
        const double reach = std::sqrt(2.0 * std::log(255.0 * o) * lambda_max) * (1.0 + 1e-9) + 1e-9;
        rs.x0 = std::max(0, static_cast<int>(std::ceil(rs.mean.x() - reach)));
        rs.x1 = std::min(width - 1, static_cast<int>(std::floor(rs.mean.x() + reach)));
        rs.y0 = std::max(0, static_cast<int>(std::ceil(rs.mean.y() - reach)));
        rs.y1 = std::min(height - 1, static_cast<int>(std::floor(rs.mean.y() + reach)));
        if (rs.x0 > rs.x1 || rs.y0 > rs.y1) {
            continue;
        }
        candidates.push_back(rs);
        splats.push_back(pg->splat);
    }
    const std::vector<std::size_t> order = depth_sort(splats);
    setup.splats.reserve(order.size());
    for (const std::size_t k : order) {
        setup.splats.push_back(candidates[k]);
    }

    setup.tiles_x = (width + kTileSize - 1) / kTileSize;
    setup.tiles_y = (height + kTileSize - 1) / kTileSize;
    setup.tile_lists.assign(static_cast<std::size_t>(setup.tiles_x) * setup.tiles_y, {});
    for (std::size_t s = 0; s < setup.splats.size(); ++s) {
        const RasterSplat& rs = setup.splats[s];
        for (int ty = rs.y0 / kTileSize; ty <= rs.y1 / kTileSize; ++ty) {
            for (int tx = rs.x0 / kTileSize; tx <= rs.x1 / kTileSize; ++tx) {
                setup.tile_lists[static_cast<std::size_t>(ty) * setup.tiles_x + tx].push_back(
                    static_cast<std::uint32_t>(s));
            }
        }
    }
    return setup;
}

}  // namespace detail

RenderOutput render(const GaussianCloud& cloud, const CameraView& cam, const Vec3& background) {
    const int width = cam.width();
    const int height = cam.height();
    const std::size_t dim = cloud.dim();
    const std::size_t pixels = static_cast<std::size_t>(width) * height;

    detail::RasterSetup setup = detail::prepare(cloud, cam);

    RenderOutput out;
    out.width = width;
    out.height = height;
    out.dim = dim;
    out.color = Image(width, height);
    out.identity.assign(pixels * dim, 0.0);
    out.final_transmittance.assign(pixels, 1.0);
    out.fragment_begin.assign(pixels, 0);
    out.fragment_end.assign(pixels, 0);

    const std::size_t tile_count = setup.tile_lists.size();
    std::vector<std::vector<Fragment>> tile_fragments(tile_count);

    parallel_for(tile_count, [&](std::size_t t) {
        const int tx = static_cast<int>(t % setup.tiles_x);
        const int ty = static_cast<int>(t / setup.tiles_x);
        const int px0 = tx * kTileSize;
        const int py0 = ty * kTileSize;
        const int px1 = std::min(width, px0 + kTileSize);
        const int py1 = std::min(height, py0 + kTileSize);
        const int tw = px1 - px0;
        const int local_count = tw * (py1 - py0);

        // Splats are visited in depth order, so every pixel sees its
        // fragments front to back; a stable counting sort then groups them
        // per pixel.
        double transmittance[kTileSize * kTileSize];
        double color[kTileSize * kTileSize][3] = {};
        std::uint32_t counts[kTileSize * kTileSize] = {};
        std::fill_n(transmittance, local_count, 1.0);
        std::vector<std::pair<std::uint16_t, Fragment>> raw;
        raw.reserve(setup.tile_lists[t].size() * 8);

        for (const std::uint32_t s : setup.tile_lists[t]) {
            const detail::RasterSplat& rs = setup.splats[s];
            const int xa = std::max(rs.x0, px0);
            const int xb = std::min(rs.x1, px1 - 1);
            const int ya = std::max(rs.y0, py0);
            const int yb = std::min(rs.y1, py1 - 1);
            const Vec3& rgb = cloud.colors[static_cast<std::size_t>(rs.source)];
            const double* e = cloud.encodings.data() + static_cast<std::size_t>(rs.source) * dim;
            for (int py = ya; py <= yb; ++py) {
                const double dy = py - rs.mean.y();
                for (int px = xa; px <= xb; ++px) {
                    const double power = rs.conic.power(px - rs.mean.x(), dy);
                    double alpha = rs.opacity * std::exp(power);
                    if (alpha < kAlphaMin) {
                        continue;
                    }
                    const bool clamped = alpha > kAlphaMax;
                    if (clamped) {
                        alpha = kAlphaMax;
                    }
                    const int local = (py - py0) * tw + (px - px0);
                    const double tr = transmittance[local];
                    raw.push_back({static_cast<std::uint16_t>(local), {rs.source, clamped, alpha, tr}});
                    ++counts[local];
                    const double w = alpha * tr;
                    for (int c = 0; c < 3; ++c) {
                        color[local][c] += w * rgb[c];
                    }
                    double* ident = out.identity.data() +
                                    (static_cast<std::size_t>(py) * width + px) * dim;
                    for (std::size_t d = 0; d < dim; ++d) {
                        ident[d] += w * e[d];
                    }
                    transmittance[local] = tr * (1.0 - alpha);
                }
            }
        }

        std::uint32_t offsets[kTileSize * kTileSize];
        std::uint32_t running = 0;
        for (int l = 0; l < local_count; ++l) {
            offsets[l] = running;
            const int py = py0 + l / tw;
            const int px = px0 + l % tw;
            const std::size_t p = static_cast<std::size_t>(py) * width + px;
            out.fragment_begin[p] = running;
            running += counts[l];
            out.fragment_end[p] = running;
            out.final_transmittance[p] = transmittance[l];
            for (int c = 0; c < 3; ++c) {
                out.color.at(px, py, c) = color[l][c] + transmittance[l] * background[c];
            }
        }
        auto& frags = tile_fragments[t];
        frags.resize(raw.size());
        for (const auto& [local, f] : raw) {
            frags[offsets[local]++] = f;
        }
    });

    std::size_t total = 0;
    std::vector<std::size_t> base(tile_count);
    for (std::size_t t = 0; t < tile_count; ++t) {
        base[t] = total;
        total += tile_fragments[t].size();
    }
    out.fragments.resize(total);
    for (std::size_t t = 0; t < tile_count; ++t) {
        std::copy(tile_fragments[t].begin(), tile_fragments[t].end(), out.fragments.begin() + base[t]);
        const int tx = static_cast<int>(t % setup.tiles_x);
        const int ty = static_cast<int>(t / setup.tiles_x);
        for (int py = ty * kTileSize; py < std::min(height, (ty + 1) * kTileSize); ++py) {
            for (int px = tx * kTileSize; px < std::min(width, (tx + 1) * kTileSize); ++px) {
                const std::size_t p = static_cast<std::size_t>(py) * width + px;
                out.fragment_begin[p] += static_cast<std::uint32_t>(base[t]);
                out.fragment_end[p] += static_cast<std::uint32_t>(base[t]);
            }
        }
    }
    out.projections = std::move(setup.projections);
    return out;
}

std::vector<double> render_group_weights(const GaussianCloud& cloud, const CameraView& cam,
                                         std::size_t num_groups) {
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const std::int32_t g = cloud.group_id[i];
        if (g < 0) {
            throw ValidationError("render_group_weights: gaussian " + std::to_string(i) +
                                  " has no group assigned");
        }
        if (static_cast<std::size_t>(g) >= num_groups) {
            throw ValidationError("render_group_weights: group id " + std::to_string(g) +
                                  " exceeds the group count");
        }
    }
    const RenderOutput out = render(cloud, cam);
    std::vector<double> weights(out.pixels() * num_groups, 0.0);
    for (std::size_t p = 0; p < out.pixels(); ++p) {
        double* w = weights.data() + p * num_groups;
        for (const Fragment& f : out.pixel_fragments(p)) {
            w[cloud.group_id[static_cast<std::size_t>(f.source_index)]] += f.alpha * f.transmittance_before;
        }
    }
    return weights;
}

Mask group_weight_mask(const std::vector<double>& weights, int width, int height,
                       std::size_t num_groups) {
    Mask mask(width, height);
    if (weights.size() != mask.pixels() * num_groups) {
        throw ValidationError("group weight buffer does not match the mask size");
    }
    for (std::size_t p = 0; p < mask.pixels(); ++p) {
        const double* w = weights.data() + p * num_groups;
        double background = 1.0;
        for (std::size_t g = 1; g < num_groups; ++g) {
            background -= w[g];
        }
        std::size_t best = 0;
        double best_score = background;
        for (std::size_t g = 1; g < num_groups; ++g) {
            if (w[g] > best_score) {
                best = g;
                best_score = w[g];
            }
        }
        mask.data[p] = static_cast<std::uint8_t>(best);
    }
    return mask;
}

}  // namespace gradiseg
