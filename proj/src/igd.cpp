#include "gradiseg/igd.hpp"

#include "gradiseg/error.hpp"

#include <algorithm>
#include <cmath>

namespace gradiseg {

void IgdConfig::validate() const {
    if (!(tau_percentile > 0.0 && tau_percentile < 100.0)) {
        throw ValidationError("igd tau_percentile must lie in (0, 100)");
    }
    if (!(opacity_eps > 0.0) || !(too_large_frac > 0.0) || !(split_scale_div > 0.0) ||
        !(split_offset_frac > 0.0) || interval <= 0) {
        throw ValidationError("igd parameters must be positive");
    }
}

double percentile(std::vector<double> values, double pct) {
    if (values.empty()) {
        return 0.0;
    }
    std::sort(values.begin(), values.end());
    const double rank = pct / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

int major_axis(const Vec3& scale) {
    int best = 0;
    for (int k = 1; k < 3; ++k) {
        if (scale[k] > scale[best]) {
            best = k;
        }
    }
    return best;
}

std::pair<Gaussian, Gaussian> split_gaussian(const Gaussian& g, const IgdConfig& cfg,
                                             const Vec3& pos_grad_ema) {
    Gaussian a = g;
    Gaussian b = g;
    a.scale = g.scale / cfg.split_scale_div;
    b.scale = a.scale;
    const int axis = major_axis(g.scale);
    const double s_max = g.scale[axis];
    if (!(s_max >= 1e-9)) {
        return {a, b};
    }
    Vec3 dir = quat_to_rotation(g.rotation).col(axis);
    if (cfg.split_direction == SplitDirection::position_gradient) {
        const double len = pos_grad_ema.norm();
        if (len >= 1e-12) {
            dir = -pos_grad_ema / len;
        }
    }
    const Vec3 offset = cfg.split_offset_frac * s_max * dir;
    a.position = g.position + offset;
    b.position = g.position - offset;
    return {a, b};
}

IgdResult igd_step(const GaussianCloud& cloud, const IgdConfig& cfg, double extent) {
    cfg.validate();
    const std::size_t n = cloud.size();
    const double size_limit = cfg.too_large_frac * extent;

    std::vector<std::size_t> survivors;
    survivors.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (cloud.opacities[i] < cfg.opacity_eps || cloud.scales[i].maxCoeff() > size_limit) {
            continue;
        }
        survivors.push_back(i);
    }

    std::vector<double> monitors;
    for (const std::size_t i : survivors) {
        if (cloud.visible_count[i] > 0) {
            monitors.push_back(cloud.id_grad_accum[i] / static_cast<double>(cloud.visible_count[i]));
        }
    }

    IgdResult result;
    result.pruned = n - survivors.size();
    result.threshold = percentile(monitors, cfg.tau_percentile);

    std::vector<Gaussian> fresh;
    std::vector<std::int64_t> kept;
    for (const std::size_t i : survivors) {
        const double mean = cloud.id_grad_accum[i] /
                            static_cast<double>(std::max<std::int64_t>(1, cloud.visible_count[i]));
        if (!monitors.empty() && mean > result.threshold) {
            auto [a, b] = split_gaussian(cloud.gaussian(i), cfg, cloud.pos_grad_ema[i]);
            fresh.push_back(std::move(a));
            fresh.push_back(std::move(b));
            ++result.split;
        } else {
            kept.push_back(static_cast<std::int64_t>(i));
        }
    }
    result.remap.source = kept;
    result.remap.source.insert(result.remap.source.end(), fresh.size(), -1);
    result.cloud = cloud.rebuild(result.remap, fresh);

    // Children keep the parent's group id.
    std::size_t child = kept.size();
    for (const std::size_t i : survivors) {
        const double mean = cloud.id_grad_accum[i] /
                            static_cast<double>(std::max<std::int64_t>(1, cloud.visible_count[i]));
        if (!monitors.empty() && mean > result.threshold) {
            for (int c = 0; c < 2; ++c, ++child) {
                result.cloud.group_id[child] = cloud.group_id[i];
            }
        }
    }
    result.cloud.reset_monitors();
    return result;
}

}  // namespace gradiseg
