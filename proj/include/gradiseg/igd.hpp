#pragma once

#include "gradiseg/scene.hpp"

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace gradiseg {

enum class SplitDirection { principal_axis, position_gradient };

struct IgdConfig {
    double tau_percentile = 99.0;
    double opacity_eps = 0.005;
    double too_large_frac = 0.1;
    double split_scale_div = 1.6;
    double split_offset_frac = 0.5;
    int interval = 100;
    SplitDirection split_direction = SplitDirection::principal_axis;

    void validate() const;
};

/// Linear-interpolation percentile (rank p/100 * (n-1) in the sorted values).
double percentile(std::vector<double> values, double pct);

/// Index of the largest scale component; the lowest index wins ties.
int major_axis(const Vec3& scale);

/// Two children straddling the parent along its major axis (or along the
/// negated position-gradient EMA), scales divided by split_scale_div, all
/// other attributes copied.
std::pair<Gaussian, Gaussian> split_gaussian(const Gaussian& g, const IgdConfig& cfg,
                                             const Vec3& pos_grad_ema = Vec3::Zero());

struct IgdResult {
    GaussianCloud cloud;
    RowRemap remap;
    std::size_t pruned = 0;
    std::size_t split = 0;
    double threshold = 0.0;
};

/// One densification pass driven by identity-gradient monitors: prune
/// transparent or oversized Gaussians, split those whose mean monitor is
/// above the tau percentile, zero all identity monitors.
IgdResult igd_step(const GaussianCloud& cloud, const IgdConfig& cfg, double extent);

}  // namespace gradiseg
