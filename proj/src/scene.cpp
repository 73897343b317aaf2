#include "gradiseg/scene.hpp"

#include "gradiseg/error.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gradiseg {

RowRemap RowRemap::identity(std::size_t n) {
    RowRemap r;
    r.source.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        r.source[i] = static_cast<std::int64_t>(i);
    }
    return r;
}

void GaussianCloud::push_back(const Gaussian& g) {
    if (g.encoding.size() != dim_) {
        throw ValidationError("encoding has " + std::to_string(g.encoding.size()) +
                              " entries, cloud dimension is " + std::to_string(dim_));
    }
    positions.push_back(g.position);
    scales.push_back(g.scale);
    rotations.push_back(g.rotation);
    opacities.push_back(g.opacity);
    colors.push_back(g.color);
    encodings.insert(encodings.end(), g.encoding.begin(), g.encoding.end());
    id_grad_accum.push_back(0.0);
    id_grad_vector.insert(id_grad_vector.end(), dim_, 0.0);
    pos_grad_ema.push_back(Vec3::Zero());
    visible_count.push_back(0);
    group_id.push_back(-1);
}

Gaussian GaussianCloud::gaussian(std::size_t i) const {
    Gaussian g;
    g.position = positions[i];
    g.scale = scales[i];
    g.rotation = rotations[i];
    g.opacity = opacities[i];
    g.color = colors[i];
    const auto e = encoding(i);
    g.encoding.assign(e.begin(), e.end());
    return g;
}

void GaussianCloud::append_row(const GaussianCloud& src, std::size_t i) {
    positions.push_back(src.positions[i]);
    scales.push_back(src.scales[i]);
    rotations.push_back(src.rotations[i]);
    opacities.push_back(src.opacities[i]);
    colors.push_back(src.colors[i]);
    encodings.insert(encodings.end(), src.encodings.begin() + i * dim_,
                     src.encodings.begin() + (i + 1) * dim_);
    id_grad_accum.push_back(src.id_grad_accum[i]);
    id_grad_vector.insert(id_grad_vector.end(), src.id_grad_vector.begin() + i * dim_,
                          src.id_grad_vector.begin() + (i + 1) * dim_);
    pos_grad_ema.push_back(src.pos_grad_ema[i]);
    visible_count.push_back(src.visible_count[i]);
    group_id.push_back(src.group_id[i]);
}

GaussianCloud GaussianCloud::select(std::span<const std::int64_t> rows) const {
    GaussianCloud out(dim_);
    for (const std::int64_t r : rows) {
        out.append_row(*this, static_cast<std::size_t>(r));
    }
    return out;
}

GaussianCloud GaussianCloud::rebuild(const RowRemap& remap, std::span<const Gaussian> fresh) const {
    GaussianCloud out(dim_);
    std::size_t next_fresh = 0;
    for (const std::int64_t src : remap.source) {
        if (src >= 0) {
            out.append_row(*this, static_cast<std::size_t>(src));
        } else {
            if (next_fresh >= fresh.size()) {
                throw Error("row remap asks for more fresh Gaussians than provided");
            }
            out.push_back(fresh[next_fresh++]);
        }
    }
    return out;
}

namespace {

[[noreturn]] void invalid(std::size_t i, const std::string& what) {
    std::ostringstream os;
    os << what << " (gaussian " << i << ")";
    throw ValidationError(os.str());
}

bool finite(const auto& v) { return v.allFinite(); }

}  // namespace

void GaussianCloud::validate() const {
    const std::size_t n = size();
    if (scales.size() != n || rotations.size() != n || opacities.size() != n ||
        colors.size() != n || encodings.size() != n * dim_ || id_grad_accum.size() != n ||
        id_grad_vector.size() != n * dim_ || pos_grad_ema.size() != n ||
        visible_count.size() != n || group_id.size() != n) {
        throw ValidationError("cloud arrays are not length-synchronized");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!finite(positions[i])) invalid(i, "position not finite");
        if (!finite(scales[i]) || (scales[i].array() <= 0.0).any()) {
            invalid(i, "scale must be strictly positive");
        }
        if (!finite(rotations[i]) || std::abs(rotations[i].norm() - 1.0) > 1e-6) {
            invalid(i, "rotation is not a unit quaternion");
        }
        if (!(opacities[i] >= 0.0 && opacities[i] <= 1.0)) invalid(i, "opacity out of range");
        if (!finite(colors[i]) || (colors[i].array() < 0.0).any() || (colors[i].array() > 1.0).any()) {
            invalid(i, "color out of range");
        }
        for (double e : encoding(i)) {
            if (!std::isfinite(e)) invalid(i, "identity encoding not finite");
        }
        if (!(id_grad_accum[i] >= 0.0)) invalid(i, "negative identity-gradient monitor");
        if (visible_count[i] < 0) invalid(i, "negative visible count");
    }
}

void GaussianCloud::reset_monitors() {
    std::fill(id_grad_accum.begin(), id_grad_accum.end(), 0.0);
    std::fill(pos_grad_ema.begin(), pos_grad_ema.end(), Vec3::Zero());
    std::fill(id_grad_vector.begin(), id_grad_vector.end(), 0.0);
    std::fill(visible_count.begin(), visible_count.end(), 0);
}

std::array<std::uint8_t, 3> GroupTable::palette(std::int32_t gid) {
    if (gid <= 0) {
        return {0, 0, 0};
    }
    // Golden-angle hue walk, full saturation.
    const double hue = std::fmod(gid * 137.50776405, 360.0) / 60.0;
    const double x = 1.0 - std::abs(std::fmod(hue, 2.0) - 1.0);
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hue)) {
        case 0: r = 1; g = x; break;
        case 1: r = x; g = 1; break;
        case 2: g = 1; b = x; break;
        case 3: g = x; b = 1; break;
        case 4: r = x; b = 1; break;
        default: r = 1; b = x; break;
    }
    auto q = [](double v) { return static_cast<std::uint8_t>(std::lround(v * 255.0)); };
    return {q(r), q(g), q(b)};
}

std::array<std::uint8_t, 3> GroupTable::color_of(std::int32_t gid) const {
    if (auto it = colors.find(gid); it != colors.end()) {
        return it->second;
    }
    return palette(gid);
}

double scene_extent(const Vec3& lo, const Vec3& hi) { return 0.5 * (hi - lo).norm(); }

GaussianCloud assign_groups(const GaussianCloud& cloud, const ClassifierHead& head,
                            double min_confidence) {
    GaussianCloud out = cloud;
    if (cloud.empty()) {
        return out;
    }
    const std::vector<double> logits = head_logits(cloud.encodings, head);
    const std::size_t c_count = head.classes;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const double* z = logits.data() + i * c_count;
        std::size_t best = 0;
        for (std::size_t c = 1; c < c_count; ++c) {
            if (z[c] > z[best]) {
                best = c;
            }
        }
        std::int32_t gid = static_cast<std::int32_t>(best);
        if (min_confidence > 0.0) {
            double denom = 0.0;
            for (std::size_t c = 0; c < c_count; ++c) {
                denom += std::exp(z[c] - z[best]);
            }
            if (1.0 / denom < min_confidence) {
                gid = -1;
            }
        }
        out.group_id[i] = gid;
    }
    return out;
}

namespace {

std::vector<std::int64_t> rows_where(const GaussianCloud& cloud, auto&& keep) {
    std::vector<std::int64_t> rows;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (keep(cloud.group_id[i])) {
            rows.push_back(static_cast<std::int64_t>(i));
        }
    }
    return rows;
}

bool has_group(const GaussianCloud& cloud, std::int32_t gid) {
    return std::find(cloud.group_id.begin(), cloud.group_id.end(), gid) != cloud.group_id.end();
}

}  // namespace

GaussianCloud remove_group(const GaussianCloud& cloud, std::int32_t gid) {
    if (!has_group(cloud, gid)) {
        spdlog::warn("remove_group: group {} not present, scene unchanged", gid);
        return cloud;
    }
    return cloud.select(rows_where(cloud, [gid](std::int32_t g) { return g != gid; }));
}

GaussianCloud extract_group(const GaussianCloud& cloud, std::int32_t gid) {
    if (!has_group(cloud, gid)) {
        spdlog::warn("extract_group: group {} not present, result is empty", gid);
    }
    return cloud.select(rows_where(cloud, [gid](std::int32_t g) { return g == gid; }));
}

GaussianCloud recolor_group(const GaussianCloud& cloud, std::int32_t gid, const Vec3& rgb) {
    if ((rgb.array() < 0.0).any() || (rgb.array() > 1.0).any()) {
        throw ValidationError("recolor: rgb components must lie in [0,1]");
    }
    if (!has_group(cloud, gid)) {
        spdlog::warn("recolor_group: group {} not present, scene unchanged", gid);
        return cloud;
    }
    GaussianCloud out = cloud;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out.group_id[i] == gid) {
            out.colors[i] = rgb;
        }
    }
    return out;
}

}  // namespace gradiseg
