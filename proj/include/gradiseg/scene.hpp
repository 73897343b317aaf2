#pragma once

#include "gradiseg/math.hpp"
#include "gradiseg/semantic_head.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace gradiseg {

/// One anisotropic Gaussian. Scales are raw world units, rotation is a unit
/// quaternion (w, x, y, z), color is degree-0 RGB.
struct Gaussian {
    Vec3 position = Vec3::Zero();
    Vec3 scale = Vec3::Ones();
    Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0);
    double opacity = 1.0;
    Vec3 color = Vec3::Constant(0.5);
    std::vector<double> encoding;
};

/// For each row of an edited cloud, the row of the previous cloud it came
/// from, or -1 for a freshly created row. Optimizer state follows this map.
struct RowRemap {
    std::vector<std::int64_t> source;

    static RowRemap identity(std::size_t n);
};

/// Structure-of-arrays scene storage plus the per-Gaussian monitors used by
/// densification and neighbor selection. Every array has `size()` rows.
class GaussianCloud {
public:
    GaussianCloud() = default;
    explicit GaussianCloud(std::size_t encoding_dim) : dim_(encoding_dim) {}

    std::size_t size() const { return positions.size(); }
    std::size_t dim() const { return dim_; }
    bool empty() const { return positions.empty(); }

    /// Appends with zeroed monitors and group_id = -1.
    void push_back(const Gaussian& g);
    Gaussian gaussian(std::size_t i) const;

    std::span<double> encoding(std::size_t i) { return {encodings.data() + i * dim_, dim_}; }
    std::span<const double> encoding(std::size_t i) const {
        return {encodings.data() + i * dim_, dim_};
    }

    /// Copies row i of src, monitors and group id included.
    void append_row(const GaussianCloud& src, std::size_t i);

    /// New cloud made of the listed rows (all fields, monitors included).
    GaussianCloud select(std::span<const std::int64_t> rows) const;

    /// Rows in `remap` with source -1 are taken from `fresh` in order.
    GaussianCloud rebuild(const RowRemap& remap, std::span<const Gaussian> fresh) const;

    /// Throws ValidationError naming the first broken invariant.
    void validate() const;

    /// Zeroes id_grad_accum, id_grad_vector, pos_grad_ema and visible_count.
    void reset_monitors();

    std::vector<Vec3> positions;
    std::vector<Vec3> scales;
    std::vector<Vec4> rotations;
    std::vector<double> opacities;
    std::vector<Vec3> colors;
    std::vector<double> encodings;  // size() x dim()

    std::vector<double> id_grad_accum;
    std::vector<double> id_grad_vector;  // size() x dim(), vector-sum monitor mode
    std::vector<Vec3> pos_grad_ema;
    std::vector<std::int64_t> visible_count;
    std::vector<std::int32_t> group_id;

private:
    std::size_t dim_ = kDefaultEncodingDim;
};

/// Display metadata for groups. Id 0 is background.
struct GroupTable {
    std::size_t num_classes = kDefaultClasses;
    std::map<std::int32_t, std::array<std::uint8_t, 3>> colors;
    std::map<std::int32_t, std::string> labels;

    /// Deterministic palette color for a group id.
    static std::array<std::uint8_t, 3> palette(std::int32_t gid);
    std::array<std::uint8_t, 3> color_of(std::int32_t gid) const;
};

/// Bounding-sphere radius of the axis-aligned box [lo, hi].
double scene_extent(const Vec3& lo, const Vec3& hi);

/// group_id = argmax of the head logits on each encoding (lowest index wins
/// ties). Gaussians whose top softmax probability is below min_confidence
/// stay unassigned (-1).
GaussianCloud assign_groups(const GaussianCloud& cloud, const ClassifierHead& head,
                            double min_confidence = 0.0);

/// Drops every Gaussian of group gid. Absent gid: unchanged copy + warning.
GaussianCloud remove_group(const GaussianCloud& cloud, std::int32_t gid);
/// Keeps only Gaussians of group gid.
GaussianCloud extract_group(const GaussianCloud& cloud, std::int32_t gid);
GaussianCloud recolor_group(const GaussianCloud& cloud, std::int32_t gid, const Vec3& rgb);

}  // namespace gradiseg
