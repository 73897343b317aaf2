#pragma once

#include "gradiseg/scene.hpp"
#include "gradiseg/semantic_head.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace gradiseg {

enum class NeighborMode { global, local_adaptive };

/// Positions split by coordinate for the vectorized scans.
struct PointSet {
    std::vector<double> x, y, z;

    PointSet() = default;
    explicit PointSet(const GaussianCloud& cloud);
    std::size_t size() const { return x.size(); }
};

/// -pos_grad_ema_i normalized; nullopt when its norm is below 1e-12.
std::optional<Vec3> neighbor_direction(const GaussianCloud& cloud, std::size_t i);

/// The K points with the smallest strictly positive projection distance
/// (p_j - p_i) . u, ascending distance, ties by index.
std::vector<std::size_t> local_adaptive_neighbors(const PointSet& points, std::size_t i,
                                                  const Vec3& u, std::size_t k);

/// The K Euclidean nearest points other than i, ties by index.
std::vector<std::size_t> global_neighbors(const PointSet& points, std::size_t i, std::size_t k);

struct Loss3dOptions {
    std::size_t samples = 1000;  // M
    std::size_t k = 5;
    NeighborMode mode = NeighborMode::global;
    std::uint64_t seed = 0;
    bool head_gradient = false;
};

struct Loss3d {
    double value = 0.0;
    std::size_t pairs = 0;
    std::vector<double> grad_encodings;  // N x dim, zero for uninvolved rows
    HeadGrads grad_head;                 // zero unless head_gradient is set
    std::vector<std::size_t> targets;
};

/// M targets drawn uniformly without replacement from `seed`.
std::vector<std::size_t> sample_targets(std::size_t n, std::size_t m, std::uint64_t seed);

/// Mean KL(F(e_i) || F(e_j)) over sampled targets i and their neighbors j.
/// Probabilities are clamped to >= 1e-12 before the log. In local-adaptive
/// mode a target without a usable direction falls back to global neighbors.
Loss3d loss_3d(const GaussianCloud& cloud, const ClassifierHead& head, const Loss3dOptions& opts);

}  // namespace gradiseg
