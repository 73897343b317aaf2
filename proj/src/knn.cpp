#include "gradiseg/knn.hpp"

#include "gradiseg/parallel.hpp"
#include "gradiseg/simd.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <utility>

namespace gradiseg {

namespace {

constexpr double kProbFloor = 1e-12;

/// Keeps the k lexicographically smallest (key, index) pairs seen so far.
class TopK {
public:
    explicit TopK(std::size_t k) : k_(k) { best_.reserve(k + 1); }

    void offer(double key, std::size_t index) {
        if (best_.size() == k_) {
            const auto& worst = best_.back();
            if (key > worst.first || (key == worst.first && index > worst.second)) {
                return;
            }
        }
        auto it = std::upper_bound(best_.begin(), best_.end(), std::make_pair(key, index));
        best_.insert(it, {key, index});
        if (best_.size() > k_) {
            best_.pop_back();
        }
    }

    /// Keys at or above this can no longer enter once later indices are offered.
    double bound() const {
        if (k_ == 0) {
            return -std::numeric_limits<double>::infinity();
        }
        return best_.size() == k_ ? best_.back().first : std::numeric_limits<double>::infinity();
    }

    std::vector<std::size_t> indices() const {
        std::vector<std::size_t> out;
        out.reserve(best_.size());
        for (const auto& [key, index] : best_) {
            out.push_back(index);
        }
        return out;
    }

private:
    std::size_t k_;
    std::vector<std::pair<double, std::size_t>> best_;
};

std::vector<std::size_t> local_adaptive_impl(const PointSet& points, std::size_t i, const Vec3& u,
                                             std::size_t k, std::vector<double>& scratch) {
    const std::size_t n = points.size();
    scratch.resize(n);
    const double origin[3] = {points.x[i], points.y[i], points.z[i]};
    const double dir[3] = {u.x(), u.y(), u.z()};
    simd::kernels().projection_distances(points.x.data(), points.y.data(), points.z.data(), n,
                                         origin, dir, scratch.data());
    TopK top(k);
    double bound = top.bound();
    for (std::size_t j = 0; j < n; ++j) {
        const double d = scratch[j];
        if (d >= bound || !(d > 0.0) || j == i) {
            continue;
        }
        top.offer(d, j);
        bound = top.bound();
    }
    return top.indices();
}

std::vector<std::size_t> global_impl(const PointSet& points, std::size_t i, std::size_t k,
                                     std::vector<double>& scratch) {
    const std::size_t n = points.size();
    scratch.resize(n);
    const double origin[3] = {points.x[i], points.y[i], points.z[i]};
    simd::kernels().squared_distances(points.x.data(), points.y.data(), points.z.data(), n, origin,
                                      scratch.data());
    TopK top(k);
    double bound = top.bound();
    for (std::size_t j = 0; j < n; ++j) {
        const double d = scratch[j];
        if (d >= bound || j == i) {
            continue;
        }
        top.offer(d, j);
        bound = top.bound();
    }
    return top.indices();
}

}  // namespace

PointSet::PointSet(const GaussianCloud& cloud) {
    const std::size_t n = cloud.size();
    x.resize(n);
    y.resize(n);
    z.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = cloud.positions[i].x();
        y[i] = cloud.positions[i].y();
        z[i] = cloud.positions[i].z();
    }
}

std::optional<Vec3> neighbor_direction(const GaussianCloud& cloud, std::size_t i) {
    const Vec3& g = cloud.pos_grad_ema[i];
    const double len = g.norm();
    if (!(len >= 1e-12)) {
        return std::nullopt;
    }
    return Vec3(-g / len);
}

std::vector<std::size_t> local_adaptive_neighbors(const PointSet& points, std::size_t i,
                                                  const Vec3& u, std::size_t k) {
    std::vector<double> scratch;
    return local_adaptive_impl(points, i, u, k, scratch);
}

std::vector<std::size_t> global_neighbors(const PointSet& points, std::size_t i, std::size_t k) {
    std::vector<double> scratch;
    return global_impl(points, i, k, scratch);
}

std::vector<std::size_t> sample_targets(std::size_t n, std::size_t m, std::uint64_t seed) {
    m = std::min(m, n);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    for (std::size_t k = 0; k < m; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, n - 1);
        std::swap(idx[k], idx[pick(rng)]);
    }
    idx.resize(m);
    return idx;
}

Loss3d loss_3d(const GaussianCloud& cloud, const ClassifierHead& head, const Loss3dOptions& opts) {
    const std::size_t n = cloud.size();
    const std::size_t dim = cloud.dim();
    const std::size_t classes = head.classes;

    Loss3d result;
    result.grad_encodings.assign(n * dim, 0.0);
    result.grad_head = HeadGrads(head);
    if (n == 0 || opts.k == 0) {
        return result;
    }
    if (opts.samples > n) {
        spdlog::warn("loss_3d: {} samples requested from {} gaussians, clamping", opts.samples, n);
    }
    result.targets = sample_targets(n, opts.samples, opts.seed);
    const std::size_t m = result.targets.size();

    const PointSet points(cloud);
    std::vector<std::vector<std::size_t>> neighbors(m);
    constexpr std::size_t kBlock = 64;
    const std::size_t blocks = (m + kBlock - 1) / kBlock;
    parallel_for(blocks, [&](std::size_t b) {
        std::vector<double> scratch;
        for (std::size_t t = b * kBlock; t < std::min(m, (b + 1) * kBlock); ++t) {
            const std::size_t i = result.targets[t];
            std::optional<Vec3> u;
            if (opts.mode == NeighborMode::local_adaptive) {
                u = neighbor_direction(cloud, i);
            }
            neighbors[t] = u ? local_adaptive_impl(points, i, *u, opts.k, scratch)
                             : global_impl(points, i, opts.k, scratch);
        }
    });

    // Class distributions of every involved Gaussian, computed once.
    std::vector<std::int64_t> row_of(n, -1);
    std::vector<std::size_t> involved;
    auto involve = [&](std::size_t i) {
        if (row_of[i] < 0) {
            row_of[i] = static_cast<std::int64_t>(involved.size());
            involved.push_back(i);
        }
    };
    for (std::size_t t = 0; t < m; ++t) {
        involve(result.targets[t]);
        for (const std::size_t j : neighbors[t]) {
            involve(j);
        }
    }
    const std::size_t rows = involved.size();
    std::vector<double> feats(rows * dim);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(cloud.encodings.data() + involved[r] * dim, dim, feats.data() + r * dim);
    }
    std::vector<double> probs(rows * classes);
    std::vector<double> lse(rows);
    const auto& kern = simd::kernels();
    kern.affine_rows(feats.data(), rows, dim, head.weights.data(), head.biases.data(), classes,
                     probs.data());
    std::vector<double> logs = probs;
    kern.softmax_rows(probs.data(), rows, classes, lse.data());
    // log p = z - lse without a log call per entry; the floor applies below 1e-12.
    const double log_floor = std::log(kProbFloor);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < classes; ++c) {
            const std::size_t k = r * classes + c;
            logs[k] = probs[k] > kProbFloor ? logs[k] - lse[r] : log_floor;
        }
    }

    std::size_t pairs = 0;
    for (const auto& nb : neighbors) {
        pairs += nb.size();
    }
    result.pairs = pairs;
    if (pairs == 0) {
        return result;
    }
    const double scale = 1.0 / static_cast<double>(pairs);

    // Gradient with respect to each involved row's probabilities.
    std::vector<double> g_prob(rows * classes, 0.0);
    double total = 0.0;
    for (std::size_t t = 0; t < m; ++t) {
        const auto ri = static_cast<std::size_t>(row_of[result.targets[t]]);
        const double* p = probs.data() + ri * classes;
        const double* lp = logs.data() + ri * classes;
        double* gp = g_prob.data() + ri * classes;
        for (const std::size_t j : neighbors[t]) {
            const auto rj = static_cast<std::size_t>(row_of[j]);
            const double* q = probs.data() + rj * classes;
            const double* lq = logs.data() + rj * classes;
            double* gq = g_prob.data() + rj * classes;
            double kl = 0.0;
            for (std::size_t c = 0; c < classes; ++c) {
                const double diff = lp[c] - lq[c];
                kl += p[c] * diff;
                gp[c] += scale * (diff + (p[c] > kProbFloor ? 1.0 : 0.0));
                if (q[c] > kProbFloor) {
                    gq[c] -= scale * p[c] / q[c];
                }
            }
            total += kl;
        }
    }
    result.value = total * scale;

    // Through the softmax: dz_a = p_a (g_a - sum_c p_c g_c).
    std::vector<double> g_logit(rows * classes);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* p = probs.data() + r * classes;
        const double* g = g_prob.data() + r * classes;
        double mean = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            mean += p[c] * g[c];
        }
        double* dz = g_logit.data() + r * classes;
        for (std::size_t c = 0; c < classes; ++c) {
            dz[c] = p[c] * (g[c] - mean);
        }
    }
    std::vector<double> g_feat(rows * dim, 0.0);
    kern.grad_features(g_logit.data(), rows, classes, head.weights.data(), dim, g_feat.data());
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(g_feat.data() + r * dim, dim, result.grad_encodings.data() + involved[r] * dim);
    }
    if (opts.head_gradient) {
        kern.grad_weights(g_logit.data(), rows, classes, feats.data(), dim,
                          result.grad_head.weights.data());
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < classes; ++c) {
                result.grad_head.biases[c] += g_logit[r * classes + c];
            }
        }
    }
    return result;
}

}  // namespace gradiseg
