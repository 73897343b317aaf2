#include "gradiseg/optimizer.hpp"

#include "gradiseg/error.hpp"

#include <algorithm>
#include <cmath>

namespace gradiseg {

namespace {

constexpr double kOpacityFloor = 1e-12;

double adam_delta(double g, double& m, double& v, double lr, double bias1, double bias2) {
    m = AdamState::kBeta1 * m + (1.0 - AdamState::kBeta1) * g;
    v = AdamState::kBeta2 * v + (1.0 - AdamState::kBeta2) * g * g;
    const double m_hat = m / bias1;
    const double v_hat = v / bias2;
    return -lr * m_hat / (std::sqrt(v_hat) + AdamState::kEps);
}

void check_finite(std::span<const double> g, const char* family) {
    for (double v : g) {
        if (!std::isfinite(v)) {
            throw Error(std::string("non-finite gradient in parameter family '") + family + "'");
        }
    }
}

template <int K>
std::span<const double> flat(const std::vector<Eigen::Matrix<double, K, 1>>& v) {
    return {v.empty() ? nullptr : v.front().data(), v.size() * K};
}

void resize_moments(AdamState::Moments& mo, std::size_t len) {
    mo.m.assign(len, 0.0);
    mo.v.assign(len, 0.0);
}

void remap_moments(AdamState::Moments& mo, const RowRemap& remap, std::size_t width) {
    AdamState::Moments next;
    next.m.assign(remap.source.size() * width, 0.0);
    next.v.assign(remap.source.size() * width, 0.0);
    for (std::size_t r = 0; r < remap.source.size(); ++r) {
        const std::int64_t src = remap.source[r];
        if (src < 0) {
            continue;
        }
        const auto s = static_cast<std::size_t>(src);
        std::copy_n(mo.m.begin() + s * width, width, next.m.begin() + r * width);
        std::copy_n(mo.v.begin() + s * width, width, next.v.begin() + r * width);
    }
    mo = std::move(next);
}

}  // namespace

void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                 std::span<double> v, double lr, std::int64_t step) {
    const double bias1 = 1.0 - std::pow(AdamState::kBeta1, static_cast<double>(step));
    const double bias2 = 1.0 - std::pow(AdamState::kBeta2, static_cast<double>(step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        params[k] += adam_delta(grads[k], m[k], v[k], lr, bias1, bias2);
    }
}

AdamState::AdamState(std::size_t n, std::size_t dim, const ClassifierHead& head) : dim_(dim) {
    resize_moments(position_, n * 3);
    resize_moments(log_scale_, n * 3);
    resize_moments(rotation_, n * 4);
    resize_moments(opacity_, n);
    resize_moments(color_, n * 3);
    resize_moments(encoding_, n * dim);
    resize_moments(head_w_, head.weights.size());
    resize_moments(head_b_, head.biases.size());
}

void AdamState::step(GaussianCloud& cloud, ClassifierHead& head, const ParamGrads& grads,
                     const LearningRates& lr, double extent) {
    const std::size_t n = cloud.size();
    if (grads.size() != n || rows() != n || grads.dim != dim_ || cloud.dim() != dim_) {
        throw Error("AdamState::step: optimizer rows are out of sync with the cloud");
    }
    check_finite(flat(grads.position), "position");
    check_finite(flat(grads.log_scale), "log_scale");
    check_finite(flat(grads.rotation), "rotation");
    check_finite(grads.opacity_logit, "opacity");
    check_finite(flat(grads.color), "color");
    check_finite(grads.encoding, "encoding");
    check_finite(grads.head.weights, "head_weights");
    check_finite(grads.head.biases, "head_biases");

    ++step_;
    const double bias1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_));
    const double bias2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_));

    const double lr_pos = lr.position * extent;
    for (std::size_t i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) {
            const std::size_t at = i * 3 + k;
            cloud.positions[i][k] +=
                adam_delta(grads.position[i][k], position_.m[at], position_.v[at], lr_pos, bias1, bias2);

            const double ds = adam_delta(grads.log_scale[i][k], log_scale_.m[at], log_scale_.v[at],
                                         lr.log_scale, bias1, bias2);
            if (ds != 0.0) {
                cloud.scales[i][k] = std::exp(std::log(cloud.scales[i][k]) + ds);
            }

            const double dc = adam_delta(grads.color[i][k], color_.m[at], color_.v[at], lr.color,
                                         bias1, bias2);
            if (dc != 0.0) {
                cloud.colors[i][k] = std::clamp(cloud.colors[i][k] + dc, 0.0, 1.0);
            }
        }
        bool rotated = false;
        for (int k = 0; k < 4; ++k) {
            const std::size_t at = i * 4 + k;
            const double dq = adam_delta(grads.rotation[i][k], rotation_.m[at], rotation_.v[at],
                                         lr.rotation, bias1, bias2);
            if (dq != 0.0) {
                cloud.rotations[i][k] += dq;
                rotated = true;
            }
        }
        if (rotated) {
            cloud.rotations[i].normalize();
        }
        const double d_o = adam_delta(grads.opacity_logit[i], opacity_.m[i], opacity_.v[i],
                                      lr.opacity_logit, bias1, bias2);
        if (d_o != 0.0) {
            const double o = std::clamp(cloud.opacities[i], kOpacityFloor, 1.0 - kOpacityFloor);
            cloud.opacities[i] =
                std::clamp(sigmoid(logit(o) + d_o), kOpacityFloor, 1.0 - kOpacityFloor);
        }
        for (std::size_t d = 0; d < dim_; ++d) {
            const std::size_t at = i * dim_ + d;
            cloud.encodings[at] += adam_delta(grads.encoding[at], encoding_.m[at], encoding_.v[at],
                                              lr.encoding, bias1, bias2);
        }
    }
    if (grads.head.weights.size() == head.weights.size()) {
        for (std::size_t k = 0; k < head.weights.size(); ++k) {
            head.weights[k] +=
                adam_delta(grads.head.weights[k], head_w_.m[k], head_w_.v[k], lr.head, bias1, bias2);
        }
        for (std::size_t k = 0; k < head.biases.size(); ++k) {
            head.biases[k] +=
                adam_delta(grads.head.biases[k], head_b_.m[k], head_b_.v[k], lr.head, bias1, bias2);
        }
    }
}

void AdamState::remap(const RowRemap& remap) {
    remap_moments(position_, remap, 3);
    remap_moments(log_scale_, remap, 3);
    remap_moments(rotation_, remap, 4);
    remap_moments(opacity_, remap, 1);
    remap_moments(color_, remap, 3);
    remap_moments(encoding_, remap, dim_);
}

}  // namespace gradiseg
