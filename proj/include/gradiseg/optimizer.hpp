#pragma once

#include "gradiseg/backward.hpp"
#include "gradiseg/scene.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace gradiseg {

struct LearningRates {
    double position = 1.6e-4;  // multiplied by the scene extent
    double log_scale = 5e-3;
    double rotation = 1e-3;
    double opacity_logit = 5e-2;
    double color = 2.5e-3;
    double encoding = 2.5e-3;
    double head = 5e-3;
};

/// Bias-corrected Adam over every parameter family. Scales move in log
/// space, opacity in logit space; quaternions are renormalized and colors
/// clamped to [0,1] after each step.
class AdamState {
public:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    AdamState() = default;
    AdamState(std::size_t n, std::size_t dim, const ClassifierHead& head);

    struct Moments {
        std::vector<double> m, v;
    };

    std::size_t rows() const { return position_.m.size() / 3; }
    std::int64_t step_count() const { return step_; }

    /// Throws Error naming the family when a gradient is not finite.
    void step(GaussianCloud& cloud, ClassifierHead& head, const ParamGrads& grads,
              const LearningRates& lr, double extent);

    /// Carries moments for surviving rows; fresh rows start at zero.
    void remap(const RowRemap& remap);

    const Moments& position_moments() const { return position_; }
    const Moments& encoding_moments() const { return encoding_; }

private:
    std::size_t dim_ = 0;
    std::int64_t step_ = 0;
    Moments position_, log_scale_, rotation_, opacity_, color_, encoding_, head_w_, head_b_;
};

/// One bias-corrected Adam update of a flat parameter block.
void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                 std::span<double> v, double lr, std::int64_t step);

}  // namespace gradiseg
