#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace gradiseg {

inline constexpr std::size_t kDefaultClasses = 256;
inline constexpr std::size_t kDefaultEncodingDim = 16;

/// Linear classifier from identity-feature space to class logits (a 1x1
/// convolution over the identity map), followed by softmax.
struct ClassifierHead {
    std::size_t classes = kDefaultClasses;
    std::size_t dim = kDefaultEncodingDim;
    std::vector<double> weights;  // classes x dim, row-major
    std::vector<double> biases;   // classes

    ClassifierHead() = default;
    /// Zero weights and biases: uniform predictions.
    ClassifierHead(std::size_t num_classes, std::size_t encoding_dim);

    double& weight(std::size_t c, std::size_t d) { return weights[c * dim + d]; }
    double weight(std::size_t c, std::size_t d) const { return weights[c * dim + d]; }

    bool finite() const;
};

struct HeadGrads {
    std::vector<double> weights;
    std::vector<double> biases;

    explicit HeadGrads(const ClassifierHead& head)
        : weights(head.weights.size(), 0.0), biases(head.biases.size(), 0.0) {}
    HeadGrads() = default;
};

/// Raw logits W f + b for `rows` feature vectors laid out row-major.
std::vector<double> head_logits(std::span<const double> features, const ClassifierHead& head);

/// Softmax(W f + b) per row; output is rows x classes.
std::vector<double> classify(std::span<const double> features, const ClassifierHead& head);

/// Argmax of the logits per row, lowest class index on ties.
std::vector<std::int32_t> predict_labels(std::span<const double> features,
                                         const ClassifierHead& head);

struct Loss2d {
    double value = 0.0;
    std::vector<double> grad_features;  // same layout as the identity map
    HeadGrads grad_head;
};

/// Mean pixel cross-entropy -log p[label]. `identity_map` is pixels x dim,
/// `labels` one class id per pixel. Throws ValidationError for a label >= C.
Loss2d loss_2d(std::span<const double> identity_map, std::span<const std::uint8_t> labels,
               const ClassifierHead& head);

}  // namespace gradiseg
