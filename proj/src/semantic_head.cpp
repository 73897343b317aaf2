#include "gradiseg/semantic_head.hpp"

#include "gradiseg/error.hpp"
#include "gradiseg/parallel.hpp"
#include "gradiseg/simd.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gradiseg {

namespace {

constexpr std::size_t kChunkRows = 256;

std::size_t row_count(std::span<const double> features, const ClassifierHead& head) {
    if (head.dim == 0 || features.size() % head.dim != 0) {
        throw ValidationError("feature buffer is not a multiple of the encoding dimension");
    }
    return features.size() / head.dim;
}

}  // namespace

ClassifierHead::ClassifierHead(std::size_t num_classes, std::size_t encoding_dim)
    : classes(num_classes),
      dim(encoding_dim),
      weights(num_classes * encoding_dim, 0.0),
      biases(num_classes, 0.0) {}

bool ClassifierHead::finite() const {
    auto ok = [](double v) { return std::isfinite(v); };
    return std::all_of(weights.begin(), weights.end(), ok) &&
           std::all_of(biases.begin(), biases.end(), ok);
}

std::vector<double> head_logits(std::span<const double> features, const ClassifierHead& head) {
    const std::size_t rows = row_count(features, head);
    std::vector<double> logits(rows * head.classes);
    if (rows > 0) {
        simd::kernels().affine_rows(features.data(), rows, head.dim, head.weights.data(),
                                    head.biases.data(), head.classes, logits.data());
    }
    return logits;
}

std::vector<double> classify(std::span<const double> features, const ClassifierHead& head) {
    std::vector<double> probs = head_logits(features, head);
    const std::size_t rows = probs.size() / std::max<std::size_t>(head.classes, 1);
    std::vector<double> lse(rows);
    if (rows > 0) {
        simd::kernels().softmax_rows(probs.data(), rows, head.classes, lse.data());
    }
    return probs;
}

std::vector<std::int32_t> predict_labels(std::span<const double> features,
                                         const ClassifierHead& head) {
    const std::vector<double> logits = head_logits(features, head);
    const std::size_t rows = logits.size() / std::max<std::size_t>(head.classes, 1);
    std::vector<std::int32_t> labels(rows, 0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* z = logits.data() + r * head.classes;
        std::size_t best = 0;
        for (std::size_t c = 1; c < head.classes; ++c) {
            if (z[c] > z[best]) {
                best = c;
            }
        }
        labels[r] = static_cast<std::int32_t>(best);
    }
    return labels;
}

Loss2d loss_2d(std::span<const double> identity_map, std::span<const std::uint8_t> labels,
               const ClassifierHead& head) {
    const std::size_t rows = row_count(identity_map, head);
    if (rows != labels.size()) {
        throw ValidationError("identity map and mask disagree on the pixel count");
    }
    for (const std::uint8_t l : labels) {
        if (l >= head.classes) {
            throw ValidationError("mask id " + std::to_string(l) + " is >= the class count " +
                                  std::to_string(head.classes));
        }
    }

    Loss2d result;
    result.grad_features.assign(identity_map.size(), 0.0);
    result.grad_head = HeadGrads(head);
    if (rows == 0) {
        return result;
    }

    const auto& k = simd::kernels();
    const std::size_t classes = head.classes;
    const std::size_t dim = head.dim;
    const double inv_rows = 1.0 / static_cast<double>(rows);
    const std::size_t chunks = (rows + kChunkRows - 1) / kChunkRows;

    std::vector<double> chunk_loss(chunks, 0.0);
    std::vector<HeadGrads> chunk_grads(chunks, HeadGrads(head));

    parallel_for(chunks, [&](std::size_t ci) {
        const std::size_t r0 = ci * kChunkRows;
        const std::size_t n = std::min(kChunkRows, rows - r0);
        const double* feats = identity_map.data() + r0 * dim;
        std::vector<double> z(n * classes);
        std::vector<double> lse(n);
        k.affine_rows(feats, n, dim, head.weights.data(), head.biases.data(), classes, z.data());
        double loss = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            loss -= z[r * classes + labels[r0 + r]];
        }
        k.softmax_rows(z.data(), n, classes, lse.data());
        for (std::size_t r = 0; r < n; ++r) {
            loss += lse[r];
            double* g = z.data() + r * classes;
            g[labels[r0 + r]] -= 1.0;
            for (std::size_t c = 0; c < classes; ++c) {
                g[c] *= inv_rows;
            }
        }
        chunk_loss[ci] = loss;
        k.grad_features(z.data(), n, classes, head.weights.data(), dim,
                        result.grad_features.data() + r0 * dim);
        HeadGrads& hg = chunk_grads[ci];
        k.grad_weights(z.data(), n, classes, feats, dim, hg.weights.data());
        for (std::size_t r = 0; r < n; ++r) {
            const double* g = z.data() + r * classes;
            for (std::size_t c = 0; c < classes; ++c) {
                hg.biases[c] += g[c];
            }
        }
    });

    double total = 0.0;
    for (std::size_t ci = 0; ci < chunks; ++ci) {
        total += chunk_loss[ci];
        const HeadGrads& hg = chunk_grads[ci];
        for (std::size_t i = 0; i < hg.weights.size(); ++i) {
            result.grad_head.weights[i] += hg.weights[i];
        }
        for (std::size_t c = 0; c < classes; ++c) {
            result.grad_head.biases[c] += hg.biases[c];
        }
    }
    result.value = total * inv_rows;
    return result;
}

}  // namespace gradiseg
