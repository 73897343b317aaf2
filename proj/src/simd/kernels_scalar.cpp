#include "gradiseg/simd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gradiseg::simd {
namespace {

void projection_distances(const double* x, const double* y, const double* z, std::size_t n,
                          const double origin[3], const double dir[3], double* out) {
    for (std::size_t j = 0; j < n; ++j) {
        const double dx = x[j] - origin[0];
        const double dy = y[j] - origin[1];
        const double dz = z[j] - origin[2];
        out[j] = dx * dir[0] + dy * dir[1] + dz * dir[2];
    }
}

void squared_distances(const double* x, const double* y, const double* z, std::size_t n,
                       const double origin[3], double* out) {
    for (std::size_t j = 0; j < n; ++j) {
        const double dx = x[j] - origin[0];
        const double dy = y[j] - origin[1];
        const double dz = z[j] - origin[2];
        out[j] = dx * dx + dy * dy + dz * dz;
    }
}

void affine_rows(const double* features, std::size_t rows, std::size_t dim, const double* weights,
                 const double* bias, std::size_t classes, double* logits) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* f = features + r * dim;
        double* out = logits + r * classes;
        for (std::size_t c = 0; c < classes; ++c) {
            const double* w = weights + c * dim;
            double acc = bias[c];
            for (std::size_t d = 0; d < dim; ++d) {
                acc += f[d] * w[d];
            }
            out[c] = acc;
        }
    }
}

void softmax_rows(double* values, std::size_t rows, std::size_t classes, double* log_sum_exp) {
    for (std::size_t r = 0; r < rows; ++r) {
        double* v = values + r * classes;
        const double peak = *std::max_element(v, v + classes);
        double sum = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            v[c] = std::exp(v[c] - peak);
            sum += v[c];
        }
        const double inv = 1.0 / sum;
        for (std::size_t c = 0; c < classes; ++c) {
            v[c] *= inv;
        }
        log_sum_exp[r] = peak + std::log(sum);
    }
}

void grad_features(const double* grad, std::size_t rows, std::size_t classes,
                   const double* weights, std::size_t dim, double* out) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* g = grad + r * classes;
        double* o = out + r * dim;
        for (std::size_t c = 0; c < classes; ++c) {
            const double* w = weights + c * dim;
            for (std::size_t d = 0; d < dim; ++d) {
                o[d] += g[c] * w[d];
            }
        }
    }
}

void grad_weights(const double* grad, std::size_t rows, std::size_t classes,
                  const double* features, std::size_t dim, double* out) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* g = grad + r * classes;
        const double* f = features + r * dim;
        for (std::size_t c = 0; c < classes; ++c) {
            double* o = out + c * dim;
            for (std::size_t d = 0; d < dim; ++d) {
                o[d] += g[c] * f[d];
            }
        }
    }
}

}  // namespace

const KernelTable& scalar_kernels() {
    static const KernelTable table{Isa::scalar,  projection_distances, squared_distances,
                                   affine_rows,  softmax_rows,         grad_features,
                                   grad_weights};
    return table;
}

}  // namespace gradiseg::simd
