#pragma once

#include <cstddef>
#include <span>
#include <string_view>

namespace gradiseg::simd {

// Dense inner loops shared by the semantic head, the 3D consistency loss and
// the neighbor search. Every kernel has a scalar reference; the AVX2 variant
// is picked at startup when the CPU supports it. The add/mul kernels
// accumulate in the same order as the scalar versions and therefore agree
// bit-for-bit; softmax differs only in the exp approximation and the
// partial-sum order.

enum class Isa { scalar, avx2 };

struct KernelTable {
    Isa isa;

    /// out[j] = (x[j]-ox)*ux + (y[j]-oy)*uy + (z[j]-oz)*uz
    void (*projection_distances)(const double* x, const double* y, const double* z, std::size_t n,
                                 const double origin[3], const double dir[3], double* out);

    /// out[j] = |p_j - origin|^2, summed x then y then z.
    void (*squared_distances)(const double* x, const double* y, const double* z, std::size_t n,
                              const double origin[3], double* out);

    /// logits[r*C + c] = bias[c] + sum_d features[r*D + d] * weights[c*D + d]
    void (*affine_rows)(const double* features, std::size_t rows, std::size_t dim,
                        const double* weights, const double* bias, std::size_t classes,
                        double* logits);

    /// In-place row softmax; writes log-sum-exp of each original row.
    void (*softmax_rows)(double* values, std::size_t rows, std::size_t classes,
                         double* log_sum_exp);

    /// out[r*D + d] += sum_c grad[r*C + c] * weights[c*D + d]
    void (*grad_features)(const double* grad, std::size_t rows, std::size_t classes,
                          const double* weights, std::size_t dim, double* out);

    /// out[c*D + d] += sum_r grad[r*C + c] * features[r*D + d]
    void (*grad_weights)(const double* grad, std::size_t rows, std::size_t classes,
                         const double* features, std::size_t dim, double* out);
};

const KernelTable& scalar_kernels();
/// nullptr when the build has no AVX2 variant.
const KernelTable* avx2_kernels();

/// Dispatch target: AVX2 when compiled in and supported, unless the
/// environment variable GRADISEG_SIMD=scalar forces the reference path.
const KernelTable& kernels();

std::string_view isa_name(Isa isa);

/// Vectorized exp used by the AVX2 softmax, exposed for accuracy tests.
/// Falls back to std::exp when AVX2 is unavailable.
void exp_batch(std::span<const double> in, std::span<double> out);

}  // namespace gradiseg::simd
