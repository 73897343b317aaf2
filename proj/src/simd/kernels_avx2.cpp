#include "gradiseg/simd.hpp"

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace gradiseg::simd {

// Compiled with -mavx2 only. No FMA: the add/mul kernels have to round
// exactly like the scalar reference.

__m256d exp_pd(__m256d x);

namespace {

void projection_distances(const double* x, const double* y, const double* z, std::size_t n,
                          const double origin[3], const double dir[3], double* out) {
    const __m256d ox = _mm256_set1_pd(origin[0]);
    const __m256d oy = _mm256_set1_pd(origin[1]);
    const __m256d oz = _mm256_set1_pd(origin[2]);
    const __m256d ux = _mm256_set1_pd(dir[0]);
    const __m256d uy = _mm256_set1_pd(dir[1]);
    const __m256d uz = _mm256_set1_pd(dir[2]);
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
        const __m256d dx = _mm256_sub_pd(_mm256_loadu_pd(x + j), ox);
        const __m256d dy = _mm256_sub_pd(_mm256_loadu_pd(y + j), oy);
        const __m256d dz = _mm256_sub_pd(_mm256_loadu_pd(z + j), oz);
        __m256d acc = _mm256_add_pd(_mm256_mul_pd(dx, ux), _mm256_mul_pd(dy, uy));
        acc = _mm256_add_pd(acc, _mm256_mul_pd(dz, uz));
        _mm256_storeu_pd(out + j, acc);
    }
    for (; j < n; ++j) {
        const double dx = x[j] - origin[0];
        const double dy = y[j] - origin[1];
        const double dz = z[j] - origin[2];
        out[j] = dx * dir[0] + dy * dir[1] + dz * dir[2];
    }
}

void squared_distances(const double* x, const double* y, const double* z, std::size_t n,
                       const double origin[3], double* out) {
    const __m256d ox = _mm256_set1_pd(origin[0]);
    const __m256d oy = _mm256_set1_pd(origin[1]);
    const __m256d oz = _mm256_set1_pd(origin[2]);
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
        const __m256d dx = _mm256_sub_pd(_mm256_loadu_pd(x + j), ox);
        const __m256d dy = _mm256_sub_pd(_mm256_loadu_pd(y + j), oy);
        const __m256d dz = _mm256_sub_pd(_mm256_loadu_pd(z + j), oz);
        __m256d acc = _mm256_add_pd(_mm256_mul_pd(dx, dx), _mm256_mul_pd(dy, dy));
        acc = _mm256_add_pd(acc, _mm256_mul_pd(dz, dz));
        _mm256_storeu_pd(out + j, acc);
    }
    for (; j < n; ++j) {
        const double dx = x[j] - origin[0];
        const double dy = y[j] - origin[1];
        const double dz = z[j] - origin[2];
        out[j] = dx * dx + dy * dy + dz * dz;
    }
}

void affine_rows(const double* features, std::size_t rows, std::size_t dim, const double* weights,
                 const double* bias, std::size_t classes, double* logits) {
    const std::size_t blocks = classes / 4;
    // dim x classes copy so each d step loads four consecutive classes.
    std::vector<double> wt(dim * classes);
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t d = 0; d < dim; ++d) {
            wt[d * classes + c] = weights[c * dim + d];
        }
    }
    for (std::size_t r = 0; r < rows; ++r) {
        const double* f = features + r * dim;
        double* out = logits + r * classes;
        std::size_t b = 0;
        // Four class blocks at a time to keep the feature broadcasts shared.
        for (; b + 4 <= blocks; b += 4) {
            const std::size_t c = b * 4;
            __m256d a0 = _mm256_loadu_pd(bias + c);
            __m256d a1 = _mm256_loadu_pd(bias + c + 4);
            __m256d a2 = _mm256_loadu_pd(bias + c + 8);
            __m256d a3 = _mm256_loadu_pd(bias + c + 12);
            for (std::size_t d = 0; d < dim; ++d) {
                const __m256d fd = _mm256_set1_pd(f[d]);
                const double* w = wt.data() + d * classes + c;
                a0 = _mm256_add_pd(a0, _mm256_mul_pd(fd, _mm256_loadu_pd(w)));
                a1 = _mm256_add_pd(a1, _mm256_mul_pd(fd, _mm256_loadu_pd(w + 4)));
                a2 = _mm256_add_pd(a2, _mm256_mul_pd(fd, _mm256_loadu_pd(w + 8)));
                a3 = _mm256_add_pd(a3, _mm256_mul_pd(fd, _mm256_loadu_pd(w + 12)));
            }
            _mm256_storeu_pd(out + c, a0);
            _mm256_storeu_pd(out + c + 4, a1);
            _mm256_storeu_pd(out + c + 8, a2);
            _mm256_storeu_pd(out + c + 12, a3);
        }
        for (; b < blocks; ++b) {
            const std::size_t c = b * 4;
            __m256d acc = _mm256_loadu_pd(bias + c);
            for (std::size_t d = 0; d < dim; ++d) {
                acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_set1_pd(f[d]),
                                                       _mm256_loadu_pd(wt.data() + d * classes + c)));
            }
            _mm256_storeu_pd(out + c, acc);
        }
        for (std::size_t c = blocks * 4; c < classes; ++c) {
            const double* w = weights + c * dim;
            double acc = bias[c];
            for (std::size_t d = 0; d < dim; ++d) {
                acc += f[d] * w[d];
            }
            out[c] = acc;
        }
    }
}

double hmax(__m256d v) {
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, v);
    return std::max(std::max(lanes[0], lanes[1]), std::max(lanes[2], lanes[3]));
}

double hsum(__m256d v) {
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, v);
    return (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
}

void softmax_rows(double* values, std::size_t rows, std::size_t classes, double* log_sum_exp) {
    const double neg_inf = -std::numeric_limits<double>::infinity();
    const std::size_t full = classes / 4 * 4;
    for (std::size_t r = 0; r < rows; ++r) {
        double* v = values + r * classes;
        __m256d vmax = _mm256_set1_pd(neg_inf);
        for (std::size_t c = 0; c < full; c += 4) {
            vmax = _mm256_max_pd(vmax, _mm256_loadu_pd(v + c));
        }
        double peak = hmax(vmax);
        for (std::size_t c = full; c < classes; ++c) {
            peak = std::max(peak, v[c]);
        }
        const __m256d vpeak = _mm256_set1_pd(peak);
        __m256d vsum = _mm256_setzero_pd();
        for (std::size_t c = 0; c < full; c += 4) {
            const __m256d e = exp_pd(_mm256_sub_pd(_mm256_loadu_pd(v + c), vpeak));
            _mm256_storeu_pd(v + c, e);
            vsum = _mm256_add_pd(vsum, e);
        }
        double sum = hsum(vsum);
        if (full < classes) {
            alignas(32) double tail[4] = {neg_inf, neg_inf, neg_inf, neg_inf};
            for (std::size_t c = full; c < classes; ++c) {
                tail[c - full] = v[c] - peak;
            }
            alignas(32) double out[4];
            _mm256_store_pd(out, exp_pd(_mm256_load_pd(tail)));
            for (std::size_t c = full; c < classes; ++c) {
                v[c] = out[c - full];
                sum += v[c];
            }
        }
        const double inv = 1.0 / sum;
        const __m256d vinv = _mm256_set1_pd(inv);
        for (std::size_t c = 0; c < full; c += 4) {
            _mm256_storeu_pd(v + c, _mm256_mul_pd(_mm256_loadu_pd(v + c), vinv));
        }
        for (std::size_t c = full; c < classes; ++c) {
            v[c] *= inv;
        }
        log_sum_exp[r] = peak + std::log(sum);
    }
}

void grad_features(const double* grad, std::size_t rows, std::size_t classes,
                   const double* weights, std::size_t dim, double* out) {
    const std::size_t full = dim / 4 * 4;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* g = grad + r * classes;
        double* o = out + r * dim;
        if (dim == 16) {
            __m256d o0 = _mm256_loadu_pd(o);
            __m256d o1 = _mm256_loadu_pd(o + 4);
            __m256d o2 = _mm256_loadu_pd(o + 8);
            __m256d o3 = _mm256_loadu_pd(o + 12);
            for (std::size_t c = 0; c < classes; ++c) {
                const __m256d gc = _mm256_set1_pd(g[c]);
                const double* w = weights + c * 16;
                o0 = _mm256_add_pd(o0, _mm256_mul_pd(gc, _mm256_loadu_pd(w)));
                o1 = _mm256_add_pd(o1, _mm256_mul_pd(gc, _mm256_loadu_pd(w + 4)));
                o2 = _mm256_add_pd(o2, _mm256_mul_pd(gc, _mm256_loadu_pd(w + 8)));
                o3 = _mm256_add_pd(o3, _mm256_mul_pd(gc, _mm256_loadu_pd(w + 12)));
            }
            _mm256_storeu_pd(o, o0);
            _mm256_storeu_pd(o + 4, o1);
            _mm256_storeu_pd(o + 8, o2);
            _mm256_storeu_pd(o + 12, o3);
            continue;
        }
        for (std::size_t c = 0; c < classes; ++c) {
            const __m256d gc = _mm256_set1_pd(g[c]);
            const double* w = weights + c * dim;
            std::size_t d = 0;
            for (; d < full; d += 4) {
                _mm256_storeu_pd(o + d, _mm256_add_pd(_mm256_loadu_pd(o + d),
                                                      _mm256_mul_pd(gc, _mm256_loadu_pd(w + d))));
            }
            for (; d < dim; ++d) {
                o[d] += g[c] * w[d];
            }
        }
    }
}

void grad_weights(const double* grad, std::size_t rows, std::size_t classes,
                  const double* features, std::size_t dim, double* out) {
    const std::size_t full = dim / 4 * 4;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* g = grad + r * classes;
        const double* f = features + r * dim;
        for (std::size_t c = 0; c < classes; ++c) {
            const __m256d gc = _mm256_set1_pd(g[c]);
            double* o = out + c * dim;
            std::size_t d = 0;
            for (; d < full; d += 4) {
                _mm256_storeu_pd(o + d, _mm256_add_pd(_mm256_loadu_pd(o + d),
                                                      _mm256_mul_pd(gc, _mm256_loadu_pd(f + d))));
            }
            for (; d < dim; ++d) {
                o[d] += g[c] * f[d];
            }
        }
    }
}

}  // namespace

__m256d exp_pd(__m256d x) {
    // exp(x) = 2^n exp(r), x = n ln2 + r, |r| <= ln2/2, Taylor to degree 13.
    const __m256d lo_limit = _mm256_set1_pd(-708.39);
    const __m256d hi_limit = _mm256_set1_pd(709.0);
    const __m256d underflow = _mm256_cmp_pd(x, lo_limit, _CMP_LT_OQ);
    x = _mm256_min_pd(_mm256_max_pd(x, lo_limit), hi_limit);

    const __m256d n = _mm256_round_pd(_mm256_mul_pd(x, _mm256_set1_pd(1.4426950408889634)),
                                      _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    __m256d r = _mm256_sub_pd(x, _mm256_mul_pd(n, _mm256_set1_pd(6.93145751953125e-1)));
    r = _mm256_sub_pd(r, _mm256_mul_pd(n, _mm256_set1_pd(1.42860682030941723212e-6)));

    static constexpr double kInvFact[] = {
        1.0 / 6227020800.0, 1.0 / 479001600.0, 1.0 / 39916800.0, 1.0 / 3628800.0,
        1.0 / 362880.0,     1.0 / 40320.0,     1.0 / 5040.0,     1.0 / 720.0,
        1.0 / 120.0,        1.0 / 24.0,        1.0 / 6.0,        0.5,
        1.0,                1.0};
    __m256d p = _mm256_set1_pd(kInvFact[0]);
    for (int i = 1; i < 14; ++i) {
        p = _mm256_add_pd(_mm256_mul_pd(p, r), _mm256_set1_pd(kInvFact[i]));
    }

    const __m128i ni = _mm256_cvtpd_epi32(n);
    __m256i bits = _mm256_cvtepi32_epi64(ni);
    bits = _mm256_slli_epi64(_mm256_add_epi64(bits, _mm256_set1_epi64x(1023)), 52);
    const __m256d result = _mm256_mul_pd(p, _mm256_castsi256_pd(bits));
    return _mm256_andnot_pd(underflow, result);
}

void exp_batch_avx2(const double* in, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, exp_pd(_mm256_loadu_pd(in + i)));
    }
    for (; i < n; ++i) {
        alignas(32) double lane[4] = {in[i], 0.0, 0.0, 0.0};
        _mm256_store_pd(lane, exp_pd(_mm256_load_pd(lane)));
        out[i] = lane[0];
    }
}

const KernelTable* avx2_kernels() {
    static const KernelTable table{Isa::avx2,   projection_distances, squared_distances,
                                   affine_rows, softmax_rows,         grad_features,
                                   grad_weights};
    return &table;
}

}  // namespace gradiseg::simd
