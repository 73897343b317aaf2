#include "gradiseg/simd.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <random>
#include <vector>

using namespace gradiseg;

namespace {

std::vector<double> randn(std::mt19937_64& rng, std::size_t n, double sigma = 1.0) {
    std::normal_distribution<double> d(0.0, sigma);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

}  // namespace

TEST_CASE("dispatch honours the scalar override") {
    const char* env = std::getenv("GRADISEG_SIMD");
    if (env && std::string(env) == "scalar") {
        CHECK(simd::kernels().isa == simd::Isa::scalar);
    } else if (simd::avx2_kernels() && __builtin_cpu_supports("avx2")) {
        CHECK(simd::kernels().isa == simd::Isa::avx2);
    }
    CHECK(simd::isa_name(simd::Isa::scalar) == "scalar");
}

TEST_CASE("AVX2 kernels agree with the scalar reference") {
    const simd::KernelTable* vec = simd::avx2_kernels();
    if (!vec || !__builtin_cpu_supports("avx2")) {
        MESSAGE("AVX2 variant unavailable, skipping");
        return;
    }
    const simd::KernelTable& ref = simd::scalar_kernels();
    std::mt19937_64 rng(1);
    for (const std::size_t n : {0, 1, 3, 4, 7, 64, 1001}) {
        const auto x = randn(rng, n), y = randn(rng, n), z = randn(rng, n);
        const double origin[3] = {0.1, -0.2, 0.3};
        const double dir[3] = {0.6, 0.0, -0.8};
        std::vector<double> a(n), b(n);
        ref.projection_distances(x.data(), y.data(), z.data(), n, origin, dir, a.data());
        vec->projection_distances(x.data(), y.data(), z.data(), n, origin, dir, b.data());
        CHECK(a == b);
        ref.squared_distances(x.data(), y.data(), z.data(), n, origin, a.data());
        vec->squared_distances(x.data(), y.data(), z.data(), n, origin, b.data());
        CHECK(a == b);
    }
    struct Shape {
        std::size_t rows, dim, classes;
    };
    for (const Shape& sh : {Shape{1, 1, 1}, Shape{5, 3, 7}, Shape{33, 16, 256}, Shape{9, 6, 8}}) {
        const std::size_t rows = sh.rows, dim = sh.dim, classes = sh.classes;
        const auto f = randn(rng, rows * dim), w = randn(rng, classes * dim), bias = randn(rng, classes);
        std::vector<double> la(rows * classes), lb(rows * classes);
        ref.affine_rows(f.data(), rows, dim, w.data(), bias.data(), classes, la.data());
        vec->affine_rows(f.data(), rows, dim, w.data(), bias.data(), classes, lb.data());
        CHECK(la == lb);

        std::vector<double> lse_a(rows), lse_b(rows);
        std::vector<double> pa = la, pb = la;
        for (auto& v : pa) v *= 5.0;
        pb = pa;
        ref.softmax_rows(pa.data(), rows, classes, lse_a.data());
        vec->softmax_rows(pb.data(), rows, classes, lse_b.data());
        for (std::size_t k = 0; k < pa.size(); ++k) CHECK(std::abs(pa[k] - pb[k]) <= 1e-14);
        for (std::size_t r = 0; r < rows; ++r) CHECK(std::abs(lse_a[r] - lse_b[r]) <= 1e-12 * std::max(1.0, std::abs(lse_a[r])));

        const auto g = randn(rng, rows * classes);
        std::vector<double> ga(rows * dim, 0.5), gb(rows * dim, 0.5);
        ref.grad_features(g.data(), rows, classes, w.data(), dim, ga.data());
        vec->grad_features(g.data(), rows, classes, w.data(), dim, gb.data());
        CHECK(ga == gb);
        std::vector<double> wa(classes * dim, -0.25), wb(classes * dim, -0.25);
        ref.grad_weights(g.data(), rows, classes, f.data(), dim, wa.data());
        vec->grad_weights(g.data(), rows, classes, f.data(), dim, wb.data());
        CHECK(wa == wb);
    }
}

TEST_CASE("vectorized exp accuracy") {
    std::vector<double> in, out;
    for (double x = -700.0; x <= 700.0; x += 0.37) in.push_back(x);
    for (double x = -1.0; x <= 1.0; x += 1e-3) in.push_back(x);
    in.push_back(0.0);
    out.resize(in.size());
    simd::exp_batch(in, out);
    double worst = 0.0;
    for (std::size_t i = 0; i < in.size(); ++i) worst = std::max(worst, std::abs(out[i] / std::exp(in[i]) - 1.0));
    CHECK(worst <= 1e-14);
    std::vector<double> tiny{-800.0, -1e4}, r(2);
    simd::exp_batch(tiny, r);
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 0.0);
}
