#include "gradiseg/simd.hpp"

#include <cmath>
#include <cstdlib>
#include <string_view>

namespace gradiseg::simd {

#ifdef GRADISEG_HAVE_AVX2
void exp_batch_avx2(const double* in, double* out, std::size_t n);
#else
const KernelTable* avx2_kernels() { return nullptr; }
#endif

namespace {

bool cpu_has_avx2() {
#if defined(GRADISEG_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

const KernelTable& select() {
    const char* force = std::getenv("GRADISEG_SIMD");
    if (force != nullptr && std::string_view(force) == "scalar") {
        return scalar_kernels();
    }
    if (cpu_has_avx2()) {
        if (const KernelTable* t = avx2_kernels()) {
            return *t;
        }
    }
    return scalar_kernels();
}

}  // namespace

const KernelTable& kernels() {
    static const KernelTable& table = select();
    return table;
}

std::string_view isa_name(Isa isa) {
    switch (isa) {
        case Isa::scalar:
            return "scalar";
        case Isa::avx2:
            return "avx2";
    }
    return "unknown";
}

void exp_batch(std::span<const double> in, std::span<double> out) {
#ifdef GRADISEG_HAVE_AVX2
    if (cpu_has_avx2()) {
        exp_batch_avx2(in.data(), out.data(), in.size());
        return;
    }
#endif
    for (std::size_t i = 0; i < in.size(); ++i) {
        out[i] = std::exp(in[i]);
    }
}

}  // namespace gradiseg::simd
