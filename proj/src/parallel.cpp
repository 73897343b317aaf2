#include "gradiseg/parallel.hpp"

#include <omp.h>

#include <atomic>
#include <cstdlib>
#include <string>

namespace gradiseg {

namespace {
std::atomic<int> override_count{0};
}

void set_thread_count(int n) { override_count = n > 0 ? n : 0; }

int thread_count() {
    if (const int forced = override_count.load(); forced > 0) {
        return forced;
    }
    static const int count = [] {
        if (const char* env = std::getenv("GRADISEG_THREADS")) {
            try {
                const int n = std::stoi(env);
                if (n > 0) {
                    return n;
                }
            } catch (const std::exception&) {
            }
        }
        return omp_get_max_threads();
    }();
    return count;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    const int threads = thread_count();
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            body(i);
        }
        return;
    }
#pragma omp parallel for schedule(static) num_threads(threads)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
        body(static_cast<std::size_t>(i));
    }
}

}  // namespace gradiseg
