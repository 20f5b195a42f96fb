#include <cstdlib>
#include <cstring>

#include "kernel_tables.hpp"

namespace dahg::kernels {

const KernelTable* avx2_table() {
#if defined(DAHG_HAVE_AVX2)
    static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    return supported ? &detail::avx2_table_impl() : nullptr;
#else
    return nullptr;
#endif
}

const KernelTable* neon_table() {
#if defined(DAHG_HAVE_NEON)
    return &detail::neon_table_impl();
#else
    return nullptr;
#endif
}

namespace {

const KernelTable* detect() {
    const char* env = std::getenv("DAHG_SIMD");
    if (env != nullptr && std::strcmp(env, "scalar") == 0) return &scalar_table();
    if (const KernelTable* t = avx2_table()) return t;
    if (const KernelTable* t = neon_table()) return t;
    return &scalar_table();
}

const KernelTable*& current() {
    static const KernelTable* table = detect();
    return table;
}

}  // namespace

const KernelTable& active() { return *current(); }

bool select(Isa isa) {
    const KernelTable* t = nullptr;
    switch (isa) {
        case Isa::scalar: t = &scalar_table(); break;
        case Isa::avx2: t = avx2_table(); break;
        case Isa::neon: t = neon_table(); break;
    }
    if (t == nullptr) return false;
    current() = t;
    return true;
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate, const KernelTable& t) {
    if (!accumulate) std::memset(c, 0, sizeof(double) * m * n);
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            if (ai[p] != 0.0) t.axpy(ai[p], b + p * n, ci, n);
        }
    }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate, const KernelTable& t) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double v = t.dot(ai, b + j * k, k);
            ci[j] = accumulate ? ci[j] + v : v;
        }
    }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate, const KernelTable& t) {
    if (!accumulate) std::memset(c, 0, sizeof(double) * k * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            if (ai[p] != 0.0) t.axpy(ai[p], bi, c + p * n, n);
        }
    }
}

}  // namespace dahg::kernels
