#pragma once

// Dense double-precision inner loops used by the tensor layer.
//
// Every kernel has a scalar reference version. Vectorized versions (AVX2+FMA
// on x86-64, NEON on aarch64) are compiled into separate translation units and
// selected once at startup from the CPU feature bits. DAHG_SIMD=scalar in the
// environment forces the reference path.

#include <cstddef>
#include <string_view>

namespace dahg::kernels {

enum class Isa { scalar, avx2, neon };

struct KernelTable {
    Isa isa;
    std::string_view name;
    // sum_i a[i] * b[i]
    double (*dot)(const double* a, const double* b, std::size_t n);
    // y[i] += alpha * x[i]
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // y[i] += a[i] * b[i]
    void (*mul_acc)(const double* a, const double* b, double* y, std::size_t n);
    // y[i] = a[i] + b[i]
    void (*add)(const double* a, const double* b, double* y, std::size_t n);
};

const KernelTable& scalar_table();

// nullptr when the ISA was not compiled in or the running CPU lacks it.
const KernelTable* avx2_table();
const KernelTable* neon_table();

// The table chosen for this process.
const KernelTable& active();

// Overrides the selection (tests and benchmarks). Returns false if the
// requested ISA is unavailable, leaving the selection unchanged.
bool select(Isa isa);

// C[m x n] (+)= A[m x k] * B[k x n], all row-major.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate, const KernelTable& t = active());

// C[m x n] (+)= A[m x k] * B[n x k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate, const KernelTable& t = active());

// C[k x n] (+)= A[m x k]^T * B[m x n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate, const KernelTable& t = active());

}  // namespace dahg::kernels
