#include <doctest.h>

#include <array>
#include <random>
#include <vector>

#include "dahg/kernels.hpp"

using namespace dahg::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::vector<double> v(n);
    for (double& x : v) x = u(rng);
    return v;
}

std::vector<const KernelTable*> vector_tables() {
    std::vector<const KernelTable*> out;
    if (const KernelTable* t = avx2_table()) out.push_back(t);
    if (const KernelTable* t = neon_table()) out.push_back(t);
    return out;
}

// Naive triple loop, independent of the kernel tables.
std::vector<double> naive_gemm(std::size_t m, std::size_t n, std::size_t k, const std::vector<double>& a,
                               bool a_t, const std::vector<double>& b, bool b_t) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = a_t ? a[p * m + i] : a[i * k + p];
                const double bv = b_t ? b[j * k + p] : b[p * n + j];
                s += av * bv;
            }
            c[i * n + j] = s;
        }
    }
    return c;
}

}  // namespace

TEST_CASE("scalar kernels match direct loops") {
    std::mt19937_64 rng(1);
    const KernelTable& s = scalar_table();
    for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 16u, 33u}) {
        const auto a = random_vec(n, rng), b = random_vec(n, rng);
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += a[i] * b[i];
        CHECK(s.dot(a.data(), b.data(), n) == doctest::Approx(dot).epsilon(1e-14));
        auto y = b;
        s.axpy(0.5, a.data(), y.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(y[i] == b[i] + 0.5 * a[i]);
    }
}

TEST_CASE("vectorized kernels agree with the scalar reference") {
    const auto tables = vector_tables();
    if (tables.empty()) {
        MESSAGE("no vector ISA available on this machine; only the scalar path is exercised");
        return;
    }
    std::mt19937_64 rng(2);
    const KernelTable& ref = scalar_table();
    for (const KernelTable* t : tables) {
        CAPTURE(t->name);
        for (std::size_t n = 0; n <= 67; ++n) {
            const auto a = random_vec(n, rng), b = random_vec(n, rng), y0 = random_vec(n, rng);
            CHECK(t->dot(a.data(), b.data(), n) == doctest::Approx(ref.dot(a.data(), b.data(), n)).epsilon(1e-12));

            auto y1 = y0, y2 = y0;
            t->axpy(-1.25, a.data(), y1.data(), n);
            ref.axpy(-1.25, a.data(), y2.data(), n);
            for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-14));

            y1 = y0;
            y2 = y0;
            t->mul_acc(a.data(), b.data(), y1.data(), n);
            ref.mul_acc(a.data(), b.data(), y2.data(), n);
            for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-14));

            t->add(a.data(), b.data(), y1.data(), n);
            ref.add(a.data(), b.data(), y2.data(), n);
            for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == y2[i]);
        }
    }
}

TEST_CASE("gemm variants match a naive product for every table") {
    std::mt19937_64 rng(3);
    std::vector<const KernelTable*> tables{&scalar_table()};
    for (const KernelTable* t : vector_tables()) tables.push_back(t);
    for (const KernelTable* t : tables) {
        CAPTURE(t->name);
        using Dims = std::array<std::size_t, 3>;
        for (const Dims& d : {Dims{1, 1, 1}, Dims{3, 5, 7}, Dims{9, 4, 17}, Dims{16, 33, 8}}) {
            const auto [m, n, k] = d;
            const auto a = random_vec(m * k, rng), b = random_vec(k * n, rng), bt = random_vec(n * k, rng);
            std::vector<double> c(m * n, 0.0);

            gemm_nn(m, n, k, a.data(), b.data(), c.data(), false, *t);
            auto want = naive_gemm(m, n, k, a, false, b, false);
            for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(want[i]).epsilon(1e-12));

            gemm_nt(m, n, k, a.data(), bt.data(), c.data(), false, *t);
            want = naive_gemm(m, n, k, a, false, bt, true);
            for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(want[i]).epsilon(1e-12));

            // C[k x n] = A^T B with A [m x k], B [m x n]
            const auto bm = random_vec(m * n, rng);
            std::vector<double> ct(k * n, 1.0);
            gemm_tn(m, n, k, a.data(), bm.data(), ct.data(), true, *t);
            want = naive_gemm(k, n, m, a, true, bm, false);
            for (std::size_t i = 0; i < ct.size(); ++i) CHECK(ct[i] == doctest::Approx(want[i] + 1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("selection can be switched and restored") {
    const Isa original = active().isa;
    CHECK(select(Isa::scalar));
    CHECK(active().isa == Isa::scalar);
    CHECK(select(original));
    CHECK(active().isa == original);
}
