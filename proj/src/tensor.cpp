#include "dahg/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "dahg/error.hpp"
#include "dahg/kernels.hpp"

namespace dahg {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw Error("tensor data does not match its shape");
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::resize(std::size_t rows, std::size_t cols) {
    rows_ = rows;
    cols_ = cols;
    data_.assign(rows * cols, 0.0);
}

void Tensor::add_inplace(const Tensor& o) {
    if (!same_shape(o)) throw Error("tensor shape mismatch in accumulation");
    kernels::active().axpy(1.0, o.data(), data(), size());
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
}

double Tensor::squared_norm() const { return kernels::active().dot(data(), data(), size()); }

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) throw Error("matmul inner dimension mismatch");
    Tensor c(a.rows(), b.cols());
    kernels::gemm_nn(a.rows(), b.cols(), a.cols(), a.data(), b.data(), c.data(), false);
    return c;
}

}  // namespace dahg
