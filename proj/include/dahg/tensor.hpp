#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dahg {

// Row-major dense matrix of doubles. Batched quantities put the batch on rows;
// sequences are stored flattened as [(batch * time) x dim] with row b*T + t.
class Tensor {
  public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor(1, 1, v); }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    std::span<double> flat() { return data_; }
    std::span<const double> flat() const { return data_; }
    const std::vector<double>& values() const { return data_; }

    void fill(double v);
    void resize(std::size_t rows, std::size_t cols);

    // Accumulates o into this tensor (shapes must match).
    void add_inplace(const Tensor& o);

    bool all_finite() const;
    double sum() const;
    double squared_norm() const;

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// C = A * B
Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace dahg
