#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace dmsva::num {

/// Dense real vector. Values are f64 throughout the library.
class Vector {
public:
    Vector() = default;
    explicit Vector(std::size_t dim, double fill = 0.0) : data_(dim, fill) {}
    explicit Vector(std::vector<double> data) : data_(std::move(data)) {}
    Vector(std::initializer_list<double> values) : data_(values) {}

    std::size_t dim() const noexcept { return data_.size(); }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    const std::vector<double>& raw() const noexcept { return data_; }

    bool operator==(const Vector&) const = default;

private:
    std::vector<double> data_;
};

/// Row-major rows x cols matrix. A memory bank is an N x D Tensor2, one slot
/// per row.
class Tensor2 {
public:
    Tensor2() = default;
    Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Tensor2 column(const Vector& v);
    static Tensor2 scalar(double x) { return Tensor2(1, 1, x); }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    /// Flattened copy as a Vector (column-vector view of an n x 1 tensor).
    Vector flat() const { return Vector(data_); }
    double item() const;

    bool operator==(const Tensor2&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

double dot(std::span<const double> x, std::span<const double> y);
double norm2(std::span<const double> x);
bool all_finite(std::span<const double> x);

} // namespace dmsva::num
