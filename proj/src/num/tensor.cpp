#include "dmsva/num/tensor.hpp"

#include <cmath>
#include <string>

#include "dmsva/errors.hpp"

namespace dmsva::num {

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw DimensionMismatch("tensor data length " + std::to_string(data_.size()) +
                                " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
}

Tensor2 Tensor2::column(const Vector& v) {
    return Tensor2(v.dim(), 1, v.raw());
}

double Tensor2::item() const {
    if (data_.size() != 1) {
        throw DimensionMismatch("item() on a " + std::to_string(rows_) + "x" +
                                std::to_string(cols_) + " tensor");
    }
    return data_[0];
}

double dot(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw DimensionMismatch("dot of " + std::to_string(x.size()) + " and " +
                                std::to_string(y.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        s += x[i] * y[i];
    }
    return s;
}

double norm2(std::span<const double> x) {
    return std::sqrt(dot(x, x));
}

bool all_finite(std::span<const double> x) {
    for (double v : x) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

} // namespace dmsva::num
