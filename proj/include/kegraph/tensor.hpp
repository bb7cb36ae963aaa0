#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "kegraph/common.hpp"

namespace kegraph {

// Dense row-major matrix of 64-bit floats. Scalars are 1x1, row vectors 1xN.
// Everything in the training stack is small enough that double precision and
// a flat vector are the right trade: reproducible and easy to audit.
class Tensor {
  public:
    Tensor() : rows_(0), cols_(0) {}
    Tensor(size_t rows, size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Tensor scalar(double v) {
        Tensor t(1, 1);
        t.data_[0] = v;
        return t;
    }

    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const size_t r = rows.size();
        const size_t c = r == 0 ? 0 : rows.begin()->size();
        Tensor t(r, c);
        size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != c) throw DimensionError("Tensor::from_rows: ragged rows");
            size_t j = 0;
            for (double v : row) t.at(i, j++) = v;
            ++i;
        }
        return t;
    }

    size_t rows() const { return rows_; }
    size_t cols() const { return cols_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(size_t r, size_t c) { return data_[r * cols_ + c]; }
    double at(size_t r, size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* row(size_t r) { return data_.data() + r * cols_; }
    const double* row(size_t r) const { return data_.data() + r * cols_; }

    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double scalar_value() const {
        if (rows_ != 1 || cols_ != 1) throw ContractError("Tensor: not a scalar");
        return data_[0];
    }

    bool bit_equal(const Tensor& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) { return a.bit_equal(b); }

  private:
    size_t rows_, cols_;
    std::vector<double> data_;
};

}  // namespace kegraph
