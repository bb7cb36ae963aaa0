#pragma once

#include <algorithm>
#include <cstdint>
#include <tuple>
#include <vector>

#include "kegraph/common.hpp"

namespace kegraph {

// CSR matrix with sorted column indices per row. Column order doubles as the
// summation order everywhere it is consumed, which keeps reductions
// deterministic across runs.
class SparseRowMatrix {
  public:
    SparseRowMatrix() : rows_(0), cols_(0), row_ptr_(1, 0) {}
    SparseRowMatrix(size_t rows, size_t cols)
        : rows_(rows), cols_(cols), row_ptr_(rows + 1, 0) {}

    // Builds from (row, col, value) triplets; duplicates are summed.
    static SparseRowMatrix from_triplets(size_t rows, size_t cols,
                                         std::vector<std::tuple<uint32_t, uint32_t, double>> t) {
        for (const auto& [r, c, v] : t) {
            if (r >= rows || c >= cols) throw DimensionError("SparseRowMatrix: triplet out of range");
            (void)v;
        }
        std::sort(t.begin(), t.end(), [](const auto& a, const auto& b) {
            return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
        });
        SparseRowMatrix m(rows, cols);
        for (size_t i = 0; i < t.size();) {
            size_t j = i;
            double sum = 0.0;
            while (j < t.size() && std::get<0>(t[j]) == std::get<0>(t[i]) &&
                   std::get<1>(t[j]) == std::get<1>(t[i])) {
                sum += std::get<2>(t[j]);
                ++j;
            }
            if (sum != 0.0) {
                m.col_.push_back(std::get<1>(t[i]));
                m.val_.push_back(sum);
                ++m.row_ptr_[std::get<0>(t[i]) + 1];
            }
            i = j;
        }
        for (size_t r = 0; r < rows; ++r) m.row_ptr_[r + 1] += m.row_ptr_[r];
        return m;
    }

    size_t rows() const { return rows_; }
    size_t cols() const { return cols_; }
    size_t nnz() const { return val_.size(); }

    size_t row_begin(size_t r) const { return row_ptr_[r]; }
    size_t row_end(size_t r) const { return row_ptr_[r + 1]; }
    uint32_t entry_col(size_t k) const { return col_[k]; }
    double entry_val(size_t k) const { return val_[k]; }

    double row_sum(size_t r) const {
        double s = 0.0;
        for (size_t k = row_begin(r); k < row_end(r); ++k) s += val_[k];
        return s;
    }

    double value_at(size_t r, size_t c) const {
        for (size_t k = row_begin(r); k < row_end(r); ++k)
            if (col_[k] == c) return val_[k];
        return 0.0;
    }

    // Each non-empty row rescaled to sum 1; empty rows stay all-zero.
    SparseRowMatrix row_normalized() const {
        for (double v : val_)
            if (v < 0.0) throw DomainError("row_normalized: negative entry");
        SparseRowMatrix out = *this;
        for (size_t r = 0; r < rows_; ++r) {
            const double s = row_sum(r);
            if (s == 0.0) continue;
            for (size_t k = row_begin(r); k < row_end(r); ++k) out.val_[k] = val_[k] / s;
        }
        return out;
    }

    // True when every row sums to 0 or lies in [0,1] within tol.
    bool rows_substochastic(double tol = 1e-9) const {
        for (size_t r = 0; r < rows_; ++r) {
            const double s = row_sum(r);
            if (s < -tol || s > 1.0 + tol) return false;
        }
        return true;
    }

    SparseRowMatrix plus(const SparseRowMatrix& o) const {
        if (rows_ != o.rows_ || cols_ != o.cols_)
            throw DimensionError("SparseRowMatrix::plus: shape mismatch");
        std::vector<std::tuple<uint32_t, uint32_t, double>> t;
        t.reserve(nnz() + o.nnz());
        for (size_t r = 0; r < rows_; ++r) {
            for (size_t k = row_begin(r); k < row_end(r); ++k)
                t.emplace_back(static_cast<uint32_t>(r), col_[k], val_[k]);
            for (size_t k = o.row_begin(r); k < o.row_end(r); ++k)
                t.emplace_back(static_cast<uint32_t>(r), o.col_[k], o.val_[k]);
        }
        return from_triplets(rows_, cols_, std::move(t));
    }

    bool bit_equal(const SparseRowMatrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && row_ptr_ == o.row_ptr_ &&
               col_ == o.col_ && val_ == o.val_;
    }

  private:
    size_t rows_, cols_;
    std::vector<size_t> row_ptr_;
    std::vector<uint32_t> col_;
    std::vector<double> val_;
};

}  // namespace kegraph
