#pragma once

#include <cassert>
#include <cstddef>
#include <string>
#include <vector>

namespace latlab {

// Dense row-major matrix of doubles. Rows index sequence steps, columns
// channels. All numerics in this project are 64-bit.
class Tensor {
public:
    Tensor() = default;
    Tensor(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {
        assert(rows >= 0 && cols >= 0);
    }
    Tensor(int rows, int cols, std::vector<double> values)
        : rows_(rows), cols_(cols), data_(std::move(values)) {
        assert(data_.size() == static_cast<std::size_t>(rows) * cols);
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(int r, int c) {
        assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
        return data_[static_cast<std::size_t>(r) * cols_ + c];
    }
    double at(int r, int c) const {
        assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
        return data_[static_cast<std::size_t>(r) * cols_ + c];
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* row_ptr(int r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
    const double* row_ptr(int r) const {
        return data_.data() + static_cast<std::size_t>(r) * cols_;
    }

    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    std::string shape_str() const {
        return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
    }

    bool all_finite() const;
    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor row(int r) const;
    void set_row(int r, const Tensor& src);

    bool operator==(const Tensor& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

// Throws ShapeError naming both shapes when a and b differ.
void require_same_shape(const Tensor& a, const Tensor& b, const std::string& where);

// c = a * b, a is (m,k), b is (k,n).
Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T, a is (m,k), b is (n,k).
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// a^T * b, a is (k,m), b is (k,n).
Tensor matmul_tn(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);

// out += s * a, shapes must match.
void axpy(Tensor& out, double s, const Tensor& a);

Tensor hadamard(const Tensor& a, const Tensor& b);

double max_abs_diff(const Tensor& a, const Tensor& b);

// Gaussian elimination with partial pivoting; a must be square.
double log_abs_det(Tensor a);
Tensor matrix_inverse(Tensor a);

}  // namespace latlab
