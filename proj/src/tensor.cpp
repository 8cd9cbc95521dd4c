#include "latlab/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "latlab/errors.hpp"

namespace latlab {

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor Tensor::row(int r) const {
    Tensor out(1, cols_);
    std::copy(row_ptr(r), row_ptr(r) + cols_, out.data());
    return out;
}

void Tensor::set_row(int r, const Tensor& src) {
    assert(src.rows() == 1 && src.cols() == cols_);
    std::copy(src.data(), src.data() + cols_, row_ptr(r));
}

void require_same_shape(const Tensor& a, const Tensor& b, const std::string& where) {
    if (!a.same_shape(b)) {
        throw ShapeError(where + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimension mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c(m, n, 0.0);
    for (int i = 0; i < m; ++i) {
        const double* arow = a.row_ptr(i);
        double* crow = c.row_ptr(i);
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b.row_ptr(p);
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: inner dimension mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
    }
    const int m = a.rows(), k = a.cols(), n = b.rows();
    Tensor c(m, n, 0.0);
    for (int i = 0; i < m; ++i) {
        const double* arow = a.row_ptr(i);
        double* crow = c.row_ptr(i);
        for (int j = 0; j < n; ++j) {
            const double* brow = b.row_ptr(j);
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] = s;
        }
    }
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows()) {
        throw ShapeError("matmul_tn: inner dimension mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
    }
    const int m = a.cols(), k = a.rows(), n = b.cols();
    Tensor c(m, n, 0.0);
    for (int p = 0; p < k; ++p) {
        const double* arow = a.row_ptr(p);
        const double* brow = b.row_ptr(p);
        for (int i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c.row_ptr(i);
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor transpose(const Tensor& a) {
    Tensor t(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
    return t;
}

void axpy(Tensor& out, double s, const Tensor& a) {
    require_same_shape(out, a, "axpy");
    double* o = out.data();
    const double* p = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) o[i] += s * p[i];
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "hadamard");
    Tensor c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] * b.data()[i];
    return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
    return m;
}

double log_abs_det(Tensor a) {
    if (a.rows() != a.cols()) throw ShapeError("log_abs_det: matrix not square " + a.shape_str());
    const int n = a.rows();
    double acc = 0.0;
    for (int k = 0; k < n; ++k) {
        int piv = k;
        for (int i = k + 1; i < n; ++i) {
            if (std::fabs(a.at(i, k)) > std::fabs(a.at(piv, k))) piv = i;
        }
        if (a.at(piv, k) == 0.0) throw NumericError("log_abs_det", "singular matrix");
        if (piv != k) {
            for (int j = 0; j < n; ++j) std::swap(a.at(k, j), a.at(piv, j));
        }
        acc += std::log(std::fabs(a.at(k, k)));
        for (int i = k + 1; i < n; ++i) {
            const double f = a.at(i, k) / a.at(k, k);
            for (int j = k; j < n; ++j) a.at(i, j) -= f * a.at(k, j);
        }
    }
    return acc;
}

Tensor matrix_inverse(Tensor a) {
    if (a.rows() != a.cols()) {
        throw ShapeError("matrix_inverse: matrix not square " + a.shape_str());
    }
    const int n = a.rows();
    Tensor inv(n, n, 0.0);
    for (int i = 0; i < n; ++i) inv.at(i, i) = 1.0;
    for (int k = 0; k < n; ++k) {
        int piv = k;
        for (int i = k + 1; i < n; ++i) {
            if (std::fabs(a.at(i, k)) > std::fabs(a.at(piv, k))) piv = i;
        }
        if (a.at(piv, k) == 0.0) throw NumericError("matrix_inverse", "singular matrix");
        if (piv != k) {
            for (int j = 0; j < n; ++j) {
                std::swap(a.at(k, j), a.at(piv, j));
                std::swap(inv.at(k, j), inv.at(piv, j));
            }
        }
        const double d = a.at(k, k);
        for (int j = 0; j < n; ++j) {
            a.at(k, j) /= d;
            inv.at(k, j) /= d;
        }
        for (int i = 0; i < n; ++i) {
            if (i == k) continue;
            const double f = a.at(i, k);
            if (f == 0.0) continue;
            for (int j = 0; j < n; ++j) {
                a.at(i, j) -= f * a.at(k, j);
                inv.at(i, j) -= f * inv.at(k, j);
            }
        }
    }
    return inv;
}

}  // namespace latlab
