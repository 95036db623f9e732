#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace lhmm {

// Dense row-major matrix of doubles. Small sizes only (D <= 12 for copula
// work, K <= ~500 for covariance matrices), so no BLAS backing.
class Matrix {
public:
    Matrix() : rows_(0), cols_(0) {}
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    bool operator==(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
    }

private:
    std::size_t rows_, cols_;
    std::vector<double> data_;
};

inline std::vector<double> matvec(const Matrix& a, const std::vector<double>& x) {
    if (a.cols() != x.size()) throw std::invalid_argument("matvec: dimension mismatch");
    std::vector<double> y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

inline double dot(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("dot: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

// Quadratic form x' A x for square A.
inline double quad_form(const Matrix& a, const std::vector<double>& x) {
    return dot(x, matvec(a, x));
}

// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
// Throws std::runtime_error if the matrix is not positive definite.
inline Matrix cholesky_lower(const Matrix& a) {
    if (a.rows() != a.cols()) throw std::invalid_argument("cholesky: matrix not square");
    const std::size_t n = a.rows();
    Matrix l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = 0.0;
            for (std::size_t k = 0; k < j; ++k) sum += l(i, k) * l(j, k);
            if (i == j) {
                double diag = a(i, i) - sum;
                if (diag <= 0.0) throw std::runtime_error("cholesky: matrix not positive definite");
                l(i, j) = std::sqrt(diag);
            } else {
                l(i, j) = (a(i, j) - sum) / l(j, j);
            }
        }
    }
    return l;
}

struct EigenSym {
    std::vector<double> values;   // unordered
    Matrix vectors;               // column i is the eigenvector for values[i]
};

// Cyclic Jacobi eigendecomposition for symmetric matrices. Adequate for the
// D x D correlation matrices handled here.
inline EigenSym eigen_symmetric(const Matrix& a, int max_sweeps = 100) {
    if (a.rows() != a.cols()) throw std::invalid_argument("eigen_symmetric: matrix not square");
    const std::size_t n = a.rows();
    Matrix d = a;
    Matrix v = Matrix::identity(n);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += d(p, q) * d(p, q);
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(d(p, q)) < 1e-30) continue;
                double theta = (d(q, q) - d(p, p)) / (2.0 * d(p, q));
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    double dkp = d(k, p), dkq = d(k, q);
                    d(k, p) = c * dkp - s * dkq;
                    d(k, q) = s * dkp + c * dkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double dpk = d(p, k), dqk = d(q, k);
                    d(p, k) = c * dpk - s * dqk;
                    d(q, k) = s * dpk + c * dqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    EigenSym out;
    out.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.values[i] = d(i, i);
    out.vectors = v;
    return out;
}

// Solve a small dense linear system A x = b by Gaussian elimination with
// partial pivoting. Throws on a (numerically) singular matrix.
inline std::vector<double> solve_linear(Matrix a, std::vector<double> b) {
    if (a.rows() != a.cols() || a.rows() != b.size())
        throw std::invalid_argument("solve_linear: dimension mismatch");
    const std::size_t n = a.rows();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
        if (std::abs(a(piv, col)) < 1e-14) throw std::runtime_error("solve_linear: singular matrix");
        if (piv != col) {
            for (std::size_t c = 0; c < n; ++c) std::swap(a(piv, c), a(col, c));
            std::swap(b[piv], b[col]);
        }
        for (std::size_t r = col + 1; r < n; ++r) {
            double f = a(r, col) / a(col, col);
            for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t j = i + 1; j < n; ++j) s -= a(i, j) * x[j];
        x[i] = s / a(i, i);
    }
    return x;
}

}  // namespace lhmm
