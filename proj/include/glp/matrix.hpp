#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "glp/check.hpp"

namespace glp {

/// Dense row-major matrix of doubles. The one value type passed between
/// modules; a batch of n activations of dimension d is an n x d Matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }
    std::span<const double> row_span(std::size_t i) const { return {row(i), cols}; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

inline bool all_finite(const Matrix& m) {
    for (double v : m.data)
        if (!std::isfinite(v)) return false;
    return true;
}

/// C = beta*C + alpha * op(A) * op(B), op = transpose when ta/tb set.
/// Loop orders chosen per case so the inner loop streams contiguously.
inline void gemm(Matrix& c, const Matrix& a, bool ta, const Matrix& b, bool tb,
                 double alpha = 1.0, double beta = 0.0) {
    const std::size_t m = ta ? a.cols : a.rows;
    const std::size_t k = ta ? a.rows : a.cols;
    const std::size_t kb = tb ? b.cols : b.rows;
    const std::size_t n = tb ? b.rows : b.cols;
    GLP_REQUIRE(k == kb, "gemm: inner dimensions mismatch");
    GLP_REQUIRE(c.rows == m && c.cols == n, "gemm: output shape mismatch");

    if (beta == 0.0)
        c.fill(0.0);
    else if (beta != 1.0)
        for (double& v : c.data) v *= beta;

    if (!ta && !tb) {
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = a.row(i);
            double* crow = c.row(i);
            for (std::size_t p = 0; p < k; ++p) {
                const double av = alpha * arow[p];
                const double* brow = b.row(p);
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else if (ta && !tb) {
        for (std::size_t p = 0; p < k; ++p) {
            const double* arow = a.row(p);
            const double* brow = b.row(p);
            for (std::size_t i = 0; i < m; ++i) {
                const double av = alpha * arow[i];
                double* crow = c.row(i);
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else if (!ta && tb) {
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = a.row(i);
            double* crow = c.row(i);
            for (std::size_t j = 0; j < n; ++j) {
                const double* brow = b.row(j);
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
                crow[j] += alpha * acc;
            }
        }
    } else {
        for (std::size_t i = 0; i < m; ++i) {
            double* crow = c.row(i);
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += a(p, i) * b(j, p);
                crow[j] += alpha * acc;
            }
        }
    }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows, b.cols);
    gemm(c, a, false, b, false);
    return c;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    GLP_REQUIRE(a.same_shape(b), "add: shape mismatch");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data[i] += b.data[i];
    return c;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
    GLP_REQUIRE(a.same_shape(b), "sub: shape mismatch");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data[i] -= b.data[i];
    return c;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
    GLP_REQUIRE(a.same_shape(b), "hadamard: shape mismatch");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data[i] *= b.data[i];
    return c;
}

inline Matrix scale(const Matrix& a, double s) {
    Matrix c = a;
    for (double& v : c.data) v *= s;
    return c;
}

inline void axpy(Matrix& y, double alpha, const Matrix& x) {
    GLP_REQUIRE(y.same_shape(x), "axpy: shape mismatch");
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += alpha * x.data[i];
}

inline double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (double v : m.data) s += v * v;
    return std::sqrt(s);
}

inline double dot(const Matrix& a, const Matrix& b) {
    GLP_REQUIRE(a.same_shape(b), "dot: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    GLP_REQUIRE(a.same_shape(b), "max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace glp
