#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "glp/matrix.hpp"

namespace glp {

struct EighResult {
    std::vector<double> eigenvalues;  // descending
    Matrix eigenvectors;              // column j pairs with eigenvalues[j]
};

inline double offdiag_frobenius(const Matrix& s) {
    double acc = 0.0;
    for (std::size_t i = 0; i < s.rows; ++i)
        for (std::size_t j = 0; j < s.cols; ++j)
            if (i != j) acc += s(i, j) * s(i, j);
    return std::sqrt(acc);
}

inline bool is_symmetric(const Matrix& s, double tol = 1e-8) {
    if (s.rows != s.cols) return false;
    for (std::size_t i = 0; i < s.rows; ++i)
        for (std::size_t j = i + 1; j < s.cols; ++j)
            if (std::abs(s(i, j) - s(j, i)) > tol) return false;
    return true;
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations. Converges when
/// the off-diagonal Frobenius norm drops below 1e-12 relative to the input
/// scale. Adequate for the m <= few hundred matrices used here.
inline EighResult jacobi_eigh(const Matrix& s_in, double tol_sym = 1e-8) {
    GLP_REQUIRE(s_in.rows == s_in.cols, "jacobi_eigh: matrix must be square");
    GLP_REQUIRE(is_symmetric(s_in, tol_sym), "jacobi_eigh: matrix not symmetric");
    const std::size_t m = s_in.rows;

    Matrix a = s_in;
    Matrix v(m, m);
    for (std::size_t i = 0; i < m; ++i) v(i, i) = 1.0;

    const double target = 1e-12 * std::max(1.0, frobenius_norm(s_in));
    const int max_sweeps = 100;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        if (offdiag_frobenius(a) < target) break;
        for (std::size_t p = 0; p + 1 < m; ++p) {
            for (std::size_t q = p + 1; q < m; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double app = a(p, p), aqq = a(q, q);
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = t * c;
                for (std::size_t k = 0; k < m; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - sn * akq;
                    a(k, q) = sn * akp + c * akq;
                }
                for (std::size_t k = 0; k < m; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - sn * aqk;
                    a(q, k) = sn * apk + c * aqk;
                }
                for (std::size_t k = 0; k < m; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - sn * vkq;
                    v(k, q) = sn * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });

    EighResult res;
    res.eigenvalues.resize(m);
    res.eigenvectors = Matrix(m, m);
    for (std::size_t j = 0; j < m; ++j) {
        res.eigenvalues[j] = a(order[j], order[j]);
        for (std::size_t i = 0; i < m; ++i)
            res.eigenvectors(i, j) = v(i, order[j]);
    }
    return res;
}

/// Symmetric PSD square root: eigendecompose, clamp negative eigenvalues
/// to zero, rebuild with sqrt of the spectrum.
inline Matrix psd_sqrt(const Matrix& s) {
    GLP_REQUIRE(s.rows == s.cols, "psd_sqrt: matrix must be square");
    GLP_REQUIRE(is_symmetric(s, 1e-8), "psd_sqrt: matrix not symmetric");
    const EighResult eig = jacobi_eigh(s);
    const std::size_t m = s.rows;
    Matrix half(m, m);
    for (std::size_t j = 0; j < m; ++j) {
        const double lam = std::max(0.0, eig.eigenvalues[j]);
        const double r = std::sqrt(lam);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t k = 0; k < m; ++k)
                half(i, k) += r * eig.eigenvectors(i, j) * eig.eigenvectors(k, j);
    }
    // Symmetrize away rotation round-off.
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = i + 1; k < m; ++k) {
            const double v = 0.5 * (half(i, k) + half(k, i));
            half(i, k) = v;
            half(k, i) = v;
        }
    return half;
}

/// Trace of the PSD square root of a symmetric matrix (sum of sqrt of
/// clamped eigenvalues); cheaper than materializing the root.
inline double trace_psd_sqrt(const Matrix& s) {
    const EighResult eig = jacobi_eigh(s);
    double tr = 0.0;
    for (double lam : eig.eigenvalues) tr += std::sqrt(std::max(0.0, lam));
    return tr;
}

}  // namespace glp
