#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "glp/linalg.hpp"
#include "glp/rng.hpp"

using namespace glp;

namespace {

Matrix diag(std::initializer_list<double> vals) {
    Matrix m(vals.size(), vals.size());
    std::size_t i = 0;
    for (double v : vals) m(i, i) = v, ++i;
    return m;
}

// Random orthonormal basis: eigenvectors of a random symmetric matrix.
Matrix random_orthonormal(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    Matrix s(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) s(i, j) = s(j, i) = rng.normal();
    return jacobi_eigh(s).eigenvectors;
}

}  // namespace

TEST_CASE("jacobi_eigh solves a hand-checked 2x2") {
    Matrix s(2, 2);
    s.data = {2, 1, 1, 2};
    EighResult e = jacobi_eigh(s);
    CHECK(std::abs(e.eigenvalues[0] - 3.0) < 1e-12);
    CHECK(std::abs(e.eigenvalues[1] - 1.0) < 1e-12);
    // eigenvector for 3 is (1,1)/sqrt(2) up to sign
    CHECK(std::abs(std::abs(e.eigenvectors(0, 0)) - std::sqrt(0.5)) < 1e-12);
    CHECK(std::abs(e.eigenvectors(0, 0) - e.eigenvectors(1, 0)) < 1e-12);
}

TEST_CASE("jacobi_eigh returns a descending spectrum with orthonormal vectors") {
    Rng rng(101);
    for (int trial = 0; trial < 3; ++trial) {
        const std::size_t n = 8;
        Matrix s(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i; j < n; ++j) s(i, j) = s(j, i) = rng.normal();
        EighResult e = jacobi_eigh(s);
        for (std::size_t j = 0; j + 1 < n; ++j)
            REQUIRE(e.eigenvalues[j] >= e.eigenvalues[j + 1]);
        Matrix vtv(n, n);
        gemm(vtv, e.eigenvectors, true, e.eigenvectors, false);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                REQUIRE(std::abs(vtv(i, j) - (i == j ? 1.0 : 0.0)) < 1e-10);
        // S v_j = lambda_j v_j
        Matrix sv(n, n);
        gemm(sv, s, false, e.eigenvectors, false);
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < n; ++i)
                REQUIRE(std::abs(sv(i, j) - e.eigenvalues[j] * e.eigenvectors(i, j)) < 1e-8);
    }
}

TEST_CASE("jacobi_eigh rejects bad input") {
    Matrix rect(2, 3);
    CHECK_THROWS(jacobi_eigh(rect));
    Matrix asym(2, 2);
    asym.data = {1, 2, 0, 1};
    CHECK_THROWS(jacobi_eigh(asym));
}

TEST_CASE("psd_sqrt on diagonal and identity matrices") {
    Matrix id = diag({1, 1, 1});
    CHECK(max_abs_diff(psd_sqrt(id), id) < 1e-12);
    Matrix s = diag({4, 9});
    Matrix r = psd_sqrt(s);
    CHECK(std::abs(r(0, 0) - 2.0) < 1e-12);
    CHECK(std::abs(r(1, 1) - 3.0) < 1e-12);
    CHECK(std::abs(r(0, 1)) < 1e-12);
}

TEST_CASE("psd_sqrt squares back to a planted spectrum") {
    const std::size_t n = 3;
    Matrix q = random_orthonormal(n, 55);
    Matrix lam = diag({1, 2, 3});
    Matrix ql = matmul(q, lam);
    Matrix s(n, n);
    gemm(s, ql, false, q, true);
    for (std::size_t i = 0; i < n; ++i)  // kill asymmetry round-off
        for (std::size_t j = i + 1; j < n; ++j) s(i, j) = s(j, i) = 0.5 * (s(i, j) + s(j, i));
    Matrix half = psd_sqrt(s);
    Matrix sq = matmul(half, half);
    CHECK(frobenius_norm(sub(sq, s)) <= 1e-8);
}

TEST_CASE("psd_sqrt clamps negative eigenvalues") {
    Matrix s = diag({4, -1});
    Matrix half = psd_sqrt(s);
    EighResult e = jacobi_eigh(half);
    for (double lam : e.eigenvalues) REQUIRE(lam >= -1e-10);
    Matrix clamped = diag({4, 0});
    CHECK(frobenius_norm(sub(matmul(half, half), clamped)) <= 1e-6 * 2);
}

TEST_CASE("trace_psd_sqrt matches the materialized root") {
    Matrix q = random_orthonormal(4, 91);
    Matrix lam = diag({0.5, 1.5, 2.5, 7.0});
    Matrix ql = matmul(q, lam);
    Matrix s(4, 4);
    gemm(s, ql, false, q, true);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = i + 1; j < 4; ++j) s(i, j) = s(j, i) = 0.5 * (s(i, j) + s(j, i));
    Matrix half = psd_sqrt(s);
    double tr = 0.0;
    for (std::size_t i = 0; i < 4; ++i) tr += half(i, i);
    CHECK(std::abs(trace_psd_sqrt(s) - tr) < 1e-10);
}
