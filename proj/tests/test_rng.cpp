#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "glp/rng.hpp"

using namespace glp;

TEST_CASE("identical seed reproduces the stream bit-for-bit") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());
    Rng c(42), d(42);
    for (int i = 0; i < 1000; ++i) {
        REQUIRE(c.uniform() == d.uniform());
        REQUIRE(c.normal() == d.normal());
    }
}

TEST_CASE("different seeds give different streams") {
    Rng a(1), b(2);
    int same = 0;
    for (int i = 0; i < 64; ++i) same += a.next_u64() == b.next_u64();
    CHECK(same == 0);
}

TEST_CASE("uniform stays in [0,1) and fills the range") {
    Rng rng(5);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    CHECK(lo < 0.001);
    CHECK(hi > 0.999);
}

TEST_CASE("normal variates have the right first two moments") {
    Rng rng(9);
    const int n = 200000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sumsq += x * x;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("below is in range and roughly uniform") {
    Rng rng(13);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 70000; ++i) {
        const std::uint64_t v = rng.below(7);
        REQUIRE(v < 7);
        counts[v]++;
    }
    for (int c : counts) CHECK(std::abs(c - 10000) < 500);
    CHECK_THROWS(rng.below(0));
}

TEST_CASE("substreams are independent and leave the parent untouched") {
    Rng parent(77);
    Rng s1 = parent.substream("noise");
    Rng s2 = parent.substream("timestep");
    Rng s1_again = parent.substream("noise");
    CHECK(s1.next_u64() == s1_again.next_u64());
    Rng fresh(77);
    // Deriving substreams must not advance the parent stream.
    CHECK(parent.next_u64() == fresh.next_u64());
    Rng s1b = Rng(77).substream("noise");
    Rng s2b = Rng(77).substream("timestep");
    s1b.next_u64();
    int same = 0;
    for (int i = 0; i < 64; ++i) same += s1b.next_u64() == s2b.next_u64();
    CHECK(same == 0);
}

TEST_CASE("shuffle is a seeded permutation") {
    Rng rng(21);
    std::vector<int> v(100);
    std::iota(v.begin(), v.end(), 0);
    rng.shuffle(v);
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 100; ++i) REQUIRE(sorted[i] == i);
    std::vector<int> w(100);
    std::iota(w.begin(), w.end(), 0);
    Rng rng2(21);
    rng2.shuffle(w);
    CHECK(v == w);
    CHECK(v != sorted);  // astronomically unlikely to be identity
}

TEST_CASE("normal_matrix applies the requested spread") {
    Rng rng(31);
    Matrix m = rng.normal_matrix(100, 100, 0.01);
    REQUIRE(m.rows == 100);
    double sumsq = 0.0;
    for (double x : m.data) sumsq += x * x;
    const double std_est = std::sqrt(sumsq / m.size());
    CHECK(std::abs(std_est - 0.01) < 0.001);
}
