#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "glp/rng.hpp"
#include "glp/tape.hpp"

using namespace glp;

namespace {

// Max over coordinates of |analytic - central difference|. `eval` rebuilds
// the scalar objective from a candidate value of the probed leaf.
double fd_error(const Matrix& x0, const std::function<double(const Matrix&)>& eval,
                const Matrix& analytic, double pert = 1e-6) {
    REQUIRE(analytic.same_shape(x0));
    double worst = 0.0;
    Matrix x = x0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x.data[i];
        x.data[i] = saved + pert;
        const double up = eval(x);
        x.data[i] = saved - pert;
        const double down = eval(x);
        x.data[i] = saved;
        const double fd = (up - down) / (2.0 * pert);
        worst = std::max(worst, std::abs(analytic.data[i] - fd));
    }
    return worst;
}

Matrix grad_of(const std::function<Tape::Var(Tape&, Tape::Var)>& build, const Matrix& x0) {
    Tape tape;
    Tape::Var x = tape.leaf(x0, true);
    Tape::Var loss = build(tape, x);
    tape.backward(loss);
    return tape.grad(x);
}

double eval_of(const std::function<Tape::Var(Tape&, Tape::Var)>& build, const Matrix& x0) {
    Tape tape;
    Tape::Var x = tape.leaf(x0, false);
    return tape.value(build(tape, x)).data[0];
}

void check_op(const std::function<Tape::Var(Tape&, Tape::Var)>& build, const Matrix& x0,
              double tol = 1e-7) {
    const Matrix g = grad_of(build, x0);
    const double err =
        fd_error(x0, [&](const Matrix& x) { return eval_of(build, x); }, g);
    CHECK(err < tol);
}

}  // namespace

TEST_CASE("gradients of every primitive match central differences") {
    Rng rng(17);
    const Matrix a = rng.normal_matrix(3, 4);
    const Matrix b = rng.normal_matrix(4, 2);
    const Matrix c = rng.normal_matrix(3, 2);
    const Matrix d34 = rng.normal_matrix(3, 4);
    const Matrix rowv = rng.normal_matrix(1, 4);
    const Matrix gain = rng.normal_matrix(1, 4);
    const Matrix target = rng.normal_matrix(3, 2);

    SECTION("matmul, left argument") {
        check_op([&](Tape& t, Tape::Var x) {
            return t.mse(t.matmul(x, t.leaf(b)), t.leaf(target));
        }, a);
    }
    SECTION("matmul, right argument") {
        check_op([&](Tape& t, Tape::Var x) {
            return t.mse(t.matmul(t.leaf(a), x), t.leaf(target));
        }, b);
    }
    SECTION("add and sub") {
        check_op([&](Tape& t, Tape::Var x) {
            return t.mse(t.add(x, t.leaf(d34)), t.leaf(a));
        }, d34);
        check_op([&](Tape& t, Tape::Var x) {
            return t.mse(t.sub(t.leaf(a), x), t.leaf(d34));
        }, a);
    }
    SECTION("hadamard, both arguments via shared leaf") {
        check_op([&](Tape& t, Tape::Var x) {
            return t.mse(t.hadamard(x, x), t.leaf(d34));
        }, a);
    }
    SECTION("scale and add_scalar") {
        check_op([&](Tape& t, Tape::Var x) {
            return t.mse(t.add_scalar(t.scale(x, -1.7), 0.3), t.leaf(d34));
        }, a);
    }
    SECTION("add_rowvec, both arguments") {
        check_op([&](Tape& t, Tape::Var x) {
            return t.mse(t.add_rowvec(x, t.leaf(rowv)), t.leaf(d34));
        }, a);
        check_op([&](Tape& t, Tape::Var x) {
            return t.mse(t.add_rowvec(t.leaf(a), x), t.leaf(d34));
        }, rowv);
    }
    SECTION("silu") {
        check_op([&](Tape& t, Tape::Var x) {
            return t.mse(t.silu(x), t.leaf(d34));
        }, a);
    }
    SECTION("rmsnorm input and gain") {
        check_op([&](Tape& t, Tape::Var x) {
            return t.mse(t.rmsnorm(x, t.leaf(gain)), t.leaf(d34));
        }, a, 1e-6);
        check_op([&](Tape& t, Tape::Var x) {
            return t.mse(t.rmsnorm(t.leaf(a), x), t.leaf(d34));
        }, gain, 1e-6);
    }
    SECTION("mse target argument") {
        check_op([&](Tape& t, Tape::Var x) {
            return t.mse(t.leaf(c), x);
        }, target);
    }
}

TEST_CASE("diamond-shaped reuse accumulates gradients") {
    Matrix x0(1, 1);
    x0.data = {3.0};
    auto build = [](Tape& t, Tape::Var x) {
        Tape::Var y = t.add(x, x);  // y = 2x, reused leaf
        return t.mse(y, t.leaf(Matrix(1, 1)));
    };
    const Matrix g = grad_of(build, x0);
    CHECK(std::abs(g.data[0] - 24.0) < 1e-9);  // d/dx (2x)^2 = 8x
}

TEST_CASE("embed_windows gathers rows and scatter-adds gradients") {
    Matrix table(3, 2);
    table.data = {1, 2, 3, 4, 5, 6};
    std::vector<std::vector<int>> windows{{0, 2}, {2, 2}};
    Tape tape;
    Tape::Var tb = tape.leaf(table, true);
    Tape::Var out = tape.embed_windows(tb, windows);
    const Matrix& ov = tape.value(out);
    REQUIRE(ov.rows == 2);
    REQUIRE(ov.cols == 4);
    CHECK(ov.data == std::vector<double>{1, 2, 5, 6, 5, 6, 5, 6});

    Tape::Var loss = tape.mse(out, tape.leaf(Matrix(2, 4)));
    tape.backward(loss);
    check_op([&](Tape& t, Tape::Var x) {
        return t.mse(t.embed_windows(x, windows), t.leaf(Matrix(2, 4)));
    }, table);

    CHECK_THROWS(tape.embed_windows(tb, {{0, 5}}));   // id out of range
    CHECK_THROWS(tape.embed_windows(tb, {{0}, {0, 1}}));  // ragged
}

TEST_CASE("topk_rows keeps the k largest with low-index tie-break") {
    Matrix x(2, 4);
    x.data = {3, 1, 2, 0,
              1, 1, 1, 1};
    Tape tape;
    Tape::Var xv = tape.leaf(x, true);
    Tape::Var out = tape.topk_rows(xv, 2);
    const Matrix& ov = tape.value(out);
    CHECK(ov.data == std::vector<double>{3, 0, 2, 0,
                                         1, 1, 0, 0});
    Tape::Var loss = tape.mse(out, tape.leaf(Matrix(2, 4)));
    tape.backward(loss);
    const Matrix& g = tape.grad(xv);
    CHECK(g(0, 1) == 0.0);
    CHECK(g(0, 3) == 0.0);
    CHECK(g(1, 2) == 0.0);
    CHECK(g(1, 3) == 0.0);
    CHECK(g(0, 0) != 0.0);
    CHECK_THROWS(tape.topk_rows(xv, 0));
    CHECK_THROWS(tape.topk_rows(xv, 5));
}

TEST_CASE("mean_nll equals a direct softmax cross-entropy computation") {
    Rng rng(23);
    Matrix logits = rng.normal_matrix(5, 7);
    std::vector<int> targets{0, 3, 6, 2, 2};
    Tape tape;
    Tape::Var lv = tape.leaf(logits, true);
    Tape::Var loss = tape.mean_nll(lv, targets);

    double expect = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
        double denom = 0.0;
        for (std::size_t j = 0; j < 7; ++j) denom += std::exp(logits(i, j));
        expect += -std::log(std::exp(logits(i, targets[i])) / denom);
    }
    expect /= 5.0;
    CHECK(std::abs(tape.value(loss).data[0] - expect) < 1e-12);

    check_op([&](Tape& t, Tape::Var x) { return t.mean_nll(x, targets); }, logits);
}

TEST_CASE("backward requires a scalar loss") {
    Tape tape;
    Tape::Var x = tape.leaf(Matrix(2, 2, 1.0), true);
    CHECK_THROWS(tape.backward(x));
}
