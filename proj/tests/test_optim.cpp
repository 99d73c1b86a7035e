#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "glp/optim.hpp"

using namespace glp;

TEST_CASE("first update with unit gradient moves the parameter by about lr") {
    Matrix w(1, 1);
    w.data = {1.0};
    Matrix g(1, 1);
    g.data = {1.0};
    AdamWState state;
    std::vector<Matrix*> params{&w};
    adamw_step(params, {g}, state, 0.1);
    // bias-corrected m-hat = v-hat = 1, so the step is lr/(1 + eps)
    CHECK(std::abs((1.0 - w.data[0]) - 0.1) < 1e-8);
    CHECK(w.data[0] < 1.0);
    CHECK(state.step == 1);
}

TEST_CASE("lr=0 leaves parameters fully unchanged") {
    Matrix w(2, 3, 0.5);
    Matrix g(2, 3, 1.25);
    AdamWState state;
    state.cfg.weight_decay = 0.1;  // decay is scaled by lr, so it is inert too
    std::vector<Matrix*> params{&w};
    adamw_step(params, {g}, state, 0.0);
    for (double v : w.data) REQUIRE(v == 0.5);
}

TEST_CASE("zero gradients with zero weight decay leave parameters unchanged") {
    Matrix w(3, 2, -0.75);
    Matrix g(3, 2, 0.0);
    AdamWState state;
    std::vector<Matrix*> params{&w};
    adamw_step(params, {g}, state, 0.01);
    adamw_step(params, {g}, state, 0.01);
    for (double v : w.data) REQUIRE(v == -0.75);
    CHECK(state.step == 2);
}

TEST_CASE("weight decay shrinks parameters multiplicatively") {
    Matrix w(1, 1);
    w.data = {2.0};
    Matrix g(1, 1, 0.0);
    AdamWState state;
    state.cfg.weight_decay = 0.5;
    std::vector<Matrix*> params{&w};
    adamw_step(params, {g}, state, 0.1);
    CHECK(std::abs(w.data[0] - 2.0 * (1.0 - 0.1 * 0.5)) < 1e-15);
}

TEST_CASE("adamw rejects mismatched shapes") {
    Matrix w(2, 2);
    Matrix g(2, 3);
    AdamWState state;
    std::vector<Matrix*> params{&w};
    CHECK_THROWS(adamw_step(params, {g}, state, 0.1));
}

TEST_CASE("cosine schedule with warmup hits its anchor points") {
    const std::uint64_t total = 10000;
    const double base = 5e-5;
    const double ratio = 0.1;  // warmup ends exactly at step 1000
    CHECK(cosine_warmup_lr(0, total, base, ratio) == 0.0);
    CHECK(std::abs(cosine_warmup_lr(1000, total, base, ratio) - base) < 1e-12 * base);
    CHECK(std::abs(cosine_warmup_lr(total, total, base, ratio)) < 1e-20);
    // midpoint of the decay span: cosine at half period
    CHECK(std::abs(cosine_warmup_lr(5500, total, base, ratio) - 0.5 * base) < 1e-12 * base);
}

TEST_CASE("cosine schedule is continuous at the warmup boundary") {
    const std::uint64_t total = 10000;
    const double base = 1.0;
    const double ratio = 0.1;
    const double at = cosine_warmup_lr(1000, total, base, ratio);
    const double before = cosine_warmup_lr(999, total, base, ratio);
    const double after = cosine_warmup_lr(1001, total, base, ratio);
    CHECK(std::abs(at - base) < 1e-12);
    CHECK(std::abs(before - base) < 2e-3);
    CHECK(std::abs(after - base) < 2e-3);
}

TEST_CASE("cosine schedule validates its inputs") {
    CHECK_THROWS(cosine_warmup_lr(0, 0, 1.0, 0.1));
    CHECK_THROWS(cosine_warmup_lr(0, 10, 1.0, 0.0));
    CHECK_THROWS(cosine_warmup_lr(0, 10, 1.0, 1.0));
    CHECK_THROWS(cosine_warmup_lr(11, 10, 1.0, 0.1));
}

TEST_CASE("grad_check on a quadratic is exact to rounding") {
    Matrix x(1, 1);
    x.data = {3.0};
    std::vector<Matrix*> params{&x};
    auto loss = [&]() { return x.data[0] * x.data[0]; };
    auto analytic = [&]() {
        Matrix g(1, 1);
        g.data = {2.0 * x.data[0]};
        return std::vector<Matrix>{g};
    };
    const double err = grad_check(loss, analytic, params, 1e-5, {{0, 0}});
    CHECK(err <= 1e-6);
}

TEST_CASE("grad_check rejects a non-finite objective") {
    Matrix x(1, 1);
    x.data = {0.0};
    std::vector<Matrix*> params{&x};
    auto loss = [&]() { return std::log(x.data[0]); };  // -inf at 0
    auto analytic = [&]() { return std::vector<Matrix>{Matrix(1, 1)}; };
    CHECK_THROWS_WITH(grad_check(loss, analytic, params, 1e-5, {{0, 0}}),
                      "non-finite objective");
}

TEST_CASE("random_probes lands inside parameter tensors") {
    Matrix a(2, 3), b(4, 1);
    std::vector<Matrix*> params{&a, &b};
    Rng rng(3);
    auto probes = random_probes(params, 50, rng);
    REQUIRE(probes.size() == 50);
    for (auto [pi, flat] : probes) {
        REQUIRE(pi < 2);
        REQUIRE(flat < params[pi]->size());
    }
}
