#include <catch_amalgamated.hpp>

#include "kegraph/optim.hpp"
#include "kegraph/sparse.hpp"
#include "kegraph/tape.hpp"
#include "test_util.hpp"

using namespace kegraph;
using testutil::GradCheck;
using testutil::random_tensor;

TEST_CASE("identity matmul returns the other operand") {
    Tape tape;
    Tensor id(3, 3);
    for (size_t i = 0; i < 3; ++i) id.at(i, i) = 1.0;
    Rng rng(1);
    const Tensor m = random_tensor(3, 4, rng);
    Var out = tape.matmul(tape.input(id), tape.input(m));
    REQUIRE(tape.value(out).bit_equal(m));
}

TEST_CASE("softmax of equal scores is uniform") {
    Tape tape;
    Var out = tape.softmax_rows(tape.input(Tensor::from_rows({{0.0, 0.0}})));
    CHECK(tape.value(out).at(0, 0) == Catch::Approx(0.5).margin(1e-15));
    CHECK(tape.value(out).at(0, 1) == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("sparse aggregation with uniform weights is the neighbor mean") {
    // Node 0 aggregates nodes 1..3 with weight 1/3 each.
    SparseRowMatrix w = SparseRowMatrix::from_triplets(
        4, 4, {{0, 1, 1.0}, {0, 2, 1.0}, {0, 3, 1.0}}).row_normalized();
    Tape tape;
    const Tensor h = Tensor::from_rows({{0, 0}, {3, 6}, {6, 9}, {0, 3}});
    Var out = tape.sparse_agg(&w, tape.input(h));
    CHECK(tape.value(out).at(0, 0) == Catch::Approx(3.0).margin(1e-12));
    CHECK(tape.value(out).at(0, 1) == Catch::Approx(6.0).margin(1e-12));
    CHECK(tape.value(out).at(1, 0) == 0.0);
}

TEST_CASE("backward of x squared") {
    Tape tape;
    Var x = tape.input(Tensor::scalar(3.0), true);
    Var loss = tape.mul(x, x);
    tape.backward(loss);
    CHECK(tape.grad(x).at(0, 0) == Catch::Approx(6.0).margin(1e-12));
}

TEST_CASE("sigmoid gradient at zero weight is a quarter of the input") {
    Tape tape;
    Var w = tape.input(Tensor::scalar(0.0), true);
    Var x = tape.input(Tensor::scalar(1.7));
    Var loss = tape.sigmoid(tape.mul(w, x));
    tape.backward(loss);
    CHECK(tape.grad(w).at(0, 0) == Catch::Approx(0.25 * 1.7).margin(1e-12));
}

TEST_CASE("loss must be scalar for backward") {
    Tape tape;
    Var x = tape.input(Tensor(2, 2), true);
    REQUIRE_THROWS_AS(tape.backward(x), ContractError);
}

TEST_CASE("shape mismatch raises dimension errors") {
    Tape tape;
    Var a = tape.input(Tensor(2, 3));
    Var b = tape.input(Tensor(3, 3));
    REQUIRE_THROWS_AS(tape.add(a, b), DimensionError);
    REQUIRE_NOTHROW(tape.matmul(a, b));
    REQUIRE_THROWS_AS(tape.matmul(a, a), DimensionError);
}

TEST_CASE("non-finite results raise") {
    Tape tape;
    Var x = tape.input(Tensor::scalar(-1.0));
    REQUIRE_THROWS_AS(tape.log_op(x), NumericError);
    REQUIRE_THROWS_AS(tape.input(Tensor::scalar(std::nan(""))), NumericError);
}

TEST_CASE("tape replay reproduces recorded values bit-exactly") {
    Rng rng(7);
    Tape tape;
    Var a = tape.input(random_tensor(4, 3, rng), true);
    Var b = tape.input(random_tensor(3, 5, rng), true);
    Var c = tape.sigmoid(tape.matmul(a, b));
    Var d = tape.mean_rows(tape.tanh_act(c));
    Var loss = tape.sum_all(d);
    (void)loss;
    REQUIRE(tape.replay_matches());
}

TEST_CASE("three layer composite matches finite differences") {
    Rng rng(42);
    const Tensor x = random_tensor(5, 4, rng);
    const Tensor w1 = random_tensor(4, 6, rng, 0.7);
    const Tensor w2 = random_tensor(6, 3, rng, 0.7);
    const Tensor w3 = random_tensor(3, 1, rng, 0.7);

    auto eval = [&x](const std::vector<Tensor>& params) {
        Tape tape;
        Var h = tape.input(x);
        Var v1 = tape.input(params[0], true);
        Var v2 = tape.input(params[1], true);
        Var v3 = tape.input(params[2], true);
        Var z = tape.tanh_act(tape.matmul(tape.sigmoid(tape.matmul(h, v1)), v2));
        return tape.value(tape.sum_all(tape.matmul(z, v3))).scalar_value();
    };

    Tape tape;
    Var h = tape.input(x);
    Var v1 = tape.input(w1, true);
    Var v2 = tape.input(w2, true);
    Var v3 = tape.input(w3, true);
    Var z = tape.tanh_act(tape.matmul(tape.sigmoid(tape.matmul(h, v1)), v2));
    Var loss = tape.sum_all(tape.matmul(z, v3));
    tape.backward(loss);

    GradCheck gc;
    REQUIRE(gc.run(eval, {w1, w2, w3}, {tape.grad(v1), tape.grad(v2), tape.grad(v3)}));
}

// Every primitive against central finite differences, driven through a random
// linear functional so all output entries matter.
TEST_CASE("primitive gradient suite") {
    Rng rng(2024);
    SparseRowMatrix w = SparseRowMatrix::from_triplets(
        4, 4,
        {{0, 1, 2.0}, {0, 2, 1.0}, {1, 3, 5.0}, {2, 0, 1.0}, {2, 3, 1.0}, {3, 1, 4.0}})
        .row_normalized();

    struct Case {
        const char* name;
        size_t n_inputs;
        std::vector<std::pair<size_t, size_t>> shapes;
        std::function<Var(Tape&, const std::vector<Var>&)> build;
    };
    const std::vector<Case> cases = {
        {"matmul", 2, {{3, 4}, {4, 2}},
         [](Tape& t, const std::vector<Var>& v) { return t.matmul(v[0], v[1]); }},
        {"add", 2, {{3, 3}, {3, 3}},
         [](Tape& t, const std::vector<Var>& v) { return t.add(v[0], v[1]); }},
        {"sub", 2, {{3, 3}, {3, 3}},
         [](Tape& t, const std::vector<Var>& v) { return t.sub(v[0], v[1]); }},
        {"mul", 2, {{3, 3}, {3, 3}},
         [](Tape& t, const std::vector<Var>& v) { return t.mul(v[0], v[1]); }},
        {"div", 2, {{2, 3}, {2, 3}},
         [](Tape& t, const std::vector<Var>& v) {
             return t.div(v[0], t.add_const(t.sigmoid(v[1]), 0.5));
         }},
        {"add_row_bias", 2, {{4, 3}, {1, 3}},
         [](Tape& t, const std::vector<Var>& v) { return t.add_row_bias(v[0], v[1]); }},
        {"scale", 1, {{3, 2}},
         [](Tape& t, const std::vector<Var>& v) { return t.scale(v[0], -1.7); }},
        {"add_const", 1, {{3, 2}},
         [](Tape& t, const std::vector<Var>& v) { return t.add_const(v[0], 0.3); }},
        {"relu", 1, {{4, 4}},
         [](Tape& t, const std::vector<Var>& v) { return t.relu(v[0]); }},
        {"tanh", 1, {{3, 3}},
         [](Tape& t, const std::vector<Var>& v) { return t.tanh_act(v[0]); }},
        {"sigmoid", 1, {{3, 3}},
         [](Tape& t, const std::vector<Var>& v) { return t.sigmoid(v[0]); }},
        {"log", 1, {{3, 3}},
         [](Tape& t, const std::vector<Var>& v) {
             return t.log_op(t.add_const(t.sigmoid(v[0]), 0.1));
         }},
        {"clamp_min", 1, {{3, 3}},
         [](Tape& t, const std::vector<Var>& v) { return t.clamp_min(v[0], 0.2); }},
        {"clamp", 1, {{3, 3}},
         [](Tape& t, const std::vector<Var>& v) { return t.clamp(v[0], -0.4, 0.4); }},
        {"softmax_rows", 1, {{3, 4}},
         [](Tape& t, const std::vector<Var>& v) { return t.softmax_rows(v[0]); }},
        {"mean_rows", 1, {{4, 3}},
         [](Tape& t, const std::vector<Var>& v) { return t.mean_rows(v[0]); }},
        {"row_sum", 1, {{4, 3}},
         [](Tape& t, const std::vector<Var>& v) { return t.row_sum(v[0]); }},
        {"concat_cols", 2, {{3, 2}, {3, 4}},
         [](Tape& t, const std::vector<Var>& v) { return t.concat_cols(v[0], v[1]); }},
        {"select_col", 1, {{3, 4}},
         [](Tape& t, const std::vector<Var>& v) { return t.select_col(v[0], 2); }},
        {"select_rows", 1, {{5, 3}},
         [](Tape& t, const std::vector<Var>& v) {
             return t.select_rows(v[0], {4, 0, 0, 2});
         }},
        {"scale_by", 2, {{3, 3}, {1, 1}},
         [](Tape& t, const std::vector<Var>& v) { return t.scale_by(v[0], v[1]); }},
        {"sparse_agg", 1, {{4, 3}},
         [&w](Tape& t, const std::vector<Var>& v) { return t.sparse_agg(&w, v[0]); }},
        {"sum_all", 1, {{3, 3}},
         [](Tape& t, const std::vector<Var>& v) { return t.sum_all(v[0]); }},
    };

    for (const Case& c : cases) {
        INFO(c.name);
        std::vector<Tensor> inputs;
        for (auto [r, cl] : c.shapes) inputs.push_back(random_tensor(r, cl, rng));
        Tensor probe;  // fixed random functional over the op output
        {
            Tape tape;
            std::vector<Var> vars;
            for (const Tensor& in : inputs) vars.push_back(tape.input(in, true));
            Var out = c.build(tape, vars);
            probe = random_tensor(tape.value(out).rows(), tape.value(out).cols(), rng);
        }
        auto eval = [&](const std::vector<Tensor>& ins) {
            Tape tape;
            std::vector<Var> vars;
            for (const Tensor& in : ins) vars.push_back(tape.input(in, true));
            Var out = c.build(tape, vars);
            return tape.value(tape.sum_all(tape.mul(out, tape.input(probe)))).scalar_value();
        };
        Tape tape;
        std::vector<Var> vars;
        for (const Tensor& in : inputs) vars.push_back(tape.input(in, true));
        Var out = c.build(tape, vars);
        tape.backward(tape.sum_all(tape.mul(out, tape.input(probe))));
        std::vector<Tensor> grads;
        for (Var v : vars) grads.push_back(tape.grad(v));
        GradCheck gc;
        CHECK(gc.run(eval, inputs, grads));
    }
}

TEST_CASE("forward and backward are deterministic across runs") {
    auto run = [] {
        Rng rng(99);
        Tape tape;
        SparseRowMatrix w = SparseRowMatrix::from_triplets(3, 3, {{0, 1, 1.0}, {1, 2, 2.0}})
                                .row_normalized();
        Var a = tape.input(random_tensor(3, 3, rng), true);
        Var b = tape.input(random_tensor(3, 3, rng), true);
        Var loss = tape.sum_all(tape.sigmoid(tape.matmul(tape.sparse_agg(&w, a), b)));
        tape.backward(loss);
        return std::make_pair(tape.value(loss), tape.grad(a));
    };
    auto [l1, g1] = run();
    auto [l2, g2] = run();
    REQUIRE(l1.bit_equal(l2));
    REQUIRE(g1.bit_equal(g2));
}

TEST_CASE("sgd step") {
    ParamStore params;
    params.add("w", Tensor::scalar(0.0));
    SgdOptimizer opt(0.1);
    opt.step(params, {Tensor::scalar(1.0)});
    CHECK(params.value("w").at(0, 0) == Catch::Approx(-0.1).margin(1e-15));
}

TEST_CASE("zero gradient leaves parameters unchanged") {
    ParamStore params;
    params.add("w", Tensor::scalar(1.25));
    AdamOptimizer adam(0.001);
    adam.step(params, {Tensor::scalar(0.0)});
    CHECK(params.value("w").at(0, 0) == 1.25);
    SgdOptimizer sgd(0.5);
    sgd.step(params, {Tensor::scalar(0.0)});
    CHECK(params.value("w").at(0, 0) == 1.25);
}

TEST_CASE("adam first step magnitude is close to the learning rate") {
    // First step: mhat = g, vhat = g^2, update = lr * g / (|g| + eps).
    for (double g : {1e-4, 0.5, 7.0, -3.0}) {
        ParamStore params;
        params.add("w", Tensor::scalar(0.0));
        AdamOptimizer adam(0.01);
        adam.step(params, {Tensor::scalar(g)});
        CHECK(std::abs(params.value("w").at(0, 0)) ==
              Catch::Approx(0.01).epsilon(1e-3));
        CHECK(std::signbit(params.value("w").at(0, 0)) == !std::signbit(g));
    }
}

TEST_CASE("optimizer rejects non-finite gradients") {
    ParamStore params;
    params.add("w", Tensor::scalar(0.0));
    AdamOptimizer adam(0.01);
    Tensor g = Tensor::scalar(std::numeric_limits<double>::infinity());
    REQUIRE_THROWS_AS(adam.step(params, {g}), NumericError);
}

TEST_CASE("row normalization") {
    SECTION("basic") {
        auto m = SparseRowMatrix::from_triplets(2, 2, {{0, 0, 2.0}, {0, 1, 2.0}, {1, 1, 4.0}})
                     .row_normalized();
        CHECK(m.value_at(0, 0) == 0.5);
        CHECK(m.value_at(0, 1) == 0.5);
        CHECK(m.value_at(1, 1) == 1.0);
    }
    SECTION("single entry row maps to one for any positive count") {
        for (double k : {1.0, 3.0, 1000.0}) {
            auto m = SparseRowMatrix::from_triplets(1, 4, {{0, 2, k}}).row_normalized();
            CHECK(m.value_at(0, 2) == 1.0);
        }
    }
    SECTION("all-zero rows stay all-zero") {
        auto m = SparseRowMatrix::from_triplets(3, 3, {{1, 0, 5.0}}).row_normalized();
        CHECK(m.row_sum(0) == 0.0);
        CHECK(m.row_sum(2) == 0.0);
        CHECK(m.row_sum(1) == 1.0);
    }
    SECTION("negative entries are a domain error") {
        auto m = SparseRowMatrix::from_triplets(1, 2, {{0, 0, -1.0}});
        REQUIRE_THROWS_AS(m.row_normalized(), DomainError);
    }
}
