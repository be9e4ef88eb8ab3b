#include <cmath>
#include <vector>

#include "doctest.h"
#include "mfc/rng.hpp"
#include "mfc/tensor.hpp"

using namespace mfc;
using namespace mfc::num;

namespace {

Tensor random_tensor(const std::vector<int>& shape, Rng& rng, bool rg = false) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.uniform(-1.5, 1.5);
    if (shape.empty()) return Tensor::scalar(v[0], rg);
    if (shape.size() == 1) return Tensor::vector(v, rg);
    return Tensor::matrix(shape[0], shape[1], v, rg);
}

Tensor random_positive(const std::vector<int>& shape, Rng& rng, bool rg = false) {
    Tensor t = random_tensor(shape, rng, false);
    std::vector<double> v = t.value();
    for (auto& x : v) x = 0.3 + std::abs(x);
    if (shape.empty()) return Tensor::scalar(v[0], rg);
    if (shape.size() == 1) return Tensor::vector(v, rg);
    return Tensor::matrix(shape[0], shape[1], v, rg);
}

// Weighted scalar wrap, so every output entry gets a distinct sensitivity.
Tensor weigh(const Tensor& y, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> w(static_cast<size_t>(y.numel()));
    for (auto& x : w) x = rng.uniform(-1.0, 1.0);
    Tensor wt = y.rank() == 2 ? Tensor::matrix(y.rows(), y.cols(), w)
               : y.rank() == 1 ? Tensor::vector(w)
                               : Tensor::scalar(w[0]);
    return sum(mul(y, wt));
}

}  // namespace

TEST_CASE("forward op hand values") {
    Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
    Tensor b = Tensor::matrix(2, 1, {1, 1});
    Tensor c = matmul(a, b);
    CHECK(c.rows() == 2);
    CHECK(c.cols() == 1);
    CHECK(c.at(0, 0) == doctest::Approx(3.0));
    CHECK(c.at(1, 0) == doctest::Approx(7.0));

    // mean pool of a constant sequence returns that constant
    Tensor seq = Tensor::matrix(5, 3, std::vector<double>(15, 2.5));
    Tensor pooled = mean_pool_time(seq);
    REQUIRE(pooled.shape() == std::vector<int>{3});
    for (int i = 0; i < 3; ++i) CHECK(pooled.at(i) == doctest::Approx(2.5));

    Tensor sm = softmax(Tensor::vector({0, 0, 0}));
    for (int i = 0; i < 3; ++i) CHECK(sm.at(i) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("forward ops are pure and bit-identical on repeat") {
    Rng rng(7);
    Tensor x = random_tensor({4, 5}, rng);
    Tensor w = random_tensor({5, 3}, rng);
    Tensor y1 = tanh_op(matmul(x, w));
    Tensor y2 = tanh_op(matmul(x, w));
    REQUIRE(y1.numel() == y2.numel());
    for (int64_t i = 0; i < y1.numel(); ++i) {
        CHECK(y1.value()[static_cast<size_t>(i)] == y2.value()[static_cast<size_t>(i)]);
    }
}

TEST_CASE("backward hand values: linear and quadratic") {
    {
        Tape tape;
        Tensor x = Tensor::vector({1, 2, 3}, true);
        Tensor loss = sum(x);
        backward(loss);
        for (int i = 0; i < 3; ++i) CHECK(x.grad()[static_cast<size_t>(i)] == doctest::Approx(1.0));
    }
    {
        Tape tape;
        Tensor x = Tensor::vector({1, 2}, true);
        Tensor loss = dot(x, x);
        backward(loss);
        CHECK(x.grad()[0] == doctest::Approx(2.0));
        CHECK(x.grad()[1] == doctest::Approx(4.0));
    }
}

TEST_CASE("backward accumulates when a node is reused") {
    Tape tape;
    Tensor x = Tensor::vector({0.5, -0.25}, true);
    Tensor y = add(mul(x, x), x);  // y_i = x_i^2 + x_i
    backward(sum(y));
    CHECK(x.grad()[0] == doctest::Approx(2 * 0.5 + 1));
    CHECK(x.grad()[1] == doctest::Approx(2 * -0.25 + 1));
}

TEST_CASE("gradient accumulation is linear across independent graphs") {
    Rng rng(11);
    std::vector<double> xv(6);
    for (auto& v : xv) v = rng.uniform(-1, 1);

    auto grad_of = [&](bool f_only, bool g_only) {
        Tape tape;
        Tensor x = Tensor::vector(xv, true);
        Tensor loss;
        Tensor f = mse(x, Tensor::vector(std::vector<double>(6, 0.25)));
        Tensor g = sum(tanh_op(x));
        if (f_only) loss = f;
        else if (g_only) loss = g;
        else loss = add(f, g);
        backward(loss);
        return x.grad();
    };
    auto gf = grad_of(true, false);
    auto gg = grad_of(false, true);
    auto gsum = grad_of(false, false);
    for (size_t i = 0; i < 6; ++i) CHECK(gsum[i] == doctest::Approx(gf[i] + gg[i]).epsilon(1e-12));
}

TEST_CASE("error contracts") {
    Tensor a = Tensor::matrix(2, 3, std::vector<double>(6, 1.0));
    Tensor b = Tensor::matrix(4, 1, std::vector<double>(4, 1.0));
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), ContractViolation);
    CHECK_THROWS_AS(add(a, b), ContractViolation);

    {
        Tape tape;
        Tensor x = Tensor::vector({1, 2}, true);
        Tensor y = mul(x, x);  // non-scalar
        CHECK_THROWS_AS(backward(y), ContractViolation);
    }
    {
        Tape tape;
        Tensor x = Tensor::vector({1, 2}, true);
        Tensor loss = sum(mul(x, x));
        backward(loss);
        CHECK_THROWS_AS(backward(loss), ContractViolation);  // second replay without re-forward
    }
    {
        // loss not produced under any record
        Tensor x = Tensor::scalar(1.0, true);
        CHECK_THROWS_AS(backward(x), ContractViolation);
    }
}

TEST_CASE("grad_check: exact quadratic passes, broken gradient fails") {
    Rng rng(3);
    Tensor x = random_tensor({6}, rng);
    auto sum_sq = [](const Tensor& t) { return dot(t, t); };
    auto rep = grad_check(sum_sq, x, 1e-5, 1e-4);
    CHECK(rep.pass);
    CHECK(rep.max_relative_error < 1e-4);

    // a deliberately wrong "gradient" via a mismatched function pair is not
    // expressible here; instead check the non-finite diagnostic path
    auto bad = [](const Tensor& t) { return log_op(sum(t)); };
    Tensor neg = Tensor::vector({-1.0, -2.0});
    auto rep2 = grad_check(bad, neg, 1e-5, 1e-4);
    CHECK_FALSE(rep2.pass);
    CHECK_FALSE(rep2.finite);
}

TEST_CASE("cosine gradient matches finite differences") {
    Rng rng(5);
    Tensor y = random_tensor({8}, rng);
    auto f = [&](const Tensor& x) { return sub(Tensor::scalar(1.0), cosine(x, y)); };
    Tensor x0 = random_tensor({8}, rng);
    auto rep = grad_check(f, x0, 1e-5, 1e-4);
    CHECK(rep.pass);
}

TEST_CASE("cosine rejects zero norms") {
    Tensor z = Tensor::vector({0, 0, 0});
    Tensor y = Tensor::vector({1, 0, 0});
    CHECK_THROWS_AS(cosine(z, y), NumericalError);
}

TEST_CASE("per-op gradients match central finite differences") {
    Rng rng(2024);
    const double rtol = 1e-4;

    auto check = [&](const char* name, const std::function<Tensor(const Tensor&)>& f,
                     const Tensor& x0) {
        auto rep = grad_check(f, x0, 1e-5, rtol);
        INFO(name, ": max rel err ", rep.max_relative_error, " ", rep.message);
        CHECK(rep.pass);
    };

    {
        Tensor b = random_tensor({4, 3}, rng);
        check("add", [&](const Tensor& x) { return weigh(add(x, b), 1); }, random_tensor({4, 3}, rng));
        check("add.rowvec", [&](const Tensor& x) { return weigh(add(b, x), 2); }, random_tensor({3}, rng));
        check("add.scalar", [&](const Tensor& x) { return weigh(add(b, x), 3); }, random_tensor({}, rng));
        check("sub", [&](const Tensor& x) { return weigh(sub(b, x), 4); }, random_tensor({4, 3}, rng));
        check("mul", [&](const Tensor& x) { return weigh(mul(x, b), 5); }, random_tensor({4, 3}, rng));
        check("mul.rowvec", [&](const Tensor& x) { return weigh(mul(b, x), 6); }, random_tensor({3}, rng));
        check("divide", [&](const Tensor& x) { return weigh(divide(b, x), 7); },
              random_positive({4, 3}, rng));
        check("divide.scalar", [&](const Tensor& x) { return weigh(divide(b, x), 8); },
              random_positive({}, rng));
        check("scale", [&](const Tensor& x) { return weigh(scale(x, -1.7), 9); },
              random_tensor({4, 3}, rng));
        check("add_const", [&](const Tensor& x) { return weigh(add_const(x, 0.3), 10); },
              random_tensor({4, 3}, rng));
    }
    {
        Tensor m = random_tensor({5, 4}, rng);
        Tensor k = random_tensor({4, 3}, rng);
        check("matmul.lhs", [&](const Tensor& x) { return weigh(matmul(x, k), 11); },
              random_tensor({5, 4}, rng));
        check("matmul.rhs", [&](const Tensor& x) { return weigh(matmul(m, x), 12); },
              random_tensor({4, 3}, rng));
        check("matmul.vec_lhs", [&](const Tensor& x) { return weigh(matmul(x, k), 13); },
              random_tensor({4}, rng));
        check("matmul.vec_rhs", [&](const Tensor& x) { return weigh(matmul(m, x), 14); },
              random_tensor({4}, rng));
    }
    check("tanh", [&](const Tensor& x) { return weigh(tanh_op(x), 15); }, random_tensor({4, 3}, rng));
    check("relu", [&](const Tensor& x) { return weigh(relu(x), 16); }, random_tensor({4, 3}, rng));
    check("sigmoid", [&](const Tensor& x) { return weigh(sigmoid(x), 17); },
          random_tensor({4, 3}, rng));
    check("log", [&](const Tensor& x) { return weigh(log_op(x), 18); }, random_positive({4, 3}, rng));
    check("exp", [&](const Tensor& x) { return weigh(exp_op(x), 19); }, random_tensor({4, 3}, rng));
    check("sqrt", [&](const Tensor& x) { return weigh(sqrt_op(x), 20); },
          random_positive({4, 3}, rng));
    check("softmax.vec", [&](const Tensor& x) { return weigh(softmax(x), 21); },
          random_tensor({6}, rng));
    check("softmax.rows", [&](const Tensor& x) { return weigh(softmax(x), 22); },
          random_tensor({4, 5}, rng));
    check("sum", [&](const Tensor& x) { return sum(x); }, random_tensor({4, 3}, rng));
    check("mean", [&](const Tensor& x) { return mean(x); }, random_tensor({4, 3}, rng));
    {
        Tensor ref = random_tensor({4, 3}, rng);
        check("mse", [&](const Tensor& x) { return mse(x, ref); }, random_tensor({4, 3}, rng));
        check("mse.rhs", [&](const Tensor& x) { return mse(ref, x); }, random_tensor({4, 3}, rng));
        Tensor v = random_tensor({5}, rng);
        check("dot", [&](const Tensor& x) { return dot(x, v); }, random_tensor({5}, rng));
    }
    check("mean_pool_time", [&](const Tensor& x) { return weigh(mean_pool_time(x), 23); },
          random_tensor({7, 4}, rng));
    check("downsample_time", [&](const Tensor& x) { return weigh(downsample_time(x, 3), 24); },
          random_tensor({8, 4}, rng));  // 8 rows / factor 3 -> ragged final window
    check("repeat_rows", [&](const Tensor& x) { return weigh(repeat_rows(x, 3, 8), 25); },
          random_tensor({3, 4}, rng));
    check("broadcast_row", [&](const Tensor& x) { return weigh(broadcast_row(x, 6), 26); },
          random_tensor({4}, rng));
    check("shift_rows.fwd", [&](const Tensor& x) { return weigh(shift_rows(x, 1), 27); },
          random_tensor({5, 3}, rng));
    check("shift_rows.back", [&](const Tensor& x) { return weigh(shift_rows(x, -2), 28); },
          random_tensor({5, 3}, rng));
    {
        Tensor other = random_tensor({5, 2}, rng);
        check("concat_cols",
              [&](const Tensor& x) { return weigh(concat_cols({x, other}), 29); },
              random_tensor({5, 3}, rng));
        Tensor ov = random_tensor({3}, rng);
        check("concat_vec", [&](const Tensor& x) { return weigh(concat_vec({ov, x}), 30); },
              random_tensor({4}, rng));
    }
    check("select_row", [&](const Tensor& x) { return weigh(select_row(x, 2), 31); },
          random_tensor({5, 3}, rng));
    check("select_index", [&](const Tensor& x) { return select_index(x, 3); },
          random_tensor({6}, rng));
    {
        Tensor r0 = random_tensor({4}, rng);
        Tensor r2 = random_tensor({4}, rng);
        check("stack_rows",
              [&](const Tensor& x) { return weigh(stack_rows({r0, x, r2}), 32); },
              random_tensor({4}, rng));
    }
    check("cross_entropy", [&](const Tensor& x) { return cross_entropy(x, 2); },
          random_tensor({6}, rng));
    check("row_cross_entropy",
          [&](const Tensor& x) { return row_cross_entropy(x, {0, 3, 1, 2}); },
          random_tensor({4, 5}, rng));
}

TEST_CASE("cross entropy agrees with softmax-log") {
    Rng rng(9);
    Tensor logits = random_tensor({7}, rng);
    Tensor p = softmax(logits);
    double expected = -std::log(p.at(4));
    CHECK(cross_entropy(logits, 4).item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("downsample_time is strided mean pooling") {
    // rows 0..5, factor 2 -> means of row pairs
    Tensor x = Tensor::matrix(6, 1, {0, 1, 2, 3, 4, 5});
    Tensor d = downsample_time(x, 2);
    REQUIRE(d.rows() == 3);
    CHECK(d.at(0, 0) == doctest::Approx(0.5));
    CHECK(d.at(1, 0) == doctest::Approx(2.5));
    CHECK(d.at(2, 0) == doctest::Approx(4.5));

    // ragged tail window
    Tensor y = Tensor::matrix(5, 1, {0, 1, 2, 3, 4});
    Tensor d2 = downsample_time(y, 2);
    REQUIRE(d2.rows() == 3);
    CHECK(d2.at(2, 0) == doctest::Approx(4.0));
}
