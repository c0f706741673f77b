#include "lissm/error.hpp"
#include "lissm/numerics.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace lissm;

TEST_CASE("DenseArray rejects a buffer that disagrees with its shape") {
    CHECK_THROWS_AS(DenseArray(Shape{2, 3}, std::vector<double>(5)), DimensionError);
    const DenseArray a(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    CHECK(a.at(1, 2) == 6.0);
    CHECK(a.reshaped(Shape{3, 2}).at(2, 0) == 5.0);
    CHECK_THROWS_AS(a.reshaped(Shape{4, 2}), DimensionError);
}

TEST_CASE("matmul examples") {
    const DenseArray m = DenseArray::matrix({{2.5, -1.0}, {0.25, 7.0}});
    CHECK(matmul(DenseArray::matrix({{1, 0}, {0, 1}}), m) == m);
    CHECK(matmul(DenseArray::matrix({{1, 2}, {3, 4}}), DenseArray::matrix({{1}, {1}})) ==
          DenseArray::matrix({{3}, {7}}));

    const DenseArray a(Shape{2, 3}), b(Shape{2, 3});
    try {
        matmul(a, b);
        FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[2x3]", msg.find("[2x3]") + 1) != std::string::npos);
    }
}

TEST_CASE("matmul is associative on random chains") {
    Rng rng(0);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t m = 1 + rng.below(8), k = 1 + rng.below(8), l = 1 + rng.below(8), n = 1 + rng.below(8);
        const DenseArray a = random_uniform({m, k}, -1, 1, rng);
        const DenseArray b = random_uniform({k, l}, -1, 1, rng);
        const DenseArray c = random_uniform({l, n}, -1, 1, rng);
        const DenseArray left = matmul(matmul(a, b), c);
        const DenseArray right = matmul(a, matmul(b, c));
        for (std::size_t i = 0; i < left.size(); ++i) {
            CHECK(std::abs(left[i] - right[i]) <= 1e-10 * std::max(1.0, std::abs(right[i])));
        }
    }
}

TEST_CASE("transpose and matmul_backward") {
    const DenseArray a = DenseArray::matrix({{1, 2, 3}, {4, 5, 6}});
    CHECK(transpose(a) == DenseArray::matrix({{1, 4}, {2, 5}, {3, 6}}));

    Rng rng(3);
    const DenseArray x = random_uniform({3, 4}, -1, 1, rng);
    const DenseArray w = random_uniform({4, 2}, -1, 1, rng);
    const DenseArray dc = random_uniform({3, 2}, -1, 1, rng);
    auto loss_x = [&](const DenseArray& t) {
        const DenseArray c = matmul(t, w);
        double s = 0;
        for (std::size_t i = 0; i < c.size(); ++i) s += c[i] * dc[i];
        return s;
    };
    auto loss_w = [&](const DenseArray& t) {
        const DenseArray c = matmul(x, t);
        double s = 0;
        for (std::size_t i = 0; i < c.size(); ++i) s += c[i] * dc[i];
        return s;
    };
    const MatmulGrads g = matmul_backward(x, w, dc);
    CHECK(grad_check(loss_x, x, g.da, 1e-6) < 1e-7);
    CHECK(grad_check(loss_w, w, g.db, 1e-6) < 1e-7);
}

TEST_CASE("softplus examples and bounds") {
    CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(std::abs(softplus(50.0) - (50.0 + std::log1p(std::exp(-50.0)))) < 1e-12);
    const double tiny = softplus(-50.0);
    CHECK(tiny > 0.0);
    CHECK(std::isfinite(tiny));
    CHECK(tiny == doctest::Approx(1.9287498479639178e-22).epsilon(1e-12));
    CHECK(std::isfinite(softplus(1e308)));

    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const double x = rng.uniform(-700, 700);
        const double s = softplus(x);
        CHECK(s > 0.0);
        CHECK(s - std::max(x, 0.0) >= 0.0);
        CHECK(s - std::max(x, 0.0) <= std::log(2.0) + 1e-15);
    }
}

TEST_CASE("softplus_backward is the logistic function") {
    Rng rng(2);
    const DenseArray x = random_uniform({5, 3}, -4, 4, rng);
    const DenseArray up = random_uniform({5, 3}, -1, 1, rng);
    auto f = [&](const DenseArray& t) {
        const DenseArray s = softplus(t);
        double acc = 0;
        for (std::size_t i = 0; i < s.size(); ++i) acc += s[i] * up[i];
        return acc;
    };
    CHECK(grad_check(f, x, softplus_backward(x, up), 1e-6) < 1e-7);
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(sigmoid(-800.0) >= 0.0);
}

TEST_CASE("grad_check examples") {
    auto square = [](const DenseArray& t) { return t[0] * t[0]; };
    CHECK(grad_check(square, DenseArray::scalar(3.0), DenseArray::scalar(6.0), 1e-5) < 1e-10);

    // L1 of a constant model: d/dc mean|c - y_i| = mean sign(c - y_i).
    const std::vector<double> y{0.3, -1.2, 2.5, 0.9};
    auto l1 = [&](const DenseArray& t) {
        double acc = 0;
        for (double v : y) acc += std::abs(t[0] - v);
        return acc / static_cast<double>(y.size());
    };
    for (double c : {-3.0, 0.0, 0.5, 1.7, 4.0}) {
        double sign_sum = 0;
        for (double v : y) sign_sum += c > v ? 1.0 : -1.0;
        CHECK(grad_check(l1, DenseArray::scalar(c), DenseArray::scalar(sign_sum / 4.0), 1e-6) < 1e-6);
    }

    auto bad = [](const DenseArray& t) { return t[0] > 0 ? std::numeric_limits<double>::quiet_NaN() : 0.0; };
    CHECK_THROWS_AS(grad_check(bad, DenseArray::scalar(1.0), DenseArray::scalar(0.0), 1e-6), EvaluationError);
}

TEST_CASE("DualArray accumulates additively") {
    DualArray d(DenseArray::matrix({{1, 2}}));
    d.accumulate(DenseArray::matrix({{0.5, 1}}));
    d.accumulate(DenseArray::matrix({{0.5, -3}}));
    CHECK(d.grad == DenseArray::matrix({{1, -2}}));
    CHECK_THROWS_AS(d.accumulate(DenseArray(Shape{2, 1})), DimensionError);
    d.zero_grad();
    CHECK(d.grad == DenseArray(Shape{1, 2}));
}

TEST_CASE("Rng is reproducible and in range") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());
    Rng r(7);
    double mean = 0, sq = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const double z = r.normal();
        mean += z;
        sq += z * z;
        CHECK(r.below(5) < 5u);
    }
    CHECK(std::abs(mean / n) < 0.05);
    CHECK(std::abs(sq / n - 1.0) < 0.05);
}
