#include "lissm/error.hpp"
#include "lissm/ssm.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace lissm;

namespace {

struct ScanInputs {
    DenseArray a_bar, b_bar, c_seq, x;
};

// Ābar drawn from (0, 1) as any real discretization would produce.
ScanInputs random_scan(std::size_t B, std::size_t L, std::size_t D, std::size_t N, std::uint64_t seed) {
    Rng rng(seed);
    return {random_uniform({B, L, D, N}, 0.05, 0.999, rng), random_uniform({B, L, D, N}, -1, 1, rng),
            random_uniform({B, L, N}, -1, 1, rng), random_uniform({B, L, D}, -1, 1, rng)};
}

// y_t = sum_n C_t[n] sum_{s<=t} (prod_{r=s+1..t} Ābar_r[n]) B̄bar_s[n] x_s
DenseArray unrolled(const ScanInputs& s) {
    const std::size_t B = s.x.dim(0), L = s.x.dim(1), D = s.x.dim(2), N = s.c_seq.dim(2);
    DenseArray y(Shape{B, L, D});
    auto idx4 = [&](std::size_t b, std::size_t t, std::size_t d, std::size_t n) { return ((b * L + t) * D + d) * N + n; };
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < L; ++t)
            for (std::size_t d = 0; d < D; ++d) {
                double acc = 0;
                for (std::size_t n = 0; n < N; ++n) {
                    double inner = 0;
                    for (std::size_t src = 0; src <= t; ++src) {
                        double prod = 1;
                        for (std::size_t r = src + 1; r <= t; ++r) prod *= s.a_bar[idx4(b, r, d, n)];
                        inner += prod * s.b_bar[idx4(b, src, d, n)] * s.x[(b * L + src) * D + d];
                    }
                    acc += s.c_seq[(b * L + t) * N + n] * inner;
                }
                y[(b * L + t) * D + d] = acc;
            }
    return y;
}

double max_abs_diff(const DenseArray& a, const DenseArray& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double dot(const DenseArray& a, const DenseArray& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

SsmParameters jittered(std::size_t D, std::size_t N, std::uint64_t seed) {
    Rng rng(seed);
    SsmParameters p = SsmParameters::init(D, N, rng);
    for (auto* t : {&p.a_log, &p.w_b, &p.w_c, &p.w_delta, &p.bias_delta})
        for (auto& v : t->values()) v += rng.uniform(-0.3, 0.3);
    return p;
}

} // namespace

TEST_CASE("init follows the documented scheme") {
    Rng rng(0);
    const SsmParameters p = SsmParameters::init(4, 3, rng);
    const DenseArray a = p.state_matrix();
    for (std::size_t d = 0; d < 4; ++d)
        for (std::size_t n = 0; n < 3; ++n) CHECK(a.at(d, n) == doctest::Approx(-(double(n) + 1)).epsilon(1e-15));
    for (double v : p.w_delta.values()) CHECK(std::abs(v) <= 0.5);
    for (double v : p.bias_delta.values()) CHECK(v == 0.0);
    CHECK_THROWS_AS(SsmParameters::init(0, 3, rng), Error);
}

TEST_CASE("project_inputs examples") {
    const SsmParameters zero = SsmParameters::zeros(2, 3);
    Rng rng(5);
    const DenseArray x = random_uniform({1, 4, 2}, -1, 1, rng);
    const SelectiveCoefficients c = project_inputs(x, zero);
    for (double v : c.b_seq.values()) CHECK(v == 0.0);
    for (double v : c.c_seq.values()) CHECK(v == 0.0);
    for (double v : c.delta_seq.values()) CHECK(v == doctest::Approx(std::log(2.0)).epsilon(1e-15));

    SsmParameters p = jittered(2, 3, 1);
    const SelectiveCoefficients z = project_inputs(DenseArray(Shape{1, 2, 2}), p);
    for (double v : z.b_seq.values()) CHECK(v == 0.0);
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t d = 0; d < 2; ++d) CHECK(z.delta_seq[t * 2 + d] == softplus(p.bias_delta[d]));

    CHECK_THROWS_AS(project_inputs(DenseArray(Shape{1, 2, 3}), p), DimensionError);
}

TEST_CASE("project_inputs matches a straight-line reimplementation") {
    Rng rng(0);
    const SsmParameters p = SsmParameters::init(2, 2, rng);
    const DenseArray x = random_uniform({1, 3, 2}, -1, 1, rng);
    const SelectiveCoefficients c = project_inputs(x, p);
    for (std::size_t t = 0; t < 3; ++t) {
        const double x0 = x[t * 2], x1 = x[t * 2 + 1];
        for (std::size_t n = 0; n < 2; ++n) {
            CHECK(c.b_seq[t * 2 + n] == doctest::Approx(x0 * p.w_b.at(0, n) + x1 * p.w_b.at(1, n)).epsilon(1e-14));
            CHECK(c.c_seq[t * 2 + n] == doctest::Approx(x0 * p.w_c.at(0, n) + x1 * p.w_c.at(1, n)).epsilon(1e-14));
        }
        for (std::size_t d = 0; d < 2; ++d) {
            const double pre = x0 * p.w_delta.at(0, d) + x1 * p.w_delta.at(1, d) + p.bias_delta[d];
            CHECK(c.delta_seq[t * 2 + d] == doctest::Approx(std::log1p(std::exp(pre))).epsilon(1e-14));
        }
    }
}

TEST_CASE("discretize scalar examples") {
    // a_log = log(|A|)
    {
        const DenseArray a_log(Shape{1, 1}, std::vector<double>{0.0});
        const std::vector<double> b{1.0}, delta{std::log(2.0)};
        const Discretized r = discretize(a_log, b, delta);
        CHECK(r.a_bar[0] == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(r.b_bar[0] == doctest::Approx(0.5).epsilon(1e-15));
    }
    {
        const DenseArray a_log(Shape{1, 1}, std::vector<double>{std::log(2.0)});
        const std::vector<double> b{3.0}, delta{0.5};
        const Discretized r = discretize(a_log, b, delta);
        CHECK(r.a_bar[0] == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
        CHECK(r.a_bar[0] == doctest::Approx(0.3678794).epsilon(1e-7));
        CHECK(r.b_bar[0] == doctest::Approx((1.0 - std::exp(-1.0)) * 1.5).epsilon(1e-15));
        CHECK(r.b_bar[0] == doctest::Approx(0.9481808).epsilon(1e-7));
    }
    {
        // |A| <= e^2 keeps |z| <= 1e-11
        const DenseArray a_log(Shape{2, 2}, std::vector<double>{0.0, 1.0, -2.0, 2.0});
        const std::vector<double> b{2.0, -4.0}, delta{1e-12, 1e-12};
        const Discretized r = discretize(a_log, b, delta);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(std::abs(r.a_bar[i] - 1.0) < 1e-11);
            const double expect = 1e-12 * b[i % 2];
            CHECK(std::abs(r.b_bar[i] - expect) <= 1e-18);
        }
    }
}

TEST_CASE("discretize rejects non-positive delta") {
    const DenseArray a_log(Shape{2, 1});
    const std::vector<double> b{1.0};
    CHECK_THROWS_AS(discretize(a_log, b, std::vector<double>{0.1, 0.0}), DomainError);
    CHECK_THROWS_AS(discretize(a_log, b, std::vector<double>{-1.0, 0.1}), DomainError);
    CHECK_THROWS_AS(discretize(a_log, b, std::vector<double>{0.1}), DimensionError);
}

TEST_CASE("zoh gain is continuous at the series switchover") {
    for (double z : {-kZohSeriesThreshold, kZohSeriesThreshold}) {
        const double below = zoh_input_gain(std::nextafter(z, 0.0));
        const double exact = std::expm1(z) / z;
        CHECK(std::abs(below - exact) <= 1e-10 * std::abs(exact));
        CHECK(std::abs(zoh_input_gain(z) - exact) <= 1e-10 * std::abs(exact));
    }
    CHECK(zoh_input_gain(0.0) == 1.0);
    for (double z : {-3.0, -0.5, -2e-3, -5e-4, -1e-7, 0.0, 1e-6, 0.2}) {
        const double h = 1e-5 * std::max(1.0, std::abs(z));
        const double fd = (zoh_input_gain(z + h) - zoh_input_gain(z - h)) / (2 * h);
        CHECK(zoh_input_gain_derivative(z) == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("selective_scan examples") {
    SUBCASE("hand unroll D=N=1") {
        const DenseArray a(Shape{1, 2, 1, 1}, std::vector<double>{0.5, 0.5});
        const DenseArray b(Shape{1, 2, 1, 1}, std::vector<double>{1, 1});
        const DenseArray c(Shape{1, 2, 1}, std::vector<double>{1, 1});
        const DenseArray x(Shape{1, 2, 1}, std::vector<double>{1, 1});
        const DenseArray y = selective_scan(a, b, c, x);
        CHECK(y[0] == 1.0);
        CHECK(y[1] == 1.5);

        const ScanGrads g = scan_backward(a, b, c, x, DenseArray(Shape{1, 2, 1}, std::vector<double>{1, 0}));
        CHECK(g.c_seq[0] == 1.0);
        CHECK(g.c_seq[1] == 0.0);
        CHECK(g.x[0] == 1.0);
        CHECK(g.x[1] == 0.0);
    }
    SUBCASE("L = 1 has no history term") {
        ScanInputs s = random_scan(2, 1, 3, 4, 9);
        const DenseArray y = selective_scan(s.a_bar, s.b_bar, s.c_seq, s.x);
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t d = 0; d < 3; ++d) {
                double expect = 0;
                for (std::size_t n = 0; n < 4; ++n)
                    expect += s.c_seq[b * 4 + n] * s.b_bar[(b * 3 + d) * 4 + n] * s.x[b * 3 + d];
                CHECK(y[b * 3 + d] == doctest::Approx(expect).epsilon(1e-15));
            }
        CHECK(selective_scan_parallel(s.a_bar, s.b_bar, s.c_seq, s.x) == y);
    }
    SUBCASE("zero a_bar is memoryless") {
        ScanInputs s = random_scan(1, 6, 2, 3, 10);
        s.a_bar.fill(0.0);
        const DenseArray y = selective_scan(s.a_bar, s.b_bar, s.c_seq, s.x);
        for (std::size_t t = 0; t < 6; ++t)
            for (std::size_t d = 0; d < 2; ++d) {
                double expect = 0;
                for (std::size_t n = 0; n < 3; ++n)
                    expect += s.c_seq[t * 3 + n] * s.b_bar[(t * 2 + d) * 3 + n] * s.x[t * 2 + d];
                CHECK(y[t * 2 + d] == doctest::Approx(expect).epsilon(1e-14));
            }
    }
    SUBCASE("running sum") {
        const std::size_t L = 40;
        const DenseArray ones4(Shape{1, L, 1, 1}, 1.0), ones3(Shape{1, L, 1}, 1.0);
        const DenseArray y = selective_scan_parallel(ones4, ones4, ones3, ones3, 4);
        for (std::size_t t = 0; t < L; ++t) CHECK(y[t] == double(t + 1));
    }
    SUBCASE("shape mismatch") {
        ScanInputs s = random_scan(1, 4, 2, 3, 11);
        CHECK_THROWS_AS(selective_scan(s.a_bar, s.b_bar, DenseArray(Shape{1, 4, 2}), s.x), DimensionError);
        CHECK_THROWS_AS(selective_scan_parallel(s.a_bar, s.b_bar, s.c_seq, DenseArray(Shape{1, 3, 2})),
                        DimensionError);
    }
}

TEST_CASE("selective_scan equals the brute-force unroll") {
    Rng pick(0);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t L = 1 + pick.below(32), D = 1 + pick.below(4), N = 1 + pick.below(4);
        const ScanInputs s = random_scan(2, L, D, N, 100 + trial);
        CHECK(max_abs_diff(selective_scan(s.a_bar, s.b_bar, s.c_seq, s.x), unrolled(s)) < 1e-12);
    }
}

TEST_CASE("parallel scan equals sequential scan") {
    {
        const ScanInputs s = random_scan(1, 64, 2, 4, 0);
        const DenseArray seq = selective_scan(s.a_bar, s.b_bar, s.c_seq, s.x);
        CHECK(max_abs_diff(seq, selective_scan_parallel(s.a_bar, s.b_bar, s.c_seq, s.x)) < 1e-12);
    }
    for (std::size_t L : {2u, 3u, 17u, 255u, 1024u}) {
        const ScanInputs s = random_scan(2, L, 3, 4, L);
        const DenseArray seq = selective_scan(s.a_bar, s.b_bar, s.c_seq, s.x);
        const DenseArray one = selective_scan_parallel(s.a_bar, s.b_bar, s.c_seq, s.x, 1);
        const DenseArray many = selective_scan_parallel(s.a_bar, s.b_bar, s.c_seq, s.x, 5);
        CHECK(max_abs_diff(seq, one) < 1e-10);
        CHECK(one == many);
    }
}

TEST_CASE("scan_backward passes the finite-difference check") {
    const ScanInputs s = random_scan(2, 7, 3, 4, 0);
    Rng rng(1);
    const DenseArray dy = random_uniform({2, 7, 3}, -1, 1, rng);
    const ScanGrads g = scan_backward(s.a_bar, s.b_bar, s.c_seq, s.x, dy);
    auto objective = [&](int which) {
        return [&, which](const DenseArray& t) {
            ScanInputs q = s;
            DenseArray* slots[] = {&q.a_bar, &q.b_bar, &q.c_seq, &q.x};
            *slots[which] = t;
            return dot(selective_scan(q.a_bar, q.b_bar, q.c_seq, q.x), dy);
        };
    };
    CHECK(grad_check(objective(0), s.a_bar, g.a_bar, 1e-6) < 1e-5);
    CHECK(grad_check(objective(1), s.b_bar, g.b_bar, 1e-6) < 1e-5);
    CHECK(grad_check(objective(2), s.c_seq, g.c_seq, 1e-6) < 1e-5);
    CHECK(grad_check(objective(3), s.x, g.x, 1e-6) < 1e-5);

    const ScanGrads zero = scan_backward(s.a_bar, s.b_bar, s.c_seq, s.x, DenseArray(dy.shape()));
    for (const DenseArray* t : {&zero.a_bar, &zero.b_bar, &zero.c_seq, &zero.x})
        for (double v : t->values()) CHECK(v == 0.0);
}

TEST_CASE("full layer backward passes the finite-difference check") {
    const std::size_t D = 3, N = 4;
    const SsmParameters p = jittered(D, N, 0);
    Rng rng(2);
    const DenseArray x = random_uniform({2, 5, D}, -1, 1, rng);
    const DenseArray dy = random_uniform({2, 5, D}, -1, 1, rng);
    const SsmLayerGrads g = ssm_backward(x, p, dy);

    CHECK(grad_check([&](const DenseArray& t) { return dot(ssm_forward(t, p), dy); }, x, g.x, 1e-6) < 1e-5);
    const std::pair<DenseArray SsmParameters::*, const char*> fields[] = {
        {&SsmParameters::a_log, "a_log"}, {&SsmParameters::w_b, "w_b"},
        {&SsmParameters::w_c, "w_c"},     {&SsmParameters::w_delta, "w_delta"},
        {&SsmParameters::bias_delta, "bias_delta"}};
    for (const auto& [field, name] : fields) {
        auto f = [&, field = field](const DenseArray& t) {
            SsmParameters q = p;
            q.*field = t;
            return dot(ssm_forward(x, q), dy);
        };
        INFO(name);
        CHECK(grad_check(f, p.*field, g.params.*field, 1e-6) < 1e-5);
    }
}

TEST_CASE("discretized states stay bounded") {
    const SsmParameters p = jittered(4, 4, 3);
    Rng rng(4);
    const DenseArray x = random_uniform({1, 200, 4}, -1, 1, rng);
    const SelectiveCoefficients c = project_inputs(x, p);
    const Discretized dz = discretize_sequence(p.a_log, c);
    double max_a = 0, max_input = 0;
    for (std::size_t i = 0; i < dz.a_bar.size(); ++i) {
        CHECK(dz.a_bar[i] > 0.0);
        CHECK(dz.a_bar[i] < 1.0);
        max_a = std::max(max_a, dz.a_bar[i]);
        max_input = std::max(max_input, std::abs(dz.b_bar[i] * x[i / 4]));
    }
    // |y_t| <= sum_n |C_t[n]| * sup|h|
    const double h_bound = max_input / (1.0 - max_a);
    const DenseArray y = selective_scan(dz.a_bar, dz.b_bar, c.c_seq, x);
    for (std::size_t t = 0; t < 200; ++t) {
        double c_norm = 0;
        for (std::size_t n = 0; n < 4; ++n) c_norm += std::abs(c.c_seq[t * 4 + n]);
        for (std::size_t d = 0; d < 4; ++d) CHECK(std::abs(y[t * 4 + d]) <= c_norm * h_bound + 1e-12);
    }
}
