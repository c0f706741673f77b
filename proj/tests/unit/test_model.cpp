#include "lissm/error.hpp"
#include "lissm/model.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>

using namespace lissm;

namespace {

DenseArray random_input(const Shape& shape, std::uint64_t seed) {
    Rng rng(seed);
    return random_uniform(shape, -1.0, 1.0, rng);
}

// Perturb every tensor away from the deterministic init so that a_log,
// bias_delta and b_embed all carry nontrivial values.
ModelParameters jittered_params(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParameters p = ModelParameters::init(cfg, seed);
    Rng rng(seed + 100);
    for (auto& [name, t] : p.tensors())
        for (auto& v : t->values()) v += rng.uniform(-0.3, 0.3);
    return p;
}

// Targets shifted far from the predictions so no residual sits on the L1 kink.
DenseArray offset_targets(const DenseArray& pred, double offset, std::uint64_t seed) {
    Rng rng(seed);
    DenseArray t(pred.shape());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = pred[i] + (rng.uniform() < 0.5 ? -offset : offset);
    return t;
}

double max_tensor_grad_error(const ModelConfig& cfg, const ModelParameters& p, const DenseArray& x,
                             const DenseArray& target, double h) {
    const LossAndGrads lg = backward(cfg, p, x, target);
    double worst = 0.0;
    const auto names = p.tensors();
    const auto grads = lg.grads.tensors();
    for (std::size_t k = 0; k < names.size(); ++k) {
        auto objective = [&](const DenseArray& theta) {
            ModelParameters q = p;
            *q.tensors()[k].second = theta;
            return l1_loss(forward(cfg, q, x), target);
        };
        const double err = grad_check(objective, *names[k].second, *grads[k].second, h);
        INFO("tensor " << names[k].first << " rel err " << err);
        CHECK(err < 1e-5);
        worst = std::max(worst, err);
    }
    return worst;
}

} // namespace

TEST_CASE("parameter count matches the analytic formula") {
    for (std::size_t layers : {1u, 2u, 3u}) {
        const ModelConfig cfg{5, 6, 7, layers, HeadMode::PerStep};
        const std::size_t F = 5, D = 6, N = 7;
        CHECK(ModelParameters::init(cfg, 0).parameter_count() ==
              F * D + D + layers * (2 * D * N + D * D + D + D * N) + D + 1);
        CHECK(cfg.parameter_count() == ModelParameters::zeros(cfg).parameter_count());
    }
}

TEST_CASE("zero head weight gives the head bias everywhere") {
    const ModelConfig cfg{3, 4, 2, 1, HeadMode::PerStep};
    ModelParameters p = ModelParameters::init(cfg, 0);
    p.w_head.fill(0.0);
    p.b_head[0] = 1.25;
    const DenseArray y = forward(cfg, p, random_input({2, 5, 3}, 1));
    for (double v : y.values()) CHECK(v == 1.25);
}

TEST_CASE("zero input with zero embedding bias propagates to the head bias") {
    const ModelConfig cfg{3, 4, 2, 2, HeadMode::PerStep};
    ModelParameters p = ModelParameters::init(cfg, 0);
    p.b_embed.fill(0.0);
    p.b_head[0] = -0.5;
    const DenseArray y = forward(cfg, p, DenseArray(Shape{1, 6, 3}));
    for (double v : y.values()) CHECK(v == -0.5);
}

TEST_CASE("forward matches a straight-line layer-by-layer reimplementation") {
    const ModelConfig cfg{3, 4, 2, 1, HeadMode::PerStep};
    const ModelParameters p = jittered_params(cfg, 0);
    const DenseArray x = random_input({1, 4, 3}, 0);
    const DenseArray y = forward(cfg, p, x);

    const std::size_t L = 4, F = 3, D = 4, N = 2;
    const SsmParameters& s = p.layers[0];
    std::vector<double> h(D * N, 0.0);
    for (std::size_t t = 0; t < L; ++t) {
        double u[D];
        for (std::size_t d = 0; d < D; ++d) {
            u[d] = p.b_embed[d];
            for (std::size_t f = 0; f < F; ++f) u[d] += x[t * F + f] * p.w_embed.at(f, d);
        }
        double bt[N], ct[N];
        for (std::size_t n = 0; n < N; ++n) {
            bt[n] = ct[n] = 0.0;
            for (std::size_t d = 0; d < D; ++d) {
                bt[n] += u[d] * s.w_b.at(d, n);
                ct[n] += u[d] * s.w_c.at(d, n);
            }
        }
        double out = p.b_head[0];
        for (std::size_t d = 0; d < D; ++d) {
            double pre = s.bias_delta[d];
            for (std::size_t j = 0; j < D; ++j) pre += u[j] * s.w_delta.at(j, d);
            const double delta = std::log1p(std::exp(pre));
            double yd = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const double a = -std::exp(s.a_log.at(d, n));
                const double abar = std::exp(delta * a);
                const double bbar = (abar - 1.0) / a * bt[n];
                h[d * N + n] = abar * h[d * N + n] + bbar * u[d];
                yd += ct[n] * h[d * N + n];
            }
            out += yd * p.w_head[d];
        }
        CHECK(y[t] == doctest::Approx(out).epsilon(1e-12));
    }
}

TEST_CASE("last-step prediction equals the final per-step prediction") {
    ModelConfig per{3, 4, 3, 1, HeadMode::PerStep};
    ModelConfig last = per;
    last.head_mode = HeadMode::LastStep;
    const ModelParameters p = jittered_params(per, 3);
    const DenseArray x = random_input({2, 7, 3}, 3);
    const DenseArray a = forward(per, p, x);
    const DenseArray b = forward(last, p, x);
    REQUIRE(b.shape() == Shape{2});
    CHECK(b[0] == a[6]);
    CHECK(b[1] == a[13]);
}

TEST_CASE("per-step output length follows the input length") {
    const ModelConfig cfg{2, 3, 2, 1, HeadMode::PerStep};
    const ModelParameters p = ModelParameters::init(cfg, 0);
    for (std::size_t L : {1u, 2u, 17u}) CHECK(forward(cfg, p, random_input({1, L, 2}, L)).shape() == Shape{1, L});
}

TEST_CASE("scaling the head weight scales the centered prediction") {
    const ModelConfig cfg{3, 4, 2, 1, HeadMode::PerStep};
    ModelParameters p = jittered_params(cfg, 5);
    const DenseArray x = random_input({1, 6, 3}, 5);
    const DenseArray base = forward(cfg, p, x);
    for (auto& v : p.w_head.values()) v *= 2.5;
    const DenseArray scaled = forward(cfg, p, x);
    for (std::size_t i = 0; i < base.size(); ++i)
        CHECK(scaled[i] - p.b_head[0] == doctest::Approx(2.5 * (base[i] - p.b_head[0])).epsilon(1e-13));
}

TEST_CASE("feature dimension mismatch is a dimension error") {
    const ModelConfig cfg{3, 4, 2, 1, HeadMode::PerStep};
    CHECK_THROWS_AS(forward(cfg, ModelParameters::init(cfg, 0), DenseArray(Shape{1, 4, 2})), DimensionError);
}

TEST_CASE("l1 loss values and subgradient") {
    const DenseArray pred(Shape{2}, {1.0, 3.0});
    const DenseArray target(Shape{2}, {2.0, 2.0});
    CHECK(l1_loss(pred, pred) == 0.0);
    CHECK(l1_loss(pred, target) == 1.0);
    const DenseArray g = l1_loss_grad(pred, target);
    CHECK(g[0] == -0.5);
    CHECK(g[1] == 0.5);
    CHECK(l1_loss_grad(pred, pred)[0] == 0.0);
    CHECK_THROWS_AS(l1_loss(pred, DenseArray(Shape{3})), DimensionError);
}

TEST_CASE("targets equal to the output give all-zero gradients") {
    const ModelConfig cfg{3, 4, 2, 1, HeadMode::PerStep};
    const ModelParameters p = jittered_params(cfg, 1);
    const DenseArray x = random_input({1, 5, 3}, 1);
    const LossAndGrads lg = backward(cfg, p, x, forward(cfg, p, x));
    CHECK(lg.loss == 0.0);
    for (const auto& [name, t] : lg.grads.tensors())
        for (double v : t->values()) CHECK(v == 0.0);
}

TEST_CASE("gradient of every tensor matches central differences") {
    SUBCASE("single layer, per-step") {
        const ModelConfig cfg{3, 4, 2, 1, HeadMode::PerStep};
        const ModelParameters p = jittered_params(cfg, 0);
        const DenseArray x = random_input({2, 5, 3}, 0);
        max_tensor_grad_error(cfg, p, x, offset_targets(forward(cfg, p, x), 0.5, 0), 1e-6);
    }
    SUBCASE("two layers, last-step") {
        const ModelConfig cfg{2, 3, 3, 2, HeadMode::LastStep};
        const ModelParameters p = jittered_params(cfg, 4);
        const DenseArray x = random_input({3, 6, 2}, 4);
        max_tensor_grad_error(cfg, p, x, offset_targets(forward(cfg, p, x), 0.5, 4), 1e-6);
    }
}

TEST_CASE("head bias directional derivative counts residual signs") {
    const ModelConfig cfg{3, 4, 2, 1, HeadMode::PerStep};
    const ModelParameters p = jittered_params(cfg, 2);
    const DenseArray x = random_input({1, 8, 3}, 2);
    const DenseArray pred = forward(cfg, p, x);
    const DenseArray target = offset_targets(pred, 0.3, 9);
    double positive = 0, negative = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) (pred[i] > target[i] ? positive : negative) += 1.0;
    const double expected = (positive - negative) / static_cast<double>(pred.size());
    CHECK(backward(cfg, p, x, target).grads.b_head[0] == doctest::Approx(expected).epsilon(1e-15));
    const double h = 1e-4;
    ModelParameters q = p;
    q.b_head[0] += h;
    CHECK((l1_loss(forward(cfg, q, x), target) - l1_loss(pred, target)) / h == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("forward and backward are bit-reproducible") {
    const ModelConfig cfg{3, 8, 4, 1, HeadMode::PerStep};
    const ModelParameters p = ModelParameters::init(cfg, 11);
    const DenseArray x = random_input({2, 9, 3}, 11);
    const DenseArray target = random_input({2, 9}, 12);
    const auto a = backward(cfg, p, x, target);
    const auto b = backward(cfg, ModelParameters::init(cfg, 11), x, target);
    CHECK(std::memcmp(&a.loss, &b.loss, sizeof(double)) == 0);
    const auto ga = a.grads.tensors(), gb = b.grads.tensors();
    for (std::size_t k = 0; k < ga.size(); ++k)
        CHECK(std::memcmp(ga[k].second->values().data(), gb[k].second->values().data(),
                          ga[k].second->size() * sizeof(double)) == 0);
}
