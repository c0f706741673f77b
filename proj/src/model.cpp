#include "lissm/model.hpp"

#include "lissm/error.hpp"

#include <cmath>

namespace lissm {

namespace {

struct Activations {
    DenseArray embedded;              // [B, L, D]
    std::vector<DenseArray> outputs;  // output of each SSM layer, [B, L, D]
};

void check_input(const ModelConfig& cfg, const DenseArray& x) {
    if (x.rank() != 3 || x.dim(2) != cfg.feature_dim) {
        throw DimensionError("model input must be [B, L, " + std::to_string(cfg.feature_dim) +
                             "], got " + shape_to_string(x.shape()));
    }
    if (x.dim(0) == 0 || x.dim(1) == 0) throw DimensionError("model input has an empty batch or sequence");
}

Activations run_layers(const ModelConfig& cfg, const ModelParameters& p, const DenseArray& x) {
    check_input(cfg, x);
    p.validate(cfg);
    const std::size_t B = x.dim(0), L = x.dim(1), F = cfg.feature_dim, D = cfg.d_model;
    DenseArray u = matmul(x.reshaped(Shape{B * L, F}), p.w_embed);
    for (std::size_t r = 0; r < B * L; ++r)
        for (std::size_t d = 0; d < D; ++d) u[r * D + d] += p.b_embed[d];
    Activations acts{u.reshaped(Shape{B, L, D}), {}};
    const DenseArray* current = &acts.embedded;
    acts.outputs.reserve(p.layers.size());
    for (const auto& layer : p.layers) {
        acts.outputs.push_back(ssm_forward(*current, layer));
        current = &acts.outputs.back();
    }
    return acts;
}

DenseArray apply_head(const ModelConfig& cfg, const ModelParameters& p, const DenseArray& y) {
    const std::size_t B = y.dim(0), L = y.dim(1), D = cfg.d_model;
    DenseArray per_step(Shape{B, L});
    for (std::size_t r = 0; r < B * L; ++r) {
        double acc = 0.0;
        for (std::size_t d = 0; d < D; ++d) acc += y[r * D + d] * p.w_head[d];
        per_step[r] = acc + p.b_head[0];
    }
    if (cfg.head_mode == HeadMode::PerStep) return per_step;
    DenseArray last(Shape{B});
    for (std::size_t b = 0; b < B; ++b) last[b] = per_step[b * L + L - 1];
    return last;
}

} // namespace

const char* to_string(HeadMode mode) { return mode == HeadMode::PerStep ? "per-step" : "last-step"; }

HeadMode parse_head_mode(const std::string& text) {
    if (text == "per-step") return HeadMode::PerStep;
    if (text == "last-step") return HeadMode::LastStep;
    throw ConfigError("head_mode must be per-step or last-step, got '" + text + "'");
}

void ModelConfig::validate() const {
    if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
    if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
    SsmConfig{d_model, d_state}.validate();
}

std::size_t ModelConfig::parameter_count() const {
    const std::size_t F = feature_dim, D = d_model, N = d_state;
    return F * D + D + n_layers * (2 * D * N + D * D + D + D * N) + D + 1;
}

ModelParameters ModelParameters::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ModelParameters p = zeros(cfg);
    const double k_embed = 1.0 / std::sqrt(static_cast<double>(cfg.feature_dim));
    p.w_embed = random_uniform(p.w_embed.shape(), -k_embed, k_embed, rng);
    p.b_embed = random_uniform(p.b_embed.shape(), -k_embed, k_embed, rng);
    for (auto& layer : p.layers) layer = SsmParameters::init(cfg.d_model, cfg.d_state, rng);
    const double k_head = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    p.w_head = random_uniform(p.w_head.shape(), -k_head, k_head, rng);
    p.b_head = random_uniform(p.b_head.shape(), -k_head, k_head, rng);
    return p;
}

ModelParameters ModelParameters::zeros(const ModelConfig& cfg) {
    ModelParameters p;
    p.w_embed = DenseArray(Shape{cfg.feature_dim, cfg.d_model});
    p.b_embed = DenseArray(Shape{cfg.d_model});
    p.layers.assign(cfg.n_layers, SsmParameters::zeros(cfg.d_model, cfg.d_state));
    p.w_head = DenseArray(Shape{cfg.d_model, 1});
    p.b_head = DenseArray(Shape{1});
    return p;
}

std::vector<std::pair<std::string, DenseArray*>> ModelParameters::tensors() {
    std::vector<std::pair<std::string, DenseArray*>> out{{"embed.weight", &w_embed}, {"embed.bias", &b_embed}};
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string prefix = "layers." + std::to_string(i) + ".";
        auto& l = layers[i];
        out.emplace_back(prefix + "a_log", &l.a_log);
        out.emplace_back(prefix + "w_b", &l.w_b);
        out.emplace_back(prefix + "w_c", &l.w_c);
        out.emplace_back(prefix + "w_delta", &l.w_delta);
        out.emplace_back(prefix + "bias_delta", &l.bias_delta);
    }
    out.emplace_back("head.weight", &w_head);
    out.emplace_back("head.bias", &b_head);
    return out;
}

std::vector<std::pair<std::string, const DenseArray*>> ModelParameters::tensors() const {
    auto mutable_view = const_cast<ModelParameters*>(this)->tensors();
    std::vector<std::pair<std::string, const DenseArray*>> out;
    out.reserve(mutable_view.size());
    for (auto& [name, t] : mutable_view) out.emplace_back(std::move(name), t);
    return out;
}

std::size_t ModelParameters::parameter_count() const {
    std::size_t total = 0;
    for (const auto& [name, t] : tensors()) total += t->size();
    return total;
}

void ModelParameters::validate(const ModelConfig& cfg) const {
    require_shape(w_embed, Shape{cfg.feature_dim, cfg.d_model}, "embed.weight");
    require_shape(b_embed, Shape{cfg.d_model}, "embed.bias");
    if (layers.size() != cfg.n_layers) {
        throw DimensionError("expected " + std::to_string(cfg.n_layers) + " SSM layers, got " +
                             std::to_string(layers.size()));
    }
    for (const auto& layer : layers) {
        layer.validate();
        require_shape(layer.a_log, Shape{cfg.d_model, cfg.d_state}, "a_log");
    }
    require_shape(w_head, Shape{cfg.d_model, 1}, "head.weight");
    require_shape(b_head, Shape{1}, "head.bias");
}

DenseArray forward(const ModelConfig& cfg, const ModelParameters& p, const DenseArray& x) {
    const Activations acts = run_layers(cfg, p, x);
    return apply_head(cfg, p, acts.outputs.back());
}

double l1_loss(const DenseArray& pred, const DenseArray& target) {
    require_shape(target, pred.shape(), "l1_loss target");
    if (pred.size() == 0) throw DimensionError("l1_loss: empty prediction");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - target[i]);
    return acc / static_cast<double>(pred.size());
}

DenseArray l1_loss_grad(const DenseArray& pred, const DenseArray& target) {
    require_shape(target, pred.shape(), "l1_loss target");
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    DenseArray g(pred.shape());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double r = pred[i] - target[i];
        g[i] = r > 0.0 ? inv_n : (r < 0.0 ? -inv_n : 0.0);
    }
    return g;
}

LossAndGrads backward(const ModelConfig& cfg, const ModelParameters& p, const DenseArray& x,
                      const DenseArray& target) {
    const Activations acts = run_layers(cfg, p, x);
    const DenseArray& top = acts.outputs.back();
    const DenseArray pred = apply_head(cfg, p, top);
    LossAndGrads out{l1_loss(pred, target), ModelParameters::zeros(cfg)};
    const DenseArray g_pred = l1_loss_grad(pred, target);

    const std::size_t B = x.dim(0), L = x.dim(1), F = cfg.feature_dim, D = cfg.d_model;
    DenseArray g_step(Shape{B, L});
    if (cfg.head_mode == HeadMode::PerStep) {
        g_step = g_pred;
    } else {
        for (std::size_t b = 0; b < B; ++b) g_step[b * L + L - 1] = g_pred[b];
    }

    DenseArray dy(Shape{B, L, D});
    for (std::size_t r = 0; r < B * L; ++r) {
        const double g = g_step[r];
        out.grads.b_head[0] += g;
        for (std::size_t d = 0; d < D; ++d) {
            out.grads.w_head[d] += g * top[r * D + d];
            dy[r * D + d] = g * p.w_head[d];
        }
    }

    for (std::size_t i = p.layers.size(); i-- > 0;) {
        const DenseArray& input = i ? acts.outputs[i - 1] : acts.embedded;
        SsmLayerGrads lg = ssm_backward(input, p.layers[i], dy);
        out.grads.layers[i] = std::move(lg.params);
        dy = std::move(lg.x);
    }

    const DenseArray du = dy.reshaped(Shape{B * L, D});
    out.grads.w_embed = matmul(transpose(x.reshaped(Shape{B * L, F})), du);
    for (std::size_t r = 0; r < B * L; ++r)
        for (std::size_t d = 0; d < D; ++d) out.grads.b_embed[d] += du[r * D + d];
    return out;
}

} // namespace lissm
