#include "lissm/training.hpp"

#include "lissm/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace lissm {

namespace {

DenseArray as_batch(const DenseArray& features) {
    return features.reshaped(Shape{1, features.dim(0), features.dim(1)});
}

DenseArray as_target(const ModelConfig& cfg, const LabeledSequence& seq) {
    if (cfg.head_mode == HeadMode::PerStep) {
        if (seq.targets.size() != seq.features.dim(0)) {
            throw DimensionError("sequence '" + seq.id + "': per-step targets must have one value per step");
        }
        return seq.targets.reshaped(Shape{1, seq.targets.size()});
    }
    if (seq.targets.size() != 1) {
        throw DimensionError("sequence '" + seq.id + "': last-step targets must hold exactly one value");
    }
    return seq.targets.reshaped(Shape{1});
}

DenseArray column_of(const DenseArray& targets) { return targets.reshaped(Shape{targets.size(), 1}); }

double l2_norm(const DenseArray& a) {
    double acc = 0.0;
    for (double v : a.values()) acc += v * v;
    return std::sqrt(acc);
}

std::string parameter_norms(const ModelParameters& p) {
    std::ostringstream os;
    bool first = true;
    for (const auto& [name, t] : p.tensors()) {
        os << (first ? "" : " ") << name << '=' << l2_norm(*t);
        first = false;
    }
    return os.str();
}

} // namespace

const char* to_string(Task task) {
    switch (task) {
    case Task::Rul: return "rul";
    case Task::Soh: return "soh";
    case Task::Soc: return "soc";
    }
    return "?";
}

Task parse_task(const std::string& text) {
    if (text == "rul" || text == "RUL") return Task::Rul;
    if (text == "soh" || text == "SOH") return Task::Soh;
    if (text == "soc" || text == "SOC") return Task::Soc;
    throw ConfigError("task must be one of rul, soh, soc; got '" + text + "'");
}

TargetUnit expected_unit(Task task) { return task == Task::Rul ? TargetUnit::Cycles : TargetUnit::Fraction; }

const char* report_unit(Task task) { return task == Task::Rul ? "cycle" : "percent"; }

double report_scale(Task task) { return task == Task::Rul ? 1.0 : 100.0; }

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be finite and >= 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1 must lie in (0, 1)");
    if (!(adam_beta2 > 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2 must lie in (0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

ZScoreScaler::ZScoreScaler(std::vector<double> mean, std::vector<double> stddev)
    : mean_(std::move(mean)), std_(std::move(stddev)) {
    if (mean_.size() != std_.size()) throw DimensionError("scaler mean and std widths differ");
}

ZScoreScaler ZScoreScaler::fit(const DenseArray& rows) {
    if (rows.rank() != 2) throw DimensionError("scaler fit expects [n, F], got " + shape_to_string(rows.shape()));
    const std::size_t n = rows.dim(0), f = rows.dim(1);
    if (n == 0) throw InsufficientDataError("scaler fit needs at least one row");
    std::vector<double> mean(f, 0.0), sd(f, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) mean[j] += rows.at(i, j);
    for (auto& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) sd[j] += (rows.at(i, j) - mean[j]) * (rows.at(i, j) - mean[j]);
    for (auto& s : sd) s = std::sqrt(s / static_cast<double>(n));
    return ZScoreScaler(std::move(mean), std::move(sd));
}

DenseArray ZScoreScaler::transform(const DenseArray& x) const {
    const std::size_t f = width();
    if (x.rank() == 0 || x.shape().back() != f) {
        throw DimensionError("scaler of width " + std::to_string(f) + " cannot transform " +
                             shape_to_string(x.shape()));
    }
    DenseArray z(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const std::size_t j = i % f;
        z[i] = is_constant(j) ? 0.0 : (x[i] - mean_[j]) / std_[j];
    }
    return z;
}

DenseArray ZScoreScaler::inverse_transform(const DenseArray& z) const {
    const std::size_t f = width();
    if (z.rank() == 0 || z.shape().back() != f) {
        throw DimensionError("scaler of width " + std::to_string(f) + " cannot invert " +
                             shape_to_string(z.shape()));
    }
    DenseArray x(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) {
        const std::size_t j = i % f;
        x[i] = is_constant(j) ? mean_[j] : z[i] * std_[j] + mean_[j];
    }
    return x;
}

Normalizer Normalizer::fit(const std::vector<LabeledSequence>& train) {
    if (train.empty()) throw InsufficientDataError("cannot fit scalers on an empty training set");
    const std::size_t f = train.front().features.dim(1);
    std::vector<double> feature_rows, target_rows;
    for (const auto& seq : train) {
        if (seq.features.rank() != 2 || seq.features.dim(1) != f) {
            throw DimensionError("sequence '" + seq.id + "' has features " +
                                 shape_to_string(seq.features.shape()) + ", expected width " + std::to_string(f));
        }
        feature_rows.insert(feature_rows.end(), seq.features.values().begin(), seq.features.values().end());
        target_rows.insert(target_rows.end(), seq.targets.values().begin(), seq.targets.values().end());
    }
    const std::size_t n_feat = feature_rows.size() / f, n_tgt = target_rows.size();
    return Normalizer{ZScoreScaler::fit(DenseArray(Shape{n_feat, f}, std::move(feature_rows))),
                      ZScoreScaler::fit(DenseArray(Shape{n_tgt, 1}, std::move(target_rows)))};
}

LabeledSequence Normalizer::apply(const LabeledSequence& seq) const {
    LabeledSequence out = seq;
    out.features = features.transform(seq.features);
    out.targets = targets.transform(column_of(seq.targets)).reshaped(seq.targets.shape());
    return out;
}

std::vector<LabeledSequence> Normalizer::apply(const std::vector<LabeledSequence>& seqs) const {
    std::vector<LabeledSequence> out;
    out.reserve(seqs.size());
    for (const auto& s : seqs) out.push_back(apply(s));
    return out;
}

AdamState AdamState::zeros_like(const ModelParameters& p) {
    AdamState s;
    for (const auto& [name, t] : p.tensors()) {
        s.m.emplace_back(t->shape());
        s.v.emplace_back(t->shape());
    }
    return s;
}

AdamUpdate adam_step(const ModelParameters& p, const ModelParameters& grads, const AdamState& state,
                     const TrainConfig& cfg) {
    AdamUpdate out{p, state};
    auto params = out.params.tensors();
    const auto g = grads.tensors();
    if (g.size() != params.size() || out.state.m.size() != params.size() || out.state.v.size() != params.size()) {
        throw DimensionError("adam_step: parameter, gradient and state tensor counts differ");
    }
    out.state.step += 1;
    const double t = static_cast<double>(out.state.step);
    const double correction1 = 1.0 - std::pow(cfg.adam_beta1, t);
    const double correction2 = 1.0 - std::pow(cfg.adam_beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        DenseArray& theta = *params[k].second;
        const DenseArray& gk = *g[k].second;
        require_shape(gk, theta.shape(), params[k].first.c_str());
        DenseArray& m = out.state.m[k];
        DenseArray& v = out.state.v[k];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * gk[i];
            v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * gk[i] * gk[i];
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            theta[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
        }
    }
    return out;
}

double mean_loss(const ModelConfig& model_cfg, const ModelParameters& p,
                 const std::vector<LabeledSequence>& seqs) {
    if (seqs.empty()) throw InsufficientDataError("mean_loss over an empty set");
    double acc = 0.0;
    for (const auto& seq : seqs) acc += l1_loss(forward(model_cfg, p, as_batch(seq.features)), as_target(model_cfg, seq));
    return acc / static_cast<double>(seqs.size());
}

TrainResult train(const ModelConfig& model_cfg, ModelParameters init,
                  const std::vector<LabeledSequence>& train_set, const TrainConfig& cfg) {
    cfg.validate();
    model_cfg.validate();
    if (train_set.empty()) throw InsufficientDataError("training set is empty");

    TrainResult result{std::move(init), 0.0, {}, 0.0};
    result.initial_loss = mean_loss(model_cfg, result.params, train_set);
    AdamState state = AdamState::zeros_like(result.params);
    Rng order_rng(cfg.seed);
    std::vector<std::size_t> order(train_set.size());

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);

        double epoch_loss = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            ModelParameters batch_grads = ModelParameters::zeros(model_cfg);
            auto acc = batch_grads.tensors();
            for (std::size_t j = start; j < stop; ++j) {
                const LabeledSequence& seq = train_set[order[j]];
                auto diverged = [&](const std::string& what) {
                    return NumericalError(what + " at epoch " + std::to_string(epoch) + " batch " +
                                          std::to_string(batch_index) + " (sequence '" + seq.id +
                                          "'); parameter norms: " + parameter_norms(result.params));
                };
                LossAndGrads lg;
                try {
                    lg = backward(model_cfg, result.params, as_batch(seq.features), as_target(model_cfg, seq));
                } catch (const DomainError& e) {
                    throw diverged(std::string("undefined loss (") + e.what() + ")");
                }
                if (!std::isfinite(lg.loss)) throw diverged("non-finite loss");
                epoch_loss += lg.loss;
                const auto g = lg.grads.tensors();
                for (std::size_t k = 0; k < acc.size(); ++k)
                    for (std::size_t i = 0; i < acc[k].second->size(); ++i) (*acc[k].second)[i] += (*g[k].second)[i];
            }
            const double inv = 1.0 / static_cast<double>(stop - start);
            for (auto& [name, t] : acc)
                for (auto& v : t->values()) v *= inv;
            AdamUpdate upd = adam_step(result.params, batch_grads, state, cfg);
            result.params = std::move(upd.params);
            state = std::move(upd.state);
        }
        result.loss_trace.push_back(epoch_loss / static_cast<double>(train_set.size()));
    }
    result.final_loss = mean_loss(model_cfg, result.params, train_set);
    return result;
}

double rmse(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size()) {
        throw DimensionError("rmse: prediction length " + std::to_string(pred.size()) +
                             " differs from target length " + std::to_string(target.size()));
    }
    if (pred.empty()) throw InsufficientDataError("rmse of an empty series");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) acc += (pred[i] - target[i]) * (pred[i] - target[i]);
    return std::sqrt(acc / static_cast<double>(pred.size()));
}

std::vector<double> predict(const ModelConfig& model_cfg, const ModelParameters& p, const LabeledSequence& seq,
                            const Normalizer& norm) {
    const DenseArray z = forward(model_cfg, p, as_batch(norm.features.transform(seq.features)));
    return norm.targets.inverse_transform(column_of(z)).values();
}

Evaluation evaluate(const ModelConfig& model_cfg, const ModelParameters& p,
                    const std::vector<LabeledSequence>& test_set, const Normalizer& norm, Task task) {
    if (test_set.empty()) throw InsufficientDataError("evaluation set is empty");
    Evaluation out;
    out.unit = report_unit(task);
    const double scale = report_scale(task);
    std::vector<double> all_pred, all_target;
    for (const auto& seq : test_set) {
        if (seq.unit != expected_unit(task)) {
            throw ConfigError("sequence '" + seq.id + "' carries labels in the wrong unit for task " + to_string(task));
        }
        out.predictions.push_back(predict(model_cfg, p, seq, norm));
        for (double v : out.predictions.back()) all_pred.push_back(v * scale);
        for (double v : seq.targets.values()) all_target.push_back(v * scale);
    }
    out.rmse = rmse(all_pred, all_target);
    return out;
}

} // namespace lissm
