#pragma once

#include "lissm/model.hpp"
#include "lissm/numerics.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace lissm {

enum class Task { Rul, Soh, Soc };
enum class TargetUnit { Cycles, Fraction };

const char* to_string(Task task);
Task parse_task(const std::string& text);
/// Label unit a task expects: cycles for RUL, fractions for SOH and SOC.
TargetUnit expected_unit(Task task);
/// Reporting unit name ("cycle" or "percent") and the factor from label units.
const char* report_unit(Task task);
double report_scale(Task task);

/// One training/evaluation example: features [L, F] and targets [L] (per-step)
/// or [1] (last-step).
struct LabeledSequence {
    std::string id;
    DenseArray features;
    DenseArray targets;
    TargetUnit unit = TargetUnit::Fraction;
};

struct TrainConfig {
    double learning_rate = 0.01;
    std::size_t epochs = 100;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    std::size_t batch_size = 4;

    void validate() const;
};

/// Per-column standardization with population statistics.
class ZScoreScaler {
  public:
    static constexpr double kConstantThreshold = 1e-12;

    ZScoreScaler() = default;
    ZScoreScaler(std::vector<double> mean, std::vector<double> stddev);

    /// rows: [n, F] with n >= 1.
    static ZScoreScaler fit(const DenseArray& rows);

    std::size_t width() const noexcept { return mean_.size(); }
    const std::vector<double>& mean() const noexcept { return mean_; }
    const std::vector<double>& stddev() const noexcept { return std_; }
    bool is_constant(std::size_t column) const { return std_.at(column) < kConstantThreshold; }

    // Any array whose last axis has width() entries. Constant columns map to 0
    // and back to their mean.
    DenseArray transform(const DenseArray& x) const;
    DenseArray inverse_transform(const DenseArray& z) const;

  private:
    std::vector<double> mean_;
    std::vector<double> std_;
};

/// Feature and target scalers, both fit on training sequences only.
struct Normalizer {
    ZScoreScaler features;
    ZScoreScaler targets;

    static Normalizer fit(const std::vector<LabeledSequence>& train);
    LabeledSequence apply(const LabeledSequence& seq) const;
    std::vector<LabeledSequence> apply(const std::vector<LabeledSequence>& seqs) const;
};

struct AdamState {
    std::vector<DenseArray> m;
    std::vector<DenseArray> v;
    std::uint64_t step = 0;

    static AdamState zeros_like(const ModelParameters& p);
};

struct AdamUpdate {
    ModelParameters params;
    AdamState state;
};

AdamUpdate adam_step(const ModelParameters& p, const ModelParameters& grads, const AdamState& state,
                     const TrainConfig& cfg);

struct TrainResult {
    ModelParameters params;
    double initial_loss = 0.0;       // mean L1 over the training set before any update
    std::vector<double> loss_trace;  // epoch-mean L1, one entry per epoch
    double final_loss = 0.0;         // mean L1 over the training set with the returned parameters
};

/// Full-batch-order Adam training on already normalized sequences.
TrainResult train(const ModelConfig& model_cfg, ModelParameters init,
                  const std::vector<LabeledSequence>& train_set, const TrainConfig& cfg);

/// Mean L1 of the model over a set of (normalized) sequences.
double mean_loss(const ModelConfig& model_cfg, const ModelParameters& p,
                 const std::vector<LabeledSequence>& seqs);

double rmse(std::span<const double> pred, std::span<const double> target);

struct Evaluation {
    double rmse = 0.0;      // in report units
    std::string unit;       // "cycle" or "percent"
    std::vector<std::vector<double>> predictions;  // label units, one vector per sequence
};

/// Predict each raw (unnormalized) test sequence, map predictions back to label
/// units with the training scalers, and score RMSE in report units.
Evaluation evaluate(const ModelConfig& model_cfg, const ModelParameters& p,
                    const std::vector<LabeledSequence>& test_set, const Normalizer& norm, Task task);

/// Predictions in label units for one raw sequence.
std::vector<double> predict(const ModelConfig& model_cfg, const ModelParameters& p,
                            const LabeledSequence& seq, const Normalizer& norm);

} // namespace lissm
