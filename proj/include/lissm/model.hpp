#pragma once

#include "lissm/numerics.hpp"
#include "lissm/ssm.hpp"

#include <string>
#include <utility>
#include <vector>

namespace lissm {

enum class HeadMode { PerStep, LastStep };

const char* to_string(HeadMode mode);
HeadMode parse_head_mode(const std::string& text);

struct ModelConfig {
    std::size_t feature_dim = 3;
    std::size_t d_model = 16;
    std::size_t d_state = 16;
    std::size_t n_layers = 1;
    HeadMode head_mode = HeadMode::PerStep;

    void validate() const;
    std::size_t parameter_count() const;
};

/// Affine embedding F -> D, a stack of selective SSM layers, affine head D -> 1.
struct ModelParameters {
    DenseArray w_embed;  // [F, D]
    DenseArray b_embed;  // [D]
    std::vector<SsmParameters> layers;
    DenseArray w_head;   // [D, 1]
    DenseArray b_head;   // [1]

    // Embedding weight and bias uniform in [-1/sqrt(F), 1/sqrt(F)], head in
    // [-1/sqrt(D), 1/sqrt(D)]; SSM layers as SsmParameters::init.
    static ModelParameters init(const ModelConfig& cfg, std::uint64_t seed);
    static ModelParameters zeros(const ModelConfig& cfg);

    // Stable, named view of every tensor in serialization order.
    std::vector<std::pair<std::string, DenseArray*>> tensors();
    std::vector<std::pair<std::string, const DenseArray*>> tensors() const;

    std::size_t parameter_count() const;
    void validate(const ModelConfig& cfg) const;
};

/// x: [B, L, F]. Returns [B, L] in per-step mode and [B] in last-step mode.
DenseArray forward(const ModelConfig& cfg, const ModelParameters& p, const DenseArray& x);

/// Mean absolute error; the subgradient at a zero residual is 0.
double l1_loss(const DenseArray& pred, const DenseArray& target);
DenseArray l1_loss_grad(const DenseArray& pred, const DenseArray& target);

struct LossAndGrads {
    double loss = 0.0;
    ModelParameters grads;
};

/// L1 loss of forward(x) against target and its exact gradient w.r.t. every tensor.
LossAndGrads backward(const ModelConfig& cfg, const ModelParameters& p, const DenseArray& x,
                      const DenseArray& target);

} // namespace lissm
