#pragma once

#include "lissm/numerics.hpp"

#include <cstddef>
#include <span>

namespace lissm {

// Tensor layouts used throughout this header:
//   x, y, delta          [batch, seq_len, d_model]
//   b_seq, c_seq         [batch, seq_len, d_state]
//   a_bar, b_bar         [batch, seq_len, d_model, d_state]

struct SsmConfig {
    std::size_t d_model = 16;
    std::size_t d_state = 16;
    std::size_t seq_len = 1;
    std::size_t batch = 1;

    void validate() const;
};

/// Learnable tensors of one selective SSM layer. The continuous-time state
/// matrix is diagonal and stored as A = -exp(a_log), so it is always stable.
struct SsmParameters {
    DenseArray a_log;       // [D, N]
    DenseArray w_b;         // [D, N]
    DenseArray w_c;         // [D, N]
    DenseArray w_delta;     // [D, D]
    DenseArray bias_delta;  // [D]

    // A(d, n) = -(n + 1); projection weights uniform in [-1/sqrt(D), 1/sqrt(D)];
    // bias_delta zero.
    static SsmParameters init(std::size_t d_model, std::size_t d_state, Rng& rng);
    static SsmParameters zeros(std::size_t d_model, std::size_t d_state);

    std::size_t d_model() const { return a_log.dim(0); }
    std::size_t d_state() const { return a_log.dim(1); }
    DenseArray state_matrix() const;  // A, [D, N]
    void validate() const;
};

struct SelectiveCoefficients {
    DenseArray b_seq;
    DenseArray c_seq;
    DenseArray delta_seq;  // strictly positive
};

/// B_t = x_t W_B, C_t = x_t W_C, delta_t = softplus(x_t W_delta + bias).
SelectiveCoefficients project_inputs(const DenseArray& x, const SsmParameters& p);

/// phi(z) = (exp(z) - 1) / z, with a three-term series for |z| < 1e-5.
double zoh_input_gain(double z) noexcept;
/// phi'(z), series below |z| < 1e-3.
double zoh_input_gain_derivative(double z) noexcept;

inline constexpr double kZohSeriesThreshold = 1e-5;

struct Discretized {
    DenseArray a_bar;
    DenseArray b_bar;
};

/// Zero-order hold for one timestep with diagonal A: a_bar = exp(delta A),
/// b_bar = phi(delta A) delta B. Shapes: b_t [N], delta_t [D]; result [D, N].
Discretized discretize(const DenseArray& a_log, std::span<const double> b_t,
                       std::span<const double> delta_t);

/// discretize applied at every (batch, timestep); result [B, L, D, N].
Discretized discretize_sequence(const DenseArray& a_log, const SelectiveCoefficients& coeffs);

/// h_0 = 0; h_t = a_bar_t * h_{t-1} + b_bar_t * x_t; y_t = C_t . h_t.
DenseArray selective_scan(const DenseArray& a_bar, const DenseArray& b_bar, const DenseArray& c_seq,
                          const DenseArray& x);

/// Same contract as selective_scan, evaluated as a parallel prefix over
/// (a1, b1) o (a2, b2) = (a2 a1, a2 b1 + b2). Work is split across up to
/// `workers` threads by (batch, channel); 0 picks hardware concurrency.
DenseArray selective_scan_parallel(const DenseArray& a_bar, const DenseArray& b_bar,
                                   const DenseArray& c_seq, const DenseArray& x,
                                   unsigned workers = 0);

struct ScanGrads {
    DenseArray a_bar;
    DenseArray b_bar;
    DenseArray c_seq;
    DenseArray x;
};

/// Reverse-time adjoint of selective_scan. Hidden states are recomputed one
/// (batch, channel) lane at a time instead of being saved by the forward pass.
ScanGrads scan_backward(const DenseArray& a_bar, const DenseArray& b_bar, const DenseArray& c_seq,
                        const DenseArray& x, const DenseArray& dy);

/// Full layer: project_inputs -> discretize -> selective_scan.
DenseArray ssm_forward(const DenseArray& x, const SsmParameters& p);

struct SsmLayerGrads {
    SsmParameters params;  // gradient w.r.t. each tensor, same shapes
    DenseArray x;
};

SsmLayerGrads ssm_backward(const DenseArray& x, const SsmParameters& p, const DenseArray& dy);

} // namespace lissm
