#include "lissm/ssm.hpp"

#include "lissm/error.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace lissm {

namespace {

struct ScanDims {
    std::size_t batch, len, model, state;
};

ScanDims check_scan_shapes(const DenseArray& a_bar, const DenseArray& b_bar, const DenseArray& c_seq,
                           const DenseArray& x) {
    if (x.rank() != 3) throw DimensionError("scan input x must be [B, L, D], got " +
                                            shape_to_string(x.shape()));
    if (a_bar.rank() != 4) throw DimensionError("scan a_bar must be [B, L, D, N], got " +
                                                shape_to_string(a_bar.shape()));
    const ScanDims dims{x.dim(0), x.dim(1), x.dim(2), a_bar.dim(3)};
    const Shape full{dims.batch, dims.len, dims.model, dims.state};
    require_shape(a_bar, full, "scan a_bar");
    require_shape(b_bar, full, "scan b_bar");
    require_shape(c_seq, Shape{dims.batch, dims.len, dims.state}, "scan c_seq");
    return dims;
}

DenseArray flatten_rows(const DenseArray& x) {
    const std::size_t cols = x.shape().back();
    return x.reshaped(Shape{x.size() / cols, cols});
}

// Hillis-Steele inclusive scan over one (batch, channel) lane, all states.
void prefix_scan_lane(const DenseArray& a_bar, const DenseArray& b_bar, const DenseArray& c_seq,
                      const DenseArray& x, const ScanDims& dims, std::size_t b, std::size_t d,
                      DenseArray& y) {
    const std::size_t L = dims.len, N = dims.state, D = dims.model;
    std::vector<double> mul(L), add(L), next_mul(L), next_add(L);
    std::vector<double> h(L * N);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t t = 0; t < L; ++t) {
            const std::size_t i = ((b * L + t) * D + d) * N + n;
            mul[t] = a_bar[i];
            add[t] = b_bar[i] * x[(b * L + t) * D + d];
        }
        for (std::size_t offset = 1; offset < L; offset *= 2) {
            for (std::size_t t = 0; t < L; ++t) {
                if (t < offset) {
                    next_mul[t] = mul[t];
                    next_add[t] = add[t];
                } else {
                    next_mul[t] = mul[t] * mul[t - offset];
                    next_add[t] = mul[t] * add[t - offset] + add[t];
                }
            }
            mul.swap(next_mul);
            add.swap(next_add);
        }
        for (std::size_t t = 0; t < L; ++t) h[t * N + n] = add[t];
    }
    for (std::size_t t = 0; t < L; ++t) {
        double acc = 0.0;
        for (std::size_t n = 0; n < N; ++n) acc += c_seq[(b * L + t) * N + n] * h[t * N + n];
        y[(b * L + t) * D + d] = acc;
    }
}

} // namespace

void SsmConfig::validate() const {
    if (d_model < 1 || d_state < 1 || seq_len < 1 || batch < 1) {
        throw ConfigError("ssm config: d_model, d_state, seq_len and batch must all be >= 1");
    }
}

SsmParameters SsmParameters::init(std::size_t d_model, std::size_t d_state, Rng& rng) {
    SsmConfig{d_model, d_state}.validate();
    SsmParameters p = zeros(d_model, d_state);
    for (std::size_t d = 0; d < d_model; ++d)
        for (std::size_t n = 0; n < d_state; ++n) p.a_log.at(d, n) = std::log(static_cast<double>(n + 1));
    const double k = 1.0 / std::sqrt(static_cast<double>(d_model));
    p.w_b = random_uniform(p.w_b.shape(), -k, k, rng);
    p.w_c = random_uniform(p.w_c.shape(), -k, k, rng);
    p.w_delta = random_uniform(p.w_delta.shape(), -k, k, rng);
    return p;
}

SsmParameters SsmParameters::zeros(std::size_t d_model, std::size_t d_state) {
    return SsmParameters{DenseArray(Shape{d_model, d_state}), DenseArray(Shape{d_model, d_state}),
                         DenseArray(Shape{d_model, d_state}), DenseArray(Shape{d_model, d_model}),
                         DenseArray(Shape{d_model})};
}

DenseArray SsmParameters::state_matrix() const {
    DenseArray a(a_log.shape());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(a_log[i]);
    return a;
}

void SsmParameters::validate() const {
    if (a_log.rank() != 2) throw DimensionError("a_log must be [D, N], got " + shape_to_string(a_log.shape()));
    const std::size_t D = a_log.dim(0), N = a_log.dim(1);
    require_shape(w_b, Shape{D, N}, "w_b");
    require_shape(w_c, Shape{D, N}, "w_c");
    require_shape(w_delta, Shape{D, D}, "w_delta");
    require_shape(bias_delta, Shape{D}, "bias_delta");
}

SelectiveCoefficients project_inputs(const DenseArray& x, const SsmParameters& p) {
    p.validate();
    if (x.rank() != 3 || x.dim(2) != p.d_model()) {
        throw DimensionError("project_inputs: x must be [B, L, " + std::to_string(p.d_model()) +
                             "], got " + shape_to_string(x.shape()));
    }
    const std::size_t B = x.dim(0), L = x.dim(1), D = p.d_model(), N = p.d_state();
    const DenseArray rows = flatten_rows(x);
    DenseArray pre = matmul(rows, p.w_delta);
    for (std::size_t r = 0; r < B * L; ++r)
        for (std::size_t d = 0; d < D; ++d) pre[r * D + d] += p.bias_delta[d];
    return SelectiveCoefficients{matmul(rows, p.w_b).reshaped(Shape{B, L, N}),
                                 matmul(rows, p.w_c).reshaped(Shape{B, L, N}),
                                 softplus(pre).reshaped(Shape{B, L, D})};
}

double zoh_input_gain(double z) noexcept {
    if (std::abs(z) < kZohSeriesThreshold) return 1.0 + z / 2.0 + z * z / 6.0;
    return std::expm1(z) / z;
}

double zoh_input_gain_derivative(double z) noexcept {
    if (std::abs(z) < 1e-3) {
        return 0.5 + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z * (1.0 / 30.0 + z / 144.0)));
    }
    return (z * std::exp(z) - std::expm1(z)) / (z * z);
}

Discretized discretize(const DenseArray& a_log, std::span<const double> b_t,
                       std::span<const double> delta_t) {
    if (a_log.rank() != 2 || a_log.dim(0) != delta_t.size() || a_log.dim(1) != b_t.size()) {
        throw DimensionError("discretize: a_log " + shape_to_string(a_log.shape()) +
                             " incompatible with B_t of length " + std::to_string(b_t.size()) +
                             " and delta_t of length " + std::to_string(delta_t.size()));
    }
    const std::size_t D = a_log.dim(0), N = a_log.dim(1);
    Discretized out{DenseArray(a_log.shape()), DenseArray(a_log.shape())};
    for (std::size_t d = 0; d < D; ++d) {
        const double delta = delta_t[d];
        if (!(delta > 0.0)) throw DomainError("discretize: sample time must be positive at channel " +
                                              std::to_string(d));
        for (std::size_t n = 0; n < N; ++n) {
            const double z = -delta * std::exp(a_log.at(d, n));
            out.a_bar.at(d, n) = std::exp(z);
            out.b_bar.at(d, n) = zoh_input_gain(z) * delta * b_t[n];
        }
    }
    return out;
}

Discretized discretize_sequence(const DenseArray& a_log, const SelectiveCoefficients& coeffs) {
    const std::size_t B = coeffs.delta_seq.dim(0), L = coeffs.delta_seq.dim(1);
    const std::size_t D = a_log.dim(0), N = a_log.dim(1);
    require_shape(coeffs.delta_seq, Shape{B, L, D}, "delta_seq");
    require_shape(coeffs.b_seq, Shape{B, L, N}, "b_seq");
    Discretized out{DenseArray(Shape{B, L, D, N}), DenseArray(Shape{B, L, D, N})};
    const std::size_t block = D * N;
    for (std::size_t bt = 0; bt < B * L; ++bt) {
        const auto step = discretize(a_log, coeffs.b_seq.data().subspan(bt * N, N),
                                     coeffs.delta_seq.data().subspan(bt * D, D));
        std::copy(step.a_bar.values().begin(), step.a_bar.values().end(),
                  out.a_bar.values().begin() + static_cast<std::ptrdiff_t>(bt * block));
        std::copy(step.b_bar.values().begin(), step.b_bar.values().end(),
                  out.b_bar.values().begin() + static_cast<std::ptrdiff_t>(bt * block));
    }
    return out;
}

DenseArray selective_scan(const DenseArray& a_bar, const DenseArray& b_bar, const DenseArray& c_seq,
                          const DenseArray& x) {
    const ScanDims dims = check_scan_shapes(a_bar, b_bar, c_seq, x);
    const std::size_t L = dims.len, D = dims.model, N = dims.state;
    DenseArray y(x.shape());
    std::vector<double> h(N);
    for (std::size_t b = 0; b < dims.batch; ++b) {
        for (std::size_t d = 0; d < D; ++d) {
            std::fill(h.begin(), h.end(), 0.0);
            for (std::size_t t = 0; t < L; ++t) {
                const double xt = x[(b * L + t) * D + d];
                const std::size_t base = ((b * L + t) * D + d) * N;
                double acc = 0.0;
                for (std::size_t n = 0; n < N; ++n) {
                    h[n] = a_bar[base + n] * h[n] + b_bar[base + n] * xt;
                    acc += c_seq[(b * L + t) * N + n] * h[n];
                }
                y[(b * L + t) * D + d] = acc;
            }
        }
    }
    return y;
}

DenseArray selective_scan_parallel(const DenseArray& a_bar, const DenseArray& b_bar,
                                   const DenseArray& c_seq, const DenseArray& x, unsigned workers) {
    const ScanDims dims = check_scan_shapes(a_bar, b_bar, c_seq, x);
    DenseArray y(x.shape());
    const std::size_t lanes = dims.batch * dims.model;
    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    const std::size_t n_threads = std::min<std::size_t>(workers, lanes);

    // Lanes write disjoint slices of y, so results do not depend on scheduling.
    auto run_lanes = [&](std::size_t first, std::size_t stride) {
        for (std::size_t lane = first; lane < lanes; lane += stride)
            prefix_scan_lane(a_bar, b_bar, c_seq, x, dims, lane / dims.model, lane % dims.model, y);
    };
    if (n_threads <= 1) {
        run_lanes(0, 1);
        return y;
    }
    std::vector<std::jthread> pool;
    pool.reserve(n_threads);
    for (std::size_t w = 0; w < n_threads; ++w) pool.emplace_back(run_lanes, w, n_threads);
    pool.clear();
    return y;
}

ScanGrads scan_backward(const DenseArray& a_bar, const DenseArray& b_bar, const DenseArray& c_seq,
                        const DenseArray& x, const DenseArray& dy) {
    const ScanDims dims = check_scan_shapes(a_bar, b_bar, c_seq, x);
    require_shape(dy, x.shape(), "scan_backward dy");
    const std::size_t L = dims.len, D = dims.model, N = dims.state;
    ScanGrads g{DenseArray(a_bar.shape()), DenseArray(b_bar.shape()), DenseArray(c_seq.shape()),
                DenseArray(x.shape())};
    std::vector<double> h(L * N);
    std::vector<double> lambda(N);
    for (std::size_t b = 0; b < dims.batch; ++b) {
        for (std::size_t d = 0; d < D; ++d) {
            for (std::size_t t = 0; t < L; ++t) {
                const double xt = x[(b * L + t) * D + d];
                const std::size_t base = ((b * L + t) * D + d) * N;
                for (std::size_t n = 0; n < N; ++n) {
                    const double prev = t ? h[(t - 1) * N + n] : 0.0;
                    h[t * N + n] = a_bar[base + n] * prev + b_bar[base + n] * xt;
                }
            }
            std::fill(lambda.begin(), lambda.end(), 0.0);
            for (std::size_t t = L; t-- > 0;) {
                const double xt = x[(b * L + t) * D + d];
                const double gy = dy[(b * L + t) * D + d];
                const std::size_t base = ((b * L + t) * D + d) * N;
                double gx = 0.0;
                for (std::size_t n = 0; n < N; ++n) {
                    // lambda currently holds a_bar_{t+1} * lambda_{t+1}
                    lambda[n] += c_seq[(b * L + t) * N + n] * gy;
                    const double prev = t ? h[(t - 1) * N + n] : 0.0;
                    g.a_bar[base + n] = lambda[n] * prev;
                    g.b_bar[base + n] = lambda[n] * xt;
                    g.c_seq[(b * L + t) * N + n] += gy * h[t * N + n];
                    gx += b_bar[base + n] * lambda[n];
                    lambda[n] *= a_bar[base + n];
                }
                g.x[(b * L + t) * D + d] = gx;
            }
        }
    }
    return g;
}

DenseArray ssm_forward(const DenseArray& x, const SsmParameters& p) {
    const SelectiveCoefficients coeffs = project_inputs(x, p);
    const Discretized disc = discretize_sequence(p.a_log, coeffs);
    return selective_scan(disc.a_bar, disc.b_bar, coeffs.c_seq, x);
}

SsmLayerGrads ssm_backward(const DenseArray& x, const SsmParameters& p, const DenseArray& dy) {
    const SelectiveCoefficients coeffs = project_inputs(x, p);
    const Discretized disc = discretize_sequence(p.a_log, coeffs);
    const ScanGrads sg = scan_backward(disc.a_bar, disc.b_bar, coeffs.c_seq, x, dy);

    const std::size_t B = x.dim(0), L = x.dim(1), D = p.d_model(), N = p.d_state();
    const DenseArray a = p.state_matrix();
    DenseArray d_a(Shape{D, N});
    DenseArray d_delta(Shape{B * L, D});
    DenseArray d_bseq(Shape{B * L, N});
    for (std::size_t bt = 0; bt < B * L; ++bt) {
        for (std::size_t d = 0; d < D; ++d) {
            const double delta = coeffs.delta_seq[bt * D + d];
            double acc_delta = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const std::size_t i = (bt * D + d) * N + n;
                const double a_dn = a.at(d, n);
                const double z = delta * a_dn;
                const double phi = zoh_input_gain(z);
                const double dphi = zoh_input_gain_derivative(z);
                const double bn = coeffs.b_seq[bt * N + n];
                const double ga = sg.a_bar[i];
                const double gb = sg.b_bar[i];
                // a_bar = exp(z); b_bar = phi(z) * delta * B; z = delta * A
                acc_delta += ga * a_dn * disc.a_bar[i] + gb * (dphi * a_dn * delta * bn + phi * bn);
                d_a.at(d, n) += ga * delta * disc.a_bar[i] + gb * dphi * delta * delta * bn;
                d_bseq[bt * N + n] += gb * phi * delta;
            }
            d_delta[bt * D + d] = acc_delta;
        }
    }

    const DenseArray rows = flatten_rows(x);
    DenseArray pre = matmul(rows, p.w_delta);
    for (std::size_t r = 0; r < B * L; ++r)
        for (std::size_t d = 0; d < D; ++d) pre[r * D + d] += p.bias_delta[d];
    const DenseArray d_pre = softplus_backward(pre, d_delta);
    const DenseArray d_cseq = sg.c_seq.reshaped(Shape{B * L, N});

    SsmLayerGrads out{SsmParameters::zeros(D, N), DenseArray(x.shape())};
    for (std::size_t i = 0; i < d_a.size(); ++i) out.params.a_log[i] = d_a[i] * a[i];
    const DenseArray rows_t = transpose(rows);
    out.params.w_b = matmul(rows_t, d_bseq);
    out.params.w_c = matmul(rows_t, d_cseq);
    out.params.w_delta = matmul(rows_t, d_pre);
    for (std::size_t r = 0; r < B * L; ++r)
        for (std::size_t d = 0; d < D; ++d) out.params.bias_delta[d] += d_pre[r * D + d];

    const DenseArray dx_b = matmul(d_bseq, transpose(p.w_b));
    const DenseArray dx_c = matmul(d_cseq, transpose(p.w_c));
    const DenseArray dx_delta = matmul(d_pre, transpose(p.w_delta));
    for (std::size_t i = 0; i < out.x.size(); ++i) out.x[i] = sg.x[i] + dx_b[i] + dx_c[i] + dx_delta[i];
    return out;
}

} // namespace lissm
