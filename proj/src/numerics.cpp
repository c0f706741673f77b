#include "lissm/numerics.hpp"

#include "lissm/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace lissm {

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

DenseArray::DenseArray(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

DenseArray::DenseArray(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
        throw DimensionError("buffer of " + std::to_string(data_.size()) +
                             " elements does not fit shape " + shape_to_string(shape_));
    }
}

DenseArray DenseArray::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t m = rows.size();
    const std::size_t n = m ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(m * n);
    for (const auto& row : rows) {
        if (row.size() != n) throw DimensionError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return DenseArray(Shape{m, n}, std::move(data));
}

std::size_t DenseArray::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_to_string(shape_));
    }
    return shape_[axis];
}

bool DenseArray::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void DenseArray::fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

DenseArray DenseArray::reshaped(Shape shape) const { return DenseArray(std::move(shape), data_); }

void DualArray::accumulate(const DenseArray& contribution) {
    require_shape(contribution, value.shape(), "gradient contribution");
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += contribution[i];
}

void require_shape(const DenseArray& a, const Shape& expected, const char* what) {
    if (a.shape() != expected) {
        throw DimensionError(std::string(what) + ": expected shape " + shape_to_string(expected) +
                             ", got " + shape_to_string(a.shape()));
    }
}

DenseArray matmul(const DenseArray& a, const DenseArray& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
        throw DimensionError("matmul: cannot multiply " + shape_to_string(a.shape()) + " by " +
                             shape_to_string(b.shape()));
    }
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    DenseArray c(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = acc;
        }
    }
    return c;
}

DenseArray transpose(const DenseArray& a) {
    if (a.rank() != 2) throw DimensionError("transpose: rank-2 input required, got " +
                                            shape_to_string(a.shape()));
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    DenseArray t(Shape{n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
    return t;
}

MatmulGrads matmul_backward(const DenseArray& a, const DenseArray& b, const DenseArray& dc) {
    require_shape(dc, Shape{a.dim(0), b.dim(1)}, "matmul_backward dC");
    return {matmul(dc, transpose(b)), matmul(transpose(a), dc)};
}

double softplus(double x) noexcept { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

DenseArray softplus(const DenseArray& x) {
    DenseArray y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = softplus(x[i]);
    return y;
}

DenseArray softplus_backward(const DenseArray& x, const DenseArray& upstream) {
    require_shape(upstream, x.shape(), "softplus_backward upstream");
    DenseArray g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = upstream[i] * sigmoid(x[i]);
    return g;
}

double grad_check(const std::function<double(const DenseArray&)>& f, const DenseArray& theta,
                  const DenseArray& analytic, double h) {
    require_shape(analytic, theta.shape(), "grad_check analytic gradient");
    if (!(h > 0.0)) throw DomainError("grad_check: step must be positive");
    DenseArray probe = theta;
    double worst = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        probe[i] = theta[i] + h;
        const double up = f(probe);
        probe[i] = theta[i] - h;
        const double down = f(probe);
        probe[i] = theta[i];
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw EvaluationError("grad_check: non-finite objective at coordinate " +
                                  std::to_string(i));
        }
        const double numeric = (up - down) / (2.0 * h);
        const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

std::size_t Rng::below(std::size_t n) {
    if (n == 0) throw DomainError("Rng::below: empty range");
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

DenseArray random_uniform(const Shape& shape, double lo, double hi, Rng& rng) {
    DenseArray out(shape);
    for (auto& v : out.values()) v = rng.uniform(lo, hi);
    return out;
}

} // namespace lissm
