#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace lissm {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Row-major dense tensor of doubles. Shape and buffer length always agree.
class DenseArray {
  public:
    DenseArray() = default;
    explicit DenseArray(Shape shape, double fill = 0.0);
    DenseArray(Shape shape, std::vector<double> data);

    static DenseArray scalar(double v) { return DenseArray(Shape{1}, std::vector<double>{v}); }
    static DenseArray matrix(std::initializer_list<std::initializer_list<double>> rows);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& values() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    bool all_finite() const noexcept;
    void fill(double v) noexcept;

    // Reinterpret with a new shape of equal element count.
    DenseArray reshaped(Shape shape) const;

    friend bool operator==(const DenseArray&, const DenseArray&) = default;

  private:
    Shape shape_;
    std::vector<double> data_;
};

/// Value with an accumulated cotangent of the same shape.
struct DualArray {
    DenseArray value;
    DenseArray grad;

    explicit DualArray(DenseArray v) : value(std::move(v)), grad(value.shape()) {}
    void accumulate(const DenseArray& contribution);
    void zero_grad() noexcept { grad.fill(0.0); }
};

void require_shape(const DenseArray& a, const Shape& expected, const char* what);

DenseArray matmul(const DenseArray& a, const DenseArray& b);
DenseArray transpose(const DenseArray& a);

struct MatmulGrads {
    DenseArray da;
    DenseArray db;
};
// Cotangents of C = A·B given dC.
MatmulGrads matmul_backward(const DenseArray& a, const DenseArray& b, const DenseArray& dc);

double softplus(double x) noexcept;
double sigmoid(double x) noexcept;
DenseArray softplus(const DenseArray& x);
// d softplus / dx evaluated at x, multiplied into the upstream cotangent.
DenseArray softplus_backward(const DenseArray& x, const DenseArray& upstream);

/// max_i |analytic_i - central_diff_i| / max(1, |analytic_i|).
/// Throws EvaluationError if f is non-finite anywhere it is probed.
double grad_check(const std::function<double(const DenseArray&)>& f, const DenseArray& theta,
                  const DenseArray& analytic, double h);

/// Seeded generator with distributions defined here rather than by the
/// standard library, so draws are identical across toolchains.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    std::uint64_t next() { return engine_(); }
    double uniform();                       // [0, 1)
    double uniform(double lo, double hi);   // [lo, hi)
    double normal();                        // standard normal, Box-Muller
    std::size_t below(std::size_t n);       // [0, n)

  private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

DenseArray random_uniform(const Shape& shape, double lo, double hi, Rng& rng);

} // namespace lissm
