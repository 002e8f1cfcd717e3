#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "milbag/errors.hpp"

namespace milbag {

/// Dense row-major matrix of doubles. All training arithmetic runs at 64-bit
/// precision; feature files store float32 and are widened on load.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }
    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    bool all_finite() const;
    void fill(double v);

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix identity(std::size_t n);

/// Numerically stable softmax; output sums to 1 within 1e-12.
std::vector<double> softmax(std::span<const double> x);

struct CrossEntropyResult {
    double loss = 0.0;
    std::vector<double> dlogits;  // softmax(logits) - target
};

/// Soft-target cross entropy on raw logits. Probabilities are clamped to
/// >= 1e-12 before the log to guard underflow.
CrossEntropyResult cross_entropy(std::span<const double> target, std::span<const double> logits);

/// Learnable tensor with Adam moments. `grad` accumulates across backward
/// calls and is zeroed by adam_step.
struct ParamTensor {
    std::string name;
    Matrix value;
    Matrix grad;
    Matrix m1;
    Matrix m2;
    std::uint64_t step_count = 0;

    ParamTensor() = default;
    ParamTensor(std::string name_, std::size_t rows, std::size_t cols)
        : name(std::move(name_)),
          value(rows, cols),
          grad(rows, cols),
          m1(rows, cols),
          m2(rows, cols) {}

    void zero_grad() { grad.fill(0.0); }
};

struct AdamConfig {
    double lr = 1e-4;
    double weight_decay = 2e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam step with decoupled weight decay. Increments
/// step_count and zeroes the gradient afterwards.
void adam_step(ParamTensor& p, const AdamConfig& cfg);

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t coords_checked = 0;
};

/// Compares the analytic gradients currently stored in each tensor's `grad`
/// against central finite differences of `loss_fn`. The loss function must be
/// a deterministic, forward-only evaluation of the current parameter values;
/// a repeated-evaluation mismatch raises NumericError. Relative error uses
/// denominator max(|analytic|, |numeric|, 1e-8). Tensors larger than
/// `max_coords_per_tensor` are subsampled (0 = check every coordinate).
GradCheckReport finite_diff_check(const std::function<double()>& loss_fn,
                                  std::span<ParamTensor* const> params,
                                  double h,
                                  std::size_t max_coords_per_tensor = 0,
                                  std::uint64_t subsample_seed = 0);

std::uint64_t splitmix64(std::uint64_t x);

/// Independent deterministic RNG stream derived from (seed, stream tag).
std::mt19937_64 seeded_rng(std::uint64_t seed, std::uint64_t stream);

}  // namespace milbag
