#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace ulns {

// ---------------------------------------------------------------------------
// Matrix: dense, row-major, 64-bit. Sizes here are tiny (K <= 64, d <= 256,
// N <= 50 000) so there is no sparse or blocked path.
// ---------------------------------------------------------------------------
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols);  // zero-filled
    /// Throws InvalidInput when data.size() != rows*cols or any entry is non-finite.
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::span<double> flat() noexcept { return data_; }
    std::span<const double> flat() const noexcept { return data_; }

    bool all_finite() const noexcept;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix transpose(const Matrix& a);
/// a * b
Matrix matmul(const Matrix& a, const Matrix& b);
/// a * b^T
Matrix matmul_bt(const Matrix& a, const Matrix& b);
/// a^T * b
Matrix matmul_at(const Matrix& a, const Matrix& b);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
double squared_norm(std::span<const double> a);
double frobenius_norm(const Matrix& a);

/// Modified Gram-Schmidt (two passes) on the columns of `a`. Returns a matrix
/// with orthonormal columns spanning the same space. Throws
/// DegenerateGeometry if the columns are numerically dependent.
Matrix orthonormal_columns(const Matrix& a);

// ---------------------------------------------------------------------------
// Rng: xoshiro256** seeded through splitmix64. Every draw is built from the
// raw 64-bit stream with explicit formulas (no <random> distributions), so a
// seed yields the same sequence on every platform and standard library.
// ---------------------------------------------------------------------------
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64() noexcept;
    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform() noexcept;
    /// Uniform integer in [0, n). Rejection sampling, unbiased. n must be > 0.
    std::uint64_t uniform_int(std::uint64_t n) noexcept;
    /// Standard normal via the Box-Muller transform (one draw per call).
    double normal() noexcept;

    std::uint64_t seed() const noexcept { return seed_; }

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::uint64_t s_[4];
};

/// Numerically stable softmax (max-subtraction). Throws InvalidInput on
/// non-finite or empty input.
std::vector<double> softmax(std::span<const double> logits);
/// In-place variant used by the hot loops; same checks.
void softmax_inplace(std::span<double> logits);

/// log(sum(exp(z))), stable. Throws InvalidInput on empty or non-finite input.
double log_sum_exp(std::span<const double> logits);

/// Max over entries of |central difference - analytic| / (|analytic| + eps).
double grad_check(const std::function<double(const Matrix&)>& f, const Matrix& x,
                  const Matrix& analytic_grad, double eps);

}  // namespace ulns
