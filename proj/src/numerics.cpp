#include "ulns/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ulns/error.hpp"

namespace ulns {

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw Error(ErrorKind::InvalidInput,
                    "matrix data has " + std::to_string(data_.size()) + " entries, expected " +
                        std::to_string(rows_ * cols_));
    }
    if (!all_finite()) throw Error(ErrorKind::InvalidInput, "matrix has non-finite entries");
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw Error(ErrorKind::ShapeError, "ragged row list");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw Error(ErrorKind::ShapeError, "matmul inner dimension mismatch");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto orow = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            double aik = a(i, k);
            if (aik == 0.0) continue;
            auto brow = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw Error(ErrorKind::ShapeError, "matmul_bt inner dimension mismatch");
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
    return out;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw Error(ErrorKind::ShapeError, "matmul_at inner dimension mismatch");
    Matrix out(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        auto arow = a.row(k);
        auto brow = b.row(k);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            double aki = arow[i];
            if (aki == 0.0) continue;
            auto orow = out.row(i);
            for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aki * brow[j];
        }
    }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    // Four fixed partial sums: vectorizes without reassociating.
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    const std::size_t n = a.size();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

double squared_norm(std::span<const double> a) { return dot(a, a); }

double norm(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

double frobenius_norm(const Matrix& a) { return norm(a.flat()); }

Matrix orthonormal_columns(const Matrix& a) {
    Matrix q = a;
    const std::size_t n = q.rows();
    for (std::size_t j = 0; j < q.cols(); ++j) {
        double original = 0.0;
        for (std::size_t r = 0; r < n; ++r) original += q(r, j) * q(r, j);
        original = std::sqrt(original);
        // Second pass restores orthogonality lost to cancellation.
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t i = 0; i < j; ++i) {
                double proj = 0.0;
                for (std::size_t r = 0; r < n; ++r) proj += q(r, i) * q(r, j);
                for (std::size_t r = 0; r < n; ++r) q(r, j) -= proj * q(r, i);
            }
        }
        double nrm = 0.0;
        for (std::size_t r = 0; r < n; ++r) nrm += q(r, j) * q(r, j);
        nrm = std::sqrt(nrm);
        if (!(nrm > 1e-10 * std::max(original, 1e-300))) {
            throw IndexedError(ErrorKind::DegenerateGeometry, static_cast<long>(j),
                               "columns are linearly dependent");
        }
        for (std::size_t r = 0; r < n; ++r) q(r, j) /= nrm;
    }
    return q;
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& s : s_) s = splitmix64(sm);
}

std::uint64_t Rng::next_u64() noexcept {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_int(std::uint64_t n) noexcept {
    // Reject the top partial bucket so every residue is equally likely.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n + 1) % n;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x > limit);
    return x % n;
}

double Rng::normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// ---------------------------------------------------------------------------

namespace {

void require_finite_nonempty(std::span<const double> z, const char* what) {
    if (z.empty()) throw Error(ErrorKind::InvalidInput, std::string(what) + " of empty vector");
    for (double v : z)
        if (!std::isfinite(v)) throw Error(ErrorKind::InvalidInput, std::string(what) + " of non-finite input");
}

}  // namespace

void softmax_inplace(std::span<double> logits) {
    require_finite_nonempty(logits, "softmax");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double& v : logits) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : logits) v /= sum;
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> out(logits.begin(), logits.end());
    softmax_inplace(out);
    return out;
}

double log_sum_exp(std::span<const double> logits) {
    require_finite_nonempty(logits, "log_sum_exp");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    return mx + std::log(sum);
}

double grad_check(const std::function<double(const Matrix&)>& f, const Matrix& x,
                  const Matrix& analytic_grad, double eps) {
    if (analytic_grad.rows() != x.rows() || analytic_grad.cols() != x.cols())
        throw Error(ErrorKind::ShapeError, "grad_check: gradient shape differs from x");
    Matrix probe = x;
    double worst = 0.0;
    auto flat = probe.flat();
    auto grad = analytic_grad.flat();
    for (std::size_t i = 0; i < flat.size(); ++i) {
        const double saved = flat[i];
        flat[i] = saved + eps;
        const double fp = f(probe);
        flat[i] = saved - eps;
        const double fm = f(probe);
        flat[i] = saved;
        const double numeric = (fp - fm) / (2.0 * eps);
        worst = std::max(worst, std::abs(numeric - grad[i]) / (std::abs(grad[i]) + eps));
    }
    return worst;
}

}  // namespace ulns
