#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ulns/model.hpp"
#include "ulns/numerics.hpp"

namespace ulns {

/// Per-class feature means and their unweighted average.
struct ClassMeans {
    Matrix mu;                      // K x d
    std::vector<double> mu_global;  // (1/K) * sum_k mu_k, regardless of class sizes
    std::vector<std::size_t> counts;

    std::size_t classes() const noexcept { return mu.rows(); }
    std::size_t dim() const noexcept { return mu.cols(); }
};

/// Throws MissingClass(k) when class k has no sample.
ClassMeans class_means(const FeatureSet& fs, int class_count);

/// K unit vectors in R^d with pairwise cosine -1/(K-1).
struct EtfFrame {
    Matrix directions;  // K x d
    std::size_t classes() const noexcept { return directions.rows(); }
    std::size_t dim() const noexcept { return directions.cols(); }
};

inline constexpr std::uint64_t kDefaultEtfSeed = 0xE7F0'0000'0000'0001ULL;

/// sqrt(K/(K-1)) (I - 11^T/K), expressed in an orthonormal basis of 1-perp and
/// embedded in R^d through the Q factor of a seeded Gaussian d x (K-1) matrix.
/// Throws InvalidConfig when d < K-1 or K < 2.
EtfFrame simplex_etf(std::size_t classes, std::size_t dim, std::uint64_t seed = kDefaultEtfSeed);

/// tr(Sigma_W) / tr(Sigma_B): within-class scatter (averaged over samples)
/// over between-class scatter of the means about mu_global (averaged over
/// classes). Supplementary collapse diagnostic. Throws DegenerateGeometry when
/// all class means coincide.
double nc1_ratio(const FeatureSet& fs, const ClassMeans& means);

/// || w_k/||w_k|| - (mu_k - mu_G)/||mu_k - mu_G|| || for each class, in [0, 2].
/// Throws DegenerateGeometry(k) on a zero weight row or a zero centred mean.
std::vector<double> nc3_per_class(const LinearHead& head, const ClassMeans& means);

/// argmin_k ||h - mu_k||; equidistant ties resolve to the lowest class index.
std::vector<int> ncc_predict(const Matrix& features, const ClassMeans& means);

/// NCC accuracy in percent over samples whose true class is in `on`.
/// Throws InvalidInput when `on` is empty or selects no sample.
double ncc_accuracy(const FeatureSet& fs, const ClassMeans& means, std::span<const int> on);

/// Cosine similarity; 0 if either vector is zero.
double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace ulns
