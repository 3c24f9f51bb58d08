#include "ulns/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ulns/error.hpp"

namespace ulns {

ClassMeans class_means(const FeatureSet& fs, int class_count) {
    if (class_count < 1) throw Error(ErrorKind::InvalidConfig, "class_count must be >= 1");
    if (fs.features.rows() != fs.labels.size()) throw Error(ErrorKind::ShapeError, "feature rows != labels");
    const std::size_t k = static_cast<std::size_t>(class_count);
    const std::size_t d = fs.features.cols();
    ClassMeans cm{Matrix(k, d), std::vector<double>(d, 0.0), std::vector<std::size_t>(k, 0)};
    for (std::size_t i = 0; i < fs.size(); ++i) {
        const int y = fs.labels[i];
        if (y < 0 || y >= class_count) throw Error(ErrorKind::InvalidInput, "label outside [0, K)");
        auto src = fs.features.row(i);
        auto dst = cm.mu.row(static_cast<std::size_t>(y));
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        ++cm.counts[static_cast<std::size_t>(y)];
    }
    for (std::size_t c = 0; c < k; ++c) {
        if (cm.counts[c] == 0) throw IndexedError(ErrorKind::MissingClass, static_cast<long>(c), "class has no samples");
        const double inv = 1.0 / static_cast<double>(cm.counts[c]);
        for (double& v : cm.mu.row(c)) v *= inv;
    }
    for (std::size_t c = 0; c < k; ++c) {
        auto row = cm.mu.row(c);
        for (std::size_t j = 0; j < d; ++j) cm.mu_global[j] += row[j];
    }
    for (double& v : cm.mu_global) v /= static_cast<double>(k);
    return cm;
}

EtfFrame simplex_etf(std::size_t classes, std::size_t dim, std::uint64_t seed) {
    if (classes < 2) throw Error(ErrorKind::InvalidConfig, "simplex ETF needs K >= 2");
    if (dim + 1 < classes) throw Error(ErrorKind::InvalidConfig, "simplex ETF needs d >= K-1");
    const std::size_t k = classes;
    const double kd = static_cast<double>(k);

    // Orthonormal basis of the complement of the all-ones vector.
    Matrix centred(k, k - 1);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j + 1 < k; ++j) centred(i, j) = (i == j ? 1.0 : 0.0) - 1.0 / kd;
    Matrix basis = orthonormal_columns(centred);

    // Rows of sqrt(K/(K-1)) * basis have the ETF Gram matrix.
    const double scale = std::sqrt(kd / (kd - 1.0));
    for (double& v : basis.flat()) v *= scale;

    Rng rng(seed);
    Matrix gaussian(dim, k - 1);
    for (double& v : gaussian.flat()) v = rng.normal();
    Matrix embed = orthonormal_columns(gaussian);  // d x (K-1)

    EtfFrame frame{matmul_bt(basis, embed)};
    for (std::size_t c = 0; c < k; ++c) {
        auto row = frame.directions.row(c);
        const double n = norm(row);
        for (double& v : row) v /= n;
    }
    return frame;
}

double nc1_ratio(const FeatureSet& fs, const ClassMeans& means) {
    if (fs.features.cols() != means.dim()) throw Error(ErrorKind::ShapeError, "feature dim != mean dim");
    double within = 0.0;
    for (std::size_t i = 0; i < fs.size(); ++i) {
        auto h = fs.features.row(i);
        auto mu = means.mu.row(static_cast<std::size_t>(fs.labels[i]));
        for (std::size_t j = 0; j < h.size(); ++j) within += (h[j] - mu[j]) * (h[j] - mu[j]);
    }
    within /= static_cast<double>(std::max<std::size_t>(fs.size(), 1));
    double between = 0.0;
    for (std::size_t c = 0; c < means.classes(); ++c) {
        auto mu = means.mu.row(c);
        for (std::size_t j = 0; j < mu.size(); ++j)
            between += (mu[j] - means.mu_global[j]) * (mu[j] - means.mu_global[j]);
    }
    between /= static_cast<double>(means.classes());
    if (!(between > 0.0)) throw Error(ErrorKind::DegenerateGeometry, "all class means coincide");
    return within / between;
}

std::vector<double> nc3_per_class(const LinearHead& head, const ClassMeans& means) {
    if (head.classes() != means.classes() || head.input_dim() != means.dim())
        throw Error(ErrorKind::ShapeError, "head and class means disagree on K or d");
    const std::size_t d = means.dim();
    std::vector<double> out(means.classes());
    std::vector<double> centred(d);
    for (std::size_t c = 0; c < means.classes(); ++c) {
        auto w = head.weight.row(c);
        auto mu = means.mu.row(c);
        for (std::size_t j = 0; j < d; ++j) centred[j] = mu[j] - means.mu_global[j];
        const double wn = norm(w);
        const double mn = norm(centred);
        if (!(wn > 0.0)) throw IndexedError(ErrorKind::DegenerateGeometry, static_cast<long>(c), "zero classifier row");
        if (!(mn > 0.0)) throw IndexedError(ErrorKind::DegenerateGeometry, static_cast<long>(c), "zero centred class mean");
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = w[j] / wn - centred[j] / mn;
            sq += diff * diff;
        }
        out[c] = std::min(2.0, std::sqrt(sq));
    }
    return out;
}

std::vector<int> ncc_predict(const Matrix& features, const ClassMeans& means) {
    if (features.cols() != means.dim()) throw Error(ErrorKind::ShapeError, "feature dim != mean dim");
    std::vector<int> out(features.rows());
    for (std::size_t i = 0; i < features.rows(); ++i) {
        auto h = features.row(i);
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (std::size_t c = 0; c < means.classes(); ++c) {
            auto mu = means.mu.row(c);
            double dist = 0.0;
            for (std::size_t j = 0; j < h.size(); ++j) dist += (h[j] - mu[j]) * (h[j] - mu[j]);
            if (dist < best) {
                best = dist;
                arg = static_cast<int>(c);
            }
        }
        out[i] = arg;
    }
    return out;
}

double ncc_accuracy(const FeatureSet& fs, const ClassMeans& means, std::span<const int> on) {
    if (on.empty()) throw Error(ErrorKind::InvalidInput, "NCC accuracy over an empty class set");
    auto pred = ncc_predict(fs.features, means);
    std::size_t hit = 0, seen = 0;
    for (std::size_t i = 0; i < fs.size(); ++i) {
        if (std::find(on.begin(), on.end(), fs.labels[i]) == on.end()) continue;
        ++seen;
        if (pred[i] == fs.labels[i]) ++hit;
    }
    if (seen == 0) throw Error(ErrorKind::InvalidInput, "NCC restriction selects no sample");
    return 100.0 * static_cast<double>(hit) / static_cast<double>(seen);
}

double cosine(std::span<const double> a, std::span<const double> b) {
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

}  // namespace ulns
