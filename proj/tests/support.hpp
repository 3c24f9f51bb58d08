#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ulns/dataset.hpp"
#include "ulns/model.hpp"
#include "ulns/numerics.hpp"

namespace ulns::test {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (double& v : m.flat()) v = scale * rng.normal();
    return m;
}

inline std::vector<int> random_labels(std::size_t n, int k, Rng& rng) {
    std::vector<int> y(n);
    for (int& v : y) v = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(k)));
    return y;
}

/// Every class gets at least one sample: labels cycle 0..K-1.
inline Dataset cyclic_dataset(std::size_t n, std::size_t d, int k, std::uint64_t seed) {
    Rng rng(seed);
    Dataset ds;
    ds.inputs = random_matrix(n, d, rng);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<int>(i % static_cast<std::size_t>(k));
    ds.class_count = k;
    return ds;
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("ulns_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

/// Flattened parameters of one group, in parameter_views() order.
inline std::vector<double> group_params(const MlpModel& m, ParamGroup g) {
    std::vector<double> out;
    for (const auto& v : parameter_views(m))
        if (v.group == g) out.insert(out.end(), v.values.begin(), v.values.end());
    return out;
}

}  // namespace ulns::test

namespace ulns::test {

inline Matrix flatten_params(const MlpModel& m) {
    std::vector<double> all;
    for (const auto& v : parameter_views(m)) all.insert(all.end(), v.values.begin(), v.values.end());
    const std::size_t n = all.size();
    return Matrix(1, n, std::move(all));
}

inline MlpModel unflatten_params(const MlpModel& shape, const Matrix& flat) {
    MlpModel m = shape;
    std::size_t off = 0;
    for (auto& v : parameter_views(m))
        for (double& x : v.values) x = flat.flat()[off++];
    return m;
}

/// Max relative finite-difference error of `loss` over every model parameter.
template <typename LossFn>
double model_grad_error(const MlpModel& model, LossFn&& loss, const MlpModel& grads, double eps = 1e-5) {
    const Matrix x = flatten_params(model);
    const Matrix g = flatten_params(grads);
    return grad_check([&](const Matrix& p) { return loss(unflatten_params(model, p)); }, x, g, eps);
}

}  // namespace ulns::test
