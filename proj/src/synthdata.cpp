#include "ulns/synthdata.hpp"

#include <cstdio>
#include <fstream>

#include "binary_io.hpp"
#include "ulns/error.hpp"
#include "ulns/geometry.hpp"

namespace ulns {

namespace {

Dataset sample_mixture(const Matrix& centers, const GaussianMixtureParams& p, std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t k = static_cast<std::size_t>(p.classes);
    Dataset ds;
    ds.class_count = p.classes;
    ds.inputs = Matrix(k * p.n_per_class, p.input_dim);
    ds.labels.reserve(k * p.n_per_class);
    std::size_t r = 0;
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t i = 0; i < p.n_per_class; ++i, ++r) {
            auto row = ds.inputs.row(r);
            for (std::size_t j = 0; j < p.input_dim; ++j) row[j] = centers(c, j) + p.noise_sigma * rng.normal();
            ds.labels.push_back(static_cast<int>(c));
        }
    }
    return ds;
}

}  // namespace

TrainTestData make_gaussian_mixture(const GaussianMixtureParams& p) {
    if (p.classes < 2) throw Error(ErrorKind::InvalidConfig, "need K >= 2");
    if (p.input_dim + 1 < static_cast<std::size_t>(p.classes))
        throw Error(ErrorKind::InvalidConfig, "d_in must be at least K-1 to host a simplex ETF");
    if (!(p.noise_sigma > 0.0)) throw Error(ErrorKind::InvalidConfig, "noise_sigma must be > 0");
    if (p.n_per_class == 0) throw Error(ErrorKind::InvalidConfig, "n_per_class must be >= 1");

    EtfFrame etf = simplex_etf(static_cast<std::size_t>(p.classes), p.input_dim, p.seed);
    Matrix centers = etf.directions;
    for (double& v : centers.flat()) v *= p.mean_scale;

    return {sample_mixture(centers, p, p.seed), sample_mixture(centers, p, p.seed ^ kTestSeedSalt)};
}

RetainForgetSplit split_retain_forget(const Dataset& dataset, std::span<const int> forget_classes) {
    RetainForgetSplit out;
    out.spec = make_split_spec(dataset.class_count, forget_classes);
    std::vector<std::size_t> keep, drop;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        (out.spec.is_forget(dataset.labels[i]) ? drop : keep).push_back(i);
    out.retain = dataset.subset(keep);
    out.forget = dataset.subset(drop);
    return out;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
    ds.check();
    detail::LeWriter w(path);
    w.magic("ULNS");
    w.u32(kDatasetFormatVersion);
    w.u64(ds.size());
    w.u64(ds.input_dim());
    w.u64(static_cast<std::uint64_t>(ds.class_count));
    for (double v : ds.inputs.flat()) w.f64(v);
    for (int y : ds.labels) w.u32(static_cast<std::uint32_t>(y));
    w.finish();
}

Dataset read_dataset(const std::filesystem::path& path) {
    detail::LeReader r(path);
    r.expect_magic("ULNS");
    if (auto v = r.u32(); v != kDatasetFormatVersion)
        throw Error(ErrorKind::IoError, path.string() + ": unsupported dataset version " + std::to_string(v));
    const std::uint64_t n = r.u64();
    const std::uint64_t d = r.u64();
    const std::uint64_t k = r.u64();
    if (k < 2 || k > 1'000'000 || n > (1ULL << 32) || d > (1ULL << 20))
        throw Error(ErrorKind::IoError, path.string() + ": implausible header");
    std::vector<double> values(n * d);
    for (double& v : values) v = r.f64();
    Dataset ds;
    ds.class_count = static_cast<int>(k);
    ds.inputs = Matrix(n, d, std::move(values));
    ds.labels.resize(n);
    for (int& y : ds.labels) y = static_cast<int>(r.u32());
    if (!r.at_end()) throw Error(ErrorKind::IoError, path.string() + ": trailing bytes");
    ds.check();
    return ds;
}

void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
    for (std::size_t j = 0; j < ds.input_dim(); ++j) out << 'x' << j << ',';
    out << "label\n";
    char buf[32];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (double v : ds.inputs.row(i)) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << buf << ',';
        }
        out << ds.labels[i] << '\n';
    }
    if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

}  // namespace ulns
