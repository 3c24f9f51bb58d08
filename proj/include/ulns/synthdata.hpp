#pragma once

#include <cstdint>
#include <filesystem>
#include <span>

#include "ulns/dataset.hpp"

namespace ulns {

struct GaussianMixtureParams {
    int classes = 10;
    std::size_t n_per_class = 500;
    std::size_t input_dim = 32;
    double mean_scale = 4.0;
    double noise_sigma = 1.0;
    std::uint64_t seed = 0;
};

struct TrainTestData {
    Dataset train;
    Dataset test;
};

/// XORed into the user seed to draw the held-out split.
inline constexpr std::uint64_t kTestSeedSalt = 0x7E57'5EED'D1CE'B00FULL;

/// Class k ~ Normal(mean_scale * m_k, noise_sigma^2 I) where m_k are the rows
/// of a simplex ETF embedded in input_dim dimensions (orientation drawn from
/// `seed`). The test split uses the same means and `seed ^ kTestSeedSalt`.
/// Samples are stored class-major.
TrainTestData make_gaussian_mixture(const GaussianMixtureParams& params);

struct RetainForgetSplit {
    Dataset retain;
    Dataset forget;
    SplitSpec spec;
};

/// Partitions by class; original labels and relative order are preserved.
RetainForgetSplit split_retain_forget(const Dataset& dataset, std::span<const int> forget_classes);

// Binary layout, little-endian:
//   "ULNS" | version:u32 | N:u64 | d_in:u64 | K:u64 | inputs:f64[N*d_in] | labels:u32[N]
inline constexpr std::uint32_t kDatasetFormatVersion = 1;

void write_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);
/// Header x0..x{d-1},label; 17 significant digits.
void write_dataset_csv(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace ulns
