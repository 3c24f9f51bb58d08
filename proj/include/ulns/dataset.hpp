#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ulns/numerics.hpp"

namespace ulns {

/// Raw inputs (N x d_in) with dense integer labels in [0, K).
struct Dataset {
    Matrix inputs;
    std::vector<int> labels;
    int class_count = 0;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t input_dim() const noexcept { return inputs.cols(); }

    /// Label range and row/label agreement. With `require_all_classes`, also
    /// demands at least one sample per class.
    void check(bool require_all_classes = false) const;

    /// Rows in the given order.
    Dataset subset(std::span<const std::size_t> indices) const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Row-wise concatenation; both sides must share d_in and K.
Dataset concat(const Dataset& a, const Dataset& b);

/// Per-class sample counts (length K).
std::vector<std::size_t> class_counts(std::span<const int> labels, int class_count);

/// Forget / retain class partition of [0, K).
struct SplitSpec {
    int class_count = 0;
    std::vector<int> forget_classes;  // sorted, unique
    std::vector<int> retain_classes;  // sorted complement

    bool is_forget(int label) const noexcept;

    friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

/// Throws InvalidConfig unless `forget` is a non-empty proper subset of [0, K).
SplitSpec make_split_spec(int class_count, std::span<const int> forget);

}  // namespace ulns
