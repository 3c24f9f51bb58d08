#include "ulns/dataset.hpp"

#include <algorithm>
#include <string>

#include "ulns/error.hpp"

namespace ulns {

void Dataset::check(bool require_all_classes) const {
    if (class_count < 2) throw Error(ErrorKind::InvalidConfig, "dataset needs at least 2 classes");
    if (inputs.rows() != labels.size())
        throw Error(ErrorKind::ShapeError, "dataset has " + std::to_string(inputs.rows()) +
                                               " rows but " + std::to_string(labels.size()) + " labels");
    for (int y : labels)
        if (y < 0 || y >= class_count)
            throw Error(ErrorKind::InvalidInput, "label " + std::to_string(y) + " outside [0, K)");
    if (require_all_classes) {
        auto counts = class_counts(labels, class_count);
        for (int k = 0; k < class_count; ++k)
            if (counts[static_cast<std::size_t>(k)] == 0)
                throw IndexedError(ErrorKind::MissingClass, k, "class has no samples");
    }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.class_count = class_count;
    out.inputs = Matrix(indices.size(), inputs.cols());
    out.labels.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        auto src = inputs.row(indices[i]);
        std::copy(src.begin(), src.end(), out.inputs.row(i).begin());
        out.labels.push_back(labels[indices[i]]);
    }
    return out;
}

Dataset concat(const Dataset& a, const Dataset& b) {
    if (a.input_dim() != b.input_dim() || a.class_count != b.class_count)
        throw Error(ErrorKind::ShapeError, "concat: datasets disagree on d_in or K");
    Dataset out;
    out.class_count = a.class_count;
    out.inputs = Matrix(a.size() + b.size(), a.input_dim());
    auto dst = out.inputs.flat();
    std::copy(a.inputs.flat().begin(), a.inputs.flat().end(), dst.begin());
    std::copy(b.inputs.flat().begin(), b.inputs.flat().end(),
              dst.begin() + static_cast<std::ptrdiff_t>(a.inputs.size()));
    out.labels = a.labels;
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    return out;
}

std::vector<std::size_t> class_counts(std::span<const int> labels, int class_count) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(class_count), 0);
    for (int y : labels)
        if (y >= 0 && y < class_count) ++counts[static_cast<std::size_t>(y)];
    return counts;
}

bool SplitSpec::is_forget(int label) const noexcept {
    return std::binary_search(forget_classes.begin(), forget_classes.end(), label);
}

SplitSpec make_split_spec(int class_count, std::span<const int> forget) {
    SplitSpec spec;
    spec.class_count = class_count;
    spec.forget_classes.assign(forget.begin(), forget.end());
    std::sort(spec.forget_classes.begin(), spec.forget_classes.end());
    spec.forget_classes.erase(std::unique(spec.forget_classes.begin(), spec.forget_classes.end()),
                              spec.forget_classes.end());
    if (spec.forget_classes.empty()) throw Error(ErrorKind::InvalidConfig, "forget class set is empty");
    for (int c : spec.forget_classes)
        if (c < 0 || c >= class_count)
            throw Error(ErrorKind::InvalidConfig, "forget class " + std::to_string(c) + " outside [0, K)");
    if (static_cast<int>(spec.forget_classes.size()) == class_count)
        throw Error(ErrorKind::InvalidConfig, "forget set covers every class");
    for (int c = 0; c < class_count; ++c)
        if (!spec.is_forget(c)) spec.retain_classes.push_back(c);
    return spec;
}

}  // namespace ulns
