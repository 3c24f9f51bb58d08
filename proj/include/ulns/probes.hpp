#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "ulns/dataset.hpp"
#include "ulns/geometry.hpp"
#include "ulns/model.hpp"

namespace ulns {

struct ProbeConfig {
    double l2 = 1e-4;              // ridge on W only; bias unregularised
    double grad_tolerance = 1e-6;  // stop when ||grad|| drops below
    int max_iterations = 5000;
};

/// Multinomial logistic regression on frozen features, full-batch gradient
/// descent with Armijo backtracking, started from zero. Deterministic.
/// Throws MissingClass when a class is absent from `fs`.
LinearHead train_linear_probe(const FeatureSet& fs, int class_count, const ProbeConfig& config = {});

/// One evaluation row: output / probe / NCC accuracy (percent) on retain and
/// forget test samples, plus collapse metrics of the model's own head.
struct EvalReport {
    double output_retain = 0.0;
    double output_forget = 0.0;
    double probe_retain = 0.0;
    double probe_forget = 0.0;
    double ncc_retain = 0.0;
    double ncc_forget = 0.0;
    double nc3_forget_mean = 0.0;
    double nc3_retain_mean = 0.0;
    double nc1 = 0.0;
    std::string method_name = "original";
    std::string scope = "full";
    bool cmf_flag = false;
    std::uint64_t seed = 0;

    AccuracyGrid accuracies() const;

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

void write_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_report(const std::filesystem::path& path);

/// Output accuracies use the model head on `test`; probe accuracies use
/// `probe_head` on test features; NCC and NC3 use class means of `train`
/// features. Metadata fields are left at their defaults.
/// Throws InvalidConfig when `spec` does not match the model's class count.
EvalReport evaluate(const MlpModel& model, const Dataset& train, const Dataset& test,
                    const SplitSpec& spec, const LinearHead& probe_head);

/// Trains the probe on the train features of `model`, then evaluate().
EvalReport evaluate_with_probe(const MlpModel& model, const Dataset& train, const Dataset& test,
                               const SplitSpec& spec, const ProbeConfig& config = {});

/// CSV with columns f0..f{d-1},label in dataset order, 17 significant digits.
void export_features(const MlpModel& model, const Dataset& dataset, const std::filesystem::path& path);
FeatureSet read_features_csv(const std::filesystem::path& path);

}  // namespace ulns
