#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ulns/dataset.hpp"
#include "ulns/model.hpp"
#include "ulns/numerics.hpp"

namespace ulns {

enum class UnlearnMethod { retain_ft, neggrad_plus, random_label, salun, scrub, unsir };

std::string_view method_name(UnlearnMethod method);
/// Throws InvalidConfig for unknown names.
UnlearnMethod parse_method(std::string_view name);

std::string_view scope_name(TrainScope scope);
/// Accepts "full" and "classifier_only".
TrainScope parse_scope(std::string_view name);

struct MethodParams {
    double salun_threshold = 0.5;
    int scrub_msteps = 2;
    double scrub_kd_temperature = 4.0;
    double scrub_kd_weight = 1.0;
    int unsir_noise_steps = 40;
    double unsir_noise_lr = 0.1;
    std::size_t unsir_noise_samples = 32;  // noise rows per forget class
    int unsir_impair_epochs = 1;
    std::optional<double> grad_clip;       // NegGrad+ gets 1.0 when unset
    double neggrad_retain_weight = 1.0;
};

struct UnlearnConfig {
    UnlearnMethod method = UnlearnMethod::random_label;
    TrainScope scope = TrainScope::full;
    bool use_cmf = false;
    int epochs = 5;
    double learning_rate = 0.01;
    double momentum = 0.0;
    std::size_t batch_size = 128;
    std::uint64_t seed = 0;
    MethodParams params;

    /// Throws InvalidConfig (cmf + classifier_only, thresholds out of range, ...).
    void check() const;
    /// grad_clip after method defaults are applied.
    std::optional<double> effective_grad_clip() const;
};

using SaliencyMask = ParameterMask;

// ---------------------------------------------------------------------------
// Class-mean-feature head
// ---------------------------------------------------------------------------

/// w_k = (mu_k - mu_bar) / ||mu_k - mu_bar|| from the model's current feature
/// means on `dataset`, mu_bar the unweighted mean of the mu_k; zero bias.
/// Throws DegenerateGeometry(k) when a centred mean vanishes.
LinearHead cmf_head(const MlpModel& model, const Dataset& dataset);

// ---------------------------------------------------------------------------
// Losses. Each returns the data loss and exact gradients for one batch.
// ---------------------------------------------------------------------------

LossAndGrads loss_retain_ft(const MlpModel& model, const Matrix& retain_x, std::span<const int> retain_y);

/// retain_weight * CE(retain) - CE(forget).
LossAndGrads loss_neggrad_plus(const MlpModel& model, const Matrix& retain_x,
                               std::span<const int> retain_y, const Matrix& forget_x,
                               std::span<const int> forget_y, double retain_weight);

/// Replaces each forget label by a uniform draw from the retain classes.
std::vector<int> random_relabel(std::span<const int> labels, const SplitSpec& spec, Rng& rng);

/// CE against the (already relabelled) targets.
LossAndGrads loss_random_label(const MlpModel& model, const Matrix& inputs, std::span<const int> targets);

/// T^2 * mean_i KL(softmax(teacher_i / T) || softmax(student_i / T)); gradients
/// w.r.t. the student.
LossAndGrads loss_scrub_kd(const MlpModel& student, const Matrix& teacher_logits,
                           const Matrix& inputs, double temperature);

/// Retain objective of SCRUB: kd_weight * KD + CE(labels).
LossAndGrads loss_scrub_retain(const MlpModel& student, const Matrix& teacher_logits,
                               const Matrix& inputs, std::span<const int> labels,
                               double temperature, double kd_weight);

/// Mean CE of `noise` rows against `label`, and its gradient w.r.t. the noise.
double noise_ce_and_grad(const MlpModel& model, const Matrix& noise, int label, Matrix* grad);

// ---------------------------------------------------------------------------
// Method building blocks
// ---------------------------------------------------------------------------

/// |d CE_forget / d theta| over the whole forget set; keeps the top
/// round(threshold * P) entries (global ranking, ties to the lower flat index).
SaliencyMask salun_mask(const MlpModel& model, const Dataset& forget, double threshold);

/// One SCRUB epoch. `epoch_index` is 0-based; max (forget) steps run while
/// epoch_index < msteps, the min (retain) pass every epoch. Returns the mean
/// retain objective.
double scrub_epoch(MlpModel& student, const MlpModel& teacher, const Dataset& retain,
                   const Dataset& forget, int epoch_index, const UnlearnConfig& config,
                   SgdOptimizer& optimizer, Rng& rng);

struct UnsirNoise {
    std::vector<int> classes;
    std::vector<Matrix> noise;                        // one per forget class
    std::vector<std::vector<double>> ce_trajectory;   // CE before each ascent step and after the last
};

/// Gradient ascent on CE(model(noise), forget label) from standard-normal noise.
UnsirNoise unsir_make_noise(const MlpModel& model, std::span<const int> forget_classes,
                            const MethodParams& params, std::size_t input_dim, Rng& rng);

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

/// Called after every epoch (and once with epoch 0 before the first).
using UnlearnHook = std::function<void(const MlpModel&, EpochRecord&)>;

struct UnlearnResult {
    MlpModel model;
    History history;
    std::optional<UnsirNoise> unsir_noise;
};

/// Runs the configured method. With use_cmf the head is rebuilt from
/// retain+forget features before the first epoch and after every epoch, and
/// only the encoder is trained.
UnlearnResult run_unlearning(const MlpModel& model, const Dataset& retain, const Dataset& forget,
                             const SplitSpec& spec, const UnlearnConfig& config,
                             const UnlearnHook& hook = {});

/// UNSIR with explicit phases: `impair_epochs` of noise+retain training, then
/// the remaining epochs retain-only. impair_epochs = 0 reduces to retain_ft.
UnlearnResult unsir_impair_repair(const MlpModel& model, const Dataset& retain_subset,
                                  const SplitSpec& spec, const UnlearnConfig& config,
                                  const UnlearnHook& hook = {});

}  // namespace ulns
