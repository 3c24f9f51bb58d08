#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "ulns/dataset.hpp"
#include "ulns/numerics.hpp"

namespace ulns {

enum class Activation { relu };

/// Logits = H * W^T + b.
struct LinearHead {
    Matrix weight;             // K x d
    std::vector<double> bias;  // K

    std::size_t classes() const noexcept { return weight.rows(); }
    std::size_t input_dim() const noexcept { return weight.cols(); }

    friend bool operator==(const LinearHead&, const LinearHead&) = default;
};

struct DenseLayer {
    Matrix weight;  // out x in
    std::vector<double> bias;

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Feature extractor (stack of relu layers) followed by a linear head. The
/// features are the post-activation outputs of the last hidden layer; with no
/// hidden layers the features are the inputs themselves.
struct MlpModel {
    std::vector<DenseLayer> hidden;
    Activation activation = Activation::relu;
    LinearHead head;

    std::size_t input_dim() const noexcept;
    std::size_t feature_dim() const noexcept;
    std::size_t class_count() const noexcept { return head.classes(); }

    /// Layer dimensions chain and the head matches feature_dim. Throws ShapeError.
    void check() const;

    friend bool operator==(const MlpModel&, const MlpModel&) = default;
};

struct FeatureSet {
    Matrix features;  // N x d
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
};

/// He-normal hidden layers, U(-1/sqrt(d), 1/sqrt(d)) head, zero biases.
MlpModel make_mlp(std::size_t input_dim, std::span<const std::size_t> hidden_dims,
                  std::size_t classes, std::uint64_t seed);

/// Default architecture d_in -> 64 -> 32 -> K.
MlpModel make_default_mlp(std::size_t input_dim, std::size_t classes, std::uint64_t seed);

/// Same shapes, all zeros.
MlpModel zeros_like(const MlpModel& model);

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct ForwardResult {
    Matrix features;
    Matrix logits;
};

ForwardResult forward(const MlpModel& model, const Matrix& inputs);
Matrix head_logits(const LinearHead& head, const Matrix& features);
FeatureSet extract_features(const MlpModel& model, const Dataset& dataset);

/// activations[0] = inputs, activations[l] = relu output of hidden layer l.
struct ForwardCache {
    std::vector<Matrix> activations;
    Matrix logits;

    const Matrix& features() const { return activations.back(); }
};

ForwardCache forward_cached(const MlpModel& model, const Matrix& inputs);

/// Backpropagates dLoss/dlogits. When `input_grad` is non-null it receives
/// dLoss/dinputs.
MlpModel backward(const MlpModel& model, const ForwardCache& cache, const Matrix& dlogits,
                  Matrix* input_grad = nullptr);

/// Mean cross-entropy over rows; fills dlogits (already divided by N) when non-null.
/// Throws InvalidInput for labels outside [0, K).
double cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix* dlogits);

struct LossAndGrads {
    double loss = 0.0;
    MlpModel grads;
};

/// Adds (weight_decay/2)*||params||^2 to the loss and weight_decay*params to grads.
void add_weight_decay(LossAndGrads& lg, const MlpModel& model, double weight_decay);

/// Mean cross-entropy + (weight_decay/2)*||params||^2 with exact gradients.
LossAndGrads ce_loss_and_grads(const MlpModel& model, const Matrix& inputs,
                               std::span<const int> labels, double weight_decay = 0.0);

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

enum class ParamGroup { encoder, head };

/// One contiguous parameter tensor. Order: hidden[0].weight, hidden[0].bias,
/// ..., head.weight, head.bias.
struct ParamView {
    std::span<double> values;
    ParamGroup group;
};
struct ConstParamView {
    std::span<const double> values;
    ParamGroup group;
};

std::vector<ParamView> parameter_views(MlpModel& model);
std::vector<ConstParamView> parameter_views(const MlpModel& model);
std::size_t parameter_count(const MlpModel& model);
bool model_is_finite(const MlpModel& model);

/// Binary keep/drop flag per parameter, laid out like parameter_views().
struct ParameterMask {
    std::vector<std::vector<std::uint8_t>> tensors;

    std::size_t kept() const noexcept;
    std::size_t total() const noexcept;
};

// ---------------------------------------------------------------------------
// Optimisation
// ---------------------------------------------------------------------------

/// Which parameter groups an optimiser may touch. encoder_only is used when
/// the head is frozen (class-mean-feature head).
enum class TrainScope { full, classifier_only, encoder_only };

bool scope_trains(TrainScope scope, ParamGroup group) noexcept;

/// Rescales `grads` to global L2 norm `max_norm` over the groups `scope`
/// trains, when it exceeds it. Returns the pre-clip norm.
double clip_global_norm(MlpModel& grads, double max_norm, TrainScope scope);

/// dst += scale * src, tensor by tensor.
void axpy(MlpModel& dst, double scale, const MlpModel& src);

struct SgdConfig {
    double learning_rate = 0.01;
    double momentum = 0.0;
    std::optional<double> grad_clip;  // global L2 norm over trainable params
    TrainScope scope = TrainScope::full;
};

/// SGD with heavy-ball momentum (v <- m*v + g; p <- p - lr*v). Frozen groups
/// and masked-out entries are never written.
class SgdOptimizer {
public:
    SgdOptimizer(const MlpModel& shape, SgdConfig config);

    void set_mask(ParameterMask mask);
    /// `grads` may be rescaled in place by clipping and masking.
    void step(MlpModel& model, MlpModel& grads);

    const SgdConfig& config() const noexcept { return config_; }

private:
    SgdConfig config_;
    MlpModel velocity_;
    std::optional<ParameterMask> mask_;
};

struct TrainConfig {
    int epochs = 50;
    std::size_t batch_size = 128;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::uint64_t seed = 0;
    std::optional<int> early_stop_patience;

    void check() const;
};

/// Six accuracies (percent) attached to a history row by an evaluation hook.
struct AccuracyGrid {
    double output_retain = 0.0;
    double output_forget = 0.0;
    double probe_retain = 0.0;
    double probe_forget = 0.0;
    double ncc_retain = 0.0;
    double ncc_forget = 0.0;
};

struct EpochRecord {
    int epoch = 0;  // 1-based; 0 marks the pre-training snapshot
    double loss = 0.0;
    std::optional<AccuracyGrid> accuracy;
};

using History = std::vector<EpochRecord>;

/// Data loss (no weight decay) on one mini-batch.
using BatchLoss =
    std::function<LossAndGrads(const MlpModel&, const Matrix& inputs, std::span<const int> labels)>;
using EpochHook = std::function<void(const MlpModel&, EpochRecord&)>;

struct TrainOptions {
    TrainScope scope = TrainScope::full;
    BatchLoss loss;                          // defaults to cross-entropy
    EpochHook on_epoch;                      // optional
    const Dataset* validation = nullptr;     // enables early stopping
};

struct TrainResult {
    MlpModel model;
    History history;
    int epochs_run = 0;
};

/// Mini-batch SGD: per-epoch Fisher-Yates shuffle, last partial batch kept,
/// weight decay applied to every parameter. Throws TrainingDiverged(epoch)
/// when the loss goes non-finite.
TrainResult train(MlpModel model, const Dataset& dataset, const TrainConfig& config,
                  const TrainOptions& options = {});

/// Top-1 accuracy (percent) of argmax logits, restricted to samples whose
/// label satisfies `keep` (all samples when empty). Ties go to the lowest index.
double output_accuracy(const Matrix& logits, std::span<const int> labels,
                       const std::function<bool(int)>& keep = {});

std::vector<int> argmax_rows(const Matrix& scores);

// Checkpoint, little-endian:
//   "ULNM" | version:u32 | activation:u32 | layer_count:u32 |
//   per layer (hidden layers then head): out:u64 | in:u64 | weight:f64[out*in] | bias:f64[out]
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

void write_checkpoint(const MlpModel& model, const std::filesystem::path& path);
MlpModel read_checkpoint(const std::filesystem::path& path);

}  // namespace ulns
