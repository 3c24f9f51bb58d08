#include "ulns/unlearn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ulns/error.hpp"
#include "ulns/geometry.hpp"

namespace ulns {

std::string_view method_name(UnlearnMethod method) {
    switch (method) {
        case UnlearnMethod::retain_ft: return "retain_ft";
        case UnlearnMethod::neggrad_plus: return "neggrad_plus";
        case UnlearnMethod::random_label: return "random_label";
        case UnlearnMethod::salun: return "salun";
        case UnlearnMethod::scrub: return "scrub";
        case UnlearnMethod::unsir: return "unsir";
    }
    return "unknown";
}

UnlearnMethod parse_method(std::string_view name) {
    for (auto m : {UnlearnMethod::retain_ft, UnlearnMethod::neggrad_plus, UnlearnMethod::random_label,
                   UnlearnMethod::salun, UnlearnMethod::scrub, UnlearnMethod::unsir})
        if (method_name(m) == name) return m;
    throw Error(ErrorKind::InvalidConfig, "unknown unlearning method '" + std::string(name) + "'");
}

std::string_view scope_name(TrainScope scope) {
    switch (scope) {
        case TrainScope::full: return "full";
        case TrainScope::classifier_only: return "classifier_only";
        case TrainScope::encoder_only: return "encoder_only";
    }
    return "unknown";
}

TrainScope parse_scope(std::string_view name) {
    if (name == "full") return TrainScope::full;
    if (name == "classifier_only") return TrainScope::classifier_only;
    throw Error(ErrorKind::InvalidConfig, "unknown scope '" + std::string(name) + "'");
}

void UnlearnConfig::check() const {
    if (epochs < 1) throw Error(ErrorKind::InvalidConfig, "epochs must be >= 1");
    if (batch_size < 1) throw Error(ErrorKind::InvalidConfig, "batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) throw Error(ErrorKind::InvalidConfig, "learning_rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorKind::InvalidConfig, "momentum must lie in [0, 1)");
    if (scope == TrainScope::encoder_only)
        throw Error(ErrorKind::InvalidConfig, "scope must be full or classifier_only");
    if (use_cmf && scope == TrainScope::classifier_only)
        throw Error(ErrorKind::InvalidConfig, "the CMF head is frozen, so classifier_only has nothing to train");
    if (!(params.salun_threshold > 0.0 && params.salun_threshold < 1.0))
        throw Error(ErrorKind::InvalidConfig, "salun_threshold must lie in (0, 1)");
    if (params.grad_clip && !(*params.grad_clip > 0.0))
        throw Error(ErrorKind::InvalidConfig, "grad_clip must be > 0");
    if (params.scrub_msteps < 0) throw Error(ErrorKind::InvalidConfig, "scrub_msteps must be >= 0");
    if (!(params.scrub_kd_temperature > 0.0)) throw Error(ErrorKind::InvalidConfig, "scrub temperature must be > 0");
    if (params.unsir_noise_steps < 0) throw Error(ErrorKind::InvalidConfig, "unsir_noise_steps must be >= 0");
    if (params.unsir_noise_samples < 1) throw Error(ErrorKind::InvalidConfig, "unsir_noise_samples must be >= 1");
    if (params.unsir_impair_epochs < 0 || params.unsir_impair_epochs > epochs)
        throw Error(ErrorKind::InvalidConfig, "unsir_impair_epochs must lie in [0, epochs]");
}

std::optional<double> UnlearnConfig::effective_grad_clip() const {
    if (params.grad_clip) return params.grad_clip;
    if (method == UnlearnMethod::neggrad_plus) return 1.0;
    return std::nullopt;
}

// ---------------------------------------------------------------------------

LinearHead cmf_head(const MlpModel& model, const Dataset& dataset) {
    const int k = static_cast<int>(model.class_count());
    ClassMeans means = class_means(extract_features(model, dataset), k);
    LinearHead head{Matrix(means.classes(), means.dim()), std::vector<double>(means.classes(), 0.0)};
    for (std::size_t c = 0; c < means.classes(); ++c) {
        auto w = head.weight.row(c);
        auto mu = means.mu.row(c);
        for (std::size_t j = 0; j < w.size(); ++j) w[j] = mu[j] - means.mu_global[j];
        const double n = norm(w);
        if (!(n > 0.0)) throw IndexedError(ErrorKind::DegenerateGeometry, static_cast<long>(c), "centred class mean is zero");
        for (double& v : w) v /= n;
    }
    return head;
}

LossAndGrads loss_retain_ft(const MlpModel& model, const Matrix& retain_x, std::span<const int> retain_y) {
    return ce_loss_and_grads(model, retain_x, retain_y);
}

LossAndGrads loss_neggrad_plus(const MlpModel& model, const Matrix& retain_x, std::span<const int> retain_y,
                               const Matrix& forget_x, std::span<const int> forget_y, double retain_weight) {
    LossAndGrads retain = ce_loss_and_grads(model, retain_x, retain_y);
    LossAndGrads forget = ce_loss_and_grads(model, forget_x, forget_y);
    LossAndGrads out{retain_weight * retain.loss - forget.loss, zeros_like(model)};
    axpy(out.grads, retain_weight, retain.grads);
    axpy(out.grads, -1.0, forget.grads);
    return out;
}

std::vector<int> random_relabel(std::span<const int> labels, const SplitSpec& spec, Rng& rng) {
    std::vector<int> out(labels.begin(), labels.end());
    const auto n_retain = static_cast<std::uint64_t>(spec.retain_classes.size());
    for (int& y : out)
        if (spec.is_forget(y)) y = spec.retain_classes[static_cast<std::size_t>(rng.uniform_int(n_retain))];
    return out;
}

LossAndGrads loss_random_label(const MlpModel& model, const Matrix& inputs, std::span<const int> targets) {
    return ce_loss_and_grads(model, inputs, targets);
}

LossAndGrads loss_scrub_kd(const MlpModel& student, const Matrix& teacher_logits, const Matrix& inputs,
                           double temperature) {
    ForwardCache cache = forward_cached(student, inputs);
    if (teacher_logits.rows() != cache.logits.rows() || teacher_logits.cols() != cache.logits.cols())
        throw Error(ErrorKind::ShapeError, "teacher logits do not match the batch");
    const std::size_t n = inputs.rows();
    const std::size_t k = cache.logits.cols();
    Matrix dlogits(n, k);
    std::vector<double> pt(k), ps(k);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        auto zt = teacher_logits.row(i);
        auto zs = cache.logits.row(i);
        for (std::size_t c = 0; c < k; ++c) {
            pt[c] = zt[c] / temperature;
            ps[c] = zs[c] / temperature;
        }
        const double lse_t = log_sum_exp(pt);
        const double lse_s = log_sum_exp(ps);
        double kl = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            const double log_pt = pt[c] - lse_t;
            const double log_ps = ps[c] - lse_s;
            const double p_t = std::exp(log_pt);
            kl += p_t * (log_pt - log_ps);
            // d/dz_s of T^2 * KL = T * (p_s - p_t)
            dlogits(i, c) = temperature * (std::exp(log_ps) - p_t) / static_cast<double>(n);
        }
        total += kl;
    }
    return {temperature * temperature * total / static_cast<double>(n), backward(student, cache, dlogits)};
}

LossAndGrads loss_scrub_retain(const MlpModel& student, const Matrix& teacher_logits, const Matrix& inputs,
                               std::span<const int> labels, double temperature, double kd_weight) {
    LossAndGrads kd = loss_scrub_kd(student, teacher_logits, inputs, temperature);
    LossAndGrads ce = ce_loss_and_grads(student, inputs, labels);
    ce.loss += kd_weight * kd.loss;
    axpy(ce.grads, kd_weight, kd.grads);
    return ce;
}

double noise_ce_and_grad(const MlpModel& model, const Matrix& noise, int label, Matrix* grad) {
    ForwardCache cache = forward_cached(model, noise);
    std::vector<int> labels(noise.rows(), label);
    Matrix dlogits;
    const double ce = cross_entropy(cache.logits, labels, grad ? &dlogits : nullptr);
    if (grad != nullptr) backward(model, cache, dlogits, grad);
    return ce;
}

// ---------------------------------------------------------------------------

SaliencyMask salun_mask(const MlpModel& model, const Dataset& forget, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw Error(ErrorKind::InvalidConfig, "salun threshold must lie in (0, 1)");
    if (forget.size() == 0) throw Error(ErrorKind::InvalidInput, "empty forget set");
    LossAndGrads lg = ce_loss_and_grads(model, forget.inputs, forget.labels);

    auto views = parameter_views(lg.grads);
    std::vector<double> saliency;
    saliency.reserve(parameter_count(model));
    for (const auto& v : views)
        for (double g : v.values) saliency.push_back(std::abs(g));

    const std::size_t total = saliency.size();
    const auto keep = static_cast<std::size_t>(std::llround(threshold * static_cast<double>(total)));
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto more_salient = [&](std::size_t a, std::size_t b) {
        return saliency[a] != saliency[b] ? saliency[a] > saliency[b] : a < b;
    };
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(keep, total)),
                     order.end(), more_salient);

    std::vector<std::uint8_t> flat(total, 0);
    for (std::size_t i = 0; i < keep && i < total; ++i) flat[order[i]] = 1;

    SaliencyMask mask;
    std::size_t offset = 0;
    for (const auto& v : views) {
        mask.tensors.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                                  flat.begin() + static_cast<std::ptrdiff_t>(offset + v.values.size()));
        offset += v.values.size();
    }
    return mask;
}

namespace {

constexpr std::uint64_t kAuxStreamSalt = 0xA5A5'0F0F'3C3C'9696ULL;

void require_finite(double loss, int epoch) {
    if (!std::isfinite(loss)) throw IndexedError(ErrorKind::TrainingDiverged, epoch, "unlearning loss became non-finite");
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    return order;
}

/// One shuffled pass of mini-batch steps; returns the sample-weighted mean loss.
template <typename LossFn>
double minibatch_pass(MlpModel& model, const Dataset& data, std::size_t batch_size, SgdOptimizer& opt, Rng& rng,
                      int epoch, LossFn&& loss) {
    if (data.size() == 0) throw Error(ErrorKind::InvalidInput, "empty dataset in an unlearning pass");
    auto order = shuffled_indices(data.size(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t stop = std::min(order.size(), start + batch_size);
        Dataset batch = data.subset(std::span<const std::size_t>(order.data() + start, stop - start));
        LossAndGrads lg = loss(model, batch);
        require_finite(lg.loss, epoch);
        total += lg.loss * static_cast<double>(batch.size());
        opt.step(model, lg.grads);
    }
    return total / static_cast<double>(data.size());
}

Dataset noise_dataset(const UnsirNoise& noise, int class_count) {
    Dataset out;
    out.class_count = class_count;
    std::size_t rows = 0;
    for (const auto& m : noise.noise) rows += m.rows();
    const std::size_t d = noise.noise.empty() ? 0 : noise.noise.front().cols();
    out.inputs = Matrix(rows, d);
    std::size_t r = 0;
    for (std::size_t c = 0; c < noise.noise.size(); ++c) {
        for (std::size_t i = 0; i < noise.noise[c].rows(); ++i, ++r) {
            auto src = noise.noise[c].row(i);
            std::copy(src.begin(), src.end(), out.inputs.row(r).begin());
            out.labels.push_back(noise.classes[c]);
        }
    }
    return out;
}

class UnlearnRunner {
public:
    UnlearnRunner(const MlpModel& original, const Dataset& retain, const Dataset& forget, const SplitSpec& spec,
                  const UnlearnConfig& config, const UnlearnHook& hook)
        : original_(original),
          retain_(retain),
          forget_(forget),
          spec_(spec),
          config_(config),
          hook_(hook),
          batch_rng_(config.seed),
          aux_rng_(config.seed ^ kAuxStreamSalt) {}

    UnlearnResult run() {
        config_.check();
        original_.check();
        if (static_cast<int>(original_.class_count()) != spec_.class_count)
            throw Error(ErrorKind::InvalidConfig, "split spec class count differs from the model");
        if (retain_.size() == 0) throw Error(ErrorKind::InvalidInput, "retain set is empty");
        const bool needs_forget = config_.method != UnlearnMethod::retain_ft && config_.method != UnlearnMethod::unsir;
        if ((needs_forget || config_.use_cmf) && forget_.size() == 0)
            throw Error(ErrorKind::InvalidInput, "forget set is empty");

        UnlearnResult result;
        result.model = original_;
        MlpModel& model = result.model;
        Dataset full;
        if (config_.use_cmf) {
            full = concat(retain_, forget_);
            model.head = cmf_head(model, full);
        }
        const TrainScope scope = config_.use_cmf ? TrainScope::encoder_only : config_.scope;
        SgdOptimizer opt(model, {config_.learning_rate, config_.momentum, config_.effective_grad_clip(), scope});

        if (config_.method == UnlearnMethod::salun)
            opt.set_mask(salun_mask(model, forget_, config_.params.salun_threshold));
        if (config_.method == UnlearnMethod::unsir && config_.params.unsir_impair_epochs > 0)
            result.unsir_noise = unsir_make_noise(model, spec_.forget_classes, config_.params,
                                                  model.input_dim(), aux_rng_);

        record(model, 0, cross_entropy(forward(model, retain_.inputs).logits, retain_.labels, nullptr),
               result.history);

        for (int epoch = 1; epoch <= config_.epochs; ++epoch) {
            const double loss = run_epoch(model, epoch, opt, result.unsir_noise);
            require_finite(loss, epoch);
            if (!model_is_finite(model))
                throw IndexedError(ErrorKind::TrainingDiverged, epoch, "parameters became non-finite");
            if (config_.use_cmf) model.head = cmf_head(model, full);
            record(model, epoch, loss, result.history);
        }
        return result;
    }

private:
    void record(const MlpModel& model, int epoch, double loss, History& history) {
        EpochRecord rec{epoch, loss, std::nullopt};
        if (hook_) hook_(model, rec);
        history.push_back(rec);
    }

    double retain_pass(MlpModel& model, int epoch, SgdOptimizer& opt) {
        return minibatch_pass(model, retain_, config_.batch_size, opt, batch_rng_, epoch,
                              [](const MlpModel& m, const Dataset& b) { return loss_retain_ft(m, b.inputs, b.labels); });
    }

    double run_epoch(MlpModel& model, int epoch, SgdOptimizer& opt, const std::optional<UnsirNoise>& noise) {
        switch (config_.method) {
            case UnlearnMethod::retain_ft:
                return retain_pass(model, epoch, opt);

            case UnlearnMethod::random_label:
            case UnlearnMethod::salun: {
                Dataset relabelled = forget_;
                relabelled.labels = random_relabel(forget_.labels, spec_, aux_rng_);
                Dataset mixed = concat(relabelled, retain_);
                return minibatch_pass(model, mixed, config_.batch_size, opt, batch_rng_, epoch,
                                      [](const MlpModel& m, const Dataset& b) {
                                          return loss_random_label(m, b.inputs, b.labels);
                                      });
            }

            case UnlearnMethod::neggrad_plus: {
                // Epoch = one pass over the retain set; equal-sized forget
                // batches cycle through a reshuffled forget order.
                auto forget_order = shuffled_indices(forget_.size(), batch_rng_);
                std::size_t cursor = 0;
                const double w = config_.params.neggrad_retain_weight;
                return minibatch_pass(model, retain_, config_.batch_size, opt, batch_rng_, epoch,
                                      [&](const MlpModel& m, const Dataset& b) {
                                          std::vector<std::size_t> idx;
                                          const std::size_t want = std::min(b.size(), forget_.size());
                                          while (idx.size() < want) {
                                              if (cursor == forget_order.size()) {
                                                  forget_order = shuffled_indices(forget_.size(), batch_rng_);
                                                  cursor = 0;
                                              }
                                              idx.push_back(forget_order[cursor++]);
                                          }
                                          Dataset fb = forget_.subset(idx);
                                          return loss_neggrad_plus(m, b.inputs, b.labels, fb.inputs, fb.labels, w);
                                      });
            }

            case UnlearnMethod::scrub:
                return scrub_epoch(model, original_, retain_, forget_, epoch - 1, config_, opt, batch_rng_);

            case UnlearnMethod::unsir: {
                if (epoch <= config_.params.unsir_impair_epochs && noise) {
                    Dataset impair = concat(noise_dataset(*noise, spec_.class_count), retain_);
                    return minibatch_pass(model, impair, config_.batch_size, opt, batch_rng_, epoch,
                                          [](const MlpModel& m, const Dataset& b) {
                                              return ce_loss_and_grads(m, b.inputs, b.labels);
                                          });
                }
                return retain_pass(model, epoch, opt);
            }
        }
        throw Error(ErrorKind::InvalidConfig, "unhandled method");
    }

    const MlpModel& original_;
    const Dataset& retain_;
    const Dataset& forget_;
    const SplitSpec& spec_;
    const UnlearnConfig& config_;
    const UnlearnHook& hook_;
    Rng batch_rng_;
    Rng aux_rng_;
};

}  // namespace

double scrub_epoch(MlpModel& student, const MlpModel& teacher, const Dataset& retain, const Dataset& forget,
                   int epoch_index, const UnlearnConfig& config, SgdOptimizer& optimizer, Rng& rng) {
    const double t = config.params.scrub_kd_temperature;
    const double kd_weight = config.params.scrub_kd_weight;
    if (epoch_index < config.params.scrub_msteps) {
        minibatch_pass(student, forget, config.batch_size, optimizer, rng, epoch_index + 1,
                       [&](const MlpModel& m, const Dataset& b) {
                           Matrix teacher_logits = forward(teacher, b.inputs).logits;
                           LossAndGrads lg = loss_scrub_kd(m, teacher_logits, b.inputs, t);
                           // ascend the divergence
                           LossAndGrads neg{-kd_weight * lg.loss, zeros_like(m)};
                           axpy(neg.grads, -kd_weight, lg.grads);
                           return neg;
                       });
    }
    return minibatch_pass(student, retain, config.batch_size, optimizer, rng, epoch_index + 1,
                          [&](const MlpModel& m, const Dataset& b) {
                              Matrix teacher_logits = forward(teacher, b.inputs).logits;
                              return loss_scrub_retain(m, teacher_logits, b.inputs, b.labels, t, kd_weight);
                          });
}

UnsirNoise unsir_make_noise(const MlpModel& model, std::span<const int> forget_classes, const MethodParams& params,
                            std::size_t input_dim, Rng& rng) {
    UnsirNoise out;
    for (int c : forget_classes) {
        Matrix noise(params.unsir_noise_samples, input_dim);
        for (double& v : noise.flat()) v = rng.normal();
        std::vector<double> trajectory;
        Matrix grad;
        for (int step = 0; step < params.unsir_noise_steps; ++step) {
            trajectory.push_back(noise_ce_and_grad(model, noise, c, &grad));
            for (std::size_t i = 0; i < noise.size(); ++i) noise.flat()[i] += params.unsir_noise_lr * grad.flat()[i];
        }
        trajectory.push_back(noise_ce_and_grad(model, noise, c, nullptr));
        out.classes.push_back(c);
        out.noise.push_back(std::move(noise));
        out.ce_trajectory.push_back(std::move(trajectory));
    }
    return out;
}

UnlearnResult run_unlearning(const MlpModel& model, const Dataset& retain, const Dataset& forget,
                             const SplitSpec& spec, const UnlearnConfig& config, const UnlearnHook& hook) {
    return UnlearnRunner(model, retain, forget, spec, config, hook).run();
}

UnlearnResult unsir_impair_repair(const MlpModel& model, const Dataset& retain_subset, const SplitSpec& spec,
                                  const UnlearnConfig& config, const UnlearnHook& hook) {
    UnlearnConfig cfg = config;
    cfg.method = UnlearnMethod::unsir;
    cfg.use_cmf = false;
    Dataset no_forget;
    no_forget.class_count = retain_subset.class_count;
    no_forget.inputs = Matrix(0, retain_subset.input_dim());
    return UnlearnRunner(model, retain_subset, no_forget, spec, cfg, hook).run();
}

}  // namespace ulns
