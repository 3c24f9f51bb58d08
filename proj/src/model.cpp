#include "ulns/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "binary_io.hpp"
#include "ulns/error.hpp"

namespace ulns {

std::size_t MlpModel::input_dim() const noexcept {
    return hidden.empty() ? head.input_dim() : hidden.front().weight.cols();
}

std::size_t MlpModel::feature_dim() const noexcept {
    return hidden.empty() ? head.input_dim() : hidden.back().weight.rows();
}

void MlpModel::check() const {
    std::size_t prev = input_dim();
    for (std::size_t l = 0; l < hidden.size(); ++l) {
        const auto& layer = hidden[l];
        if (layer.weight.cols() != prev || layer.bias.size() != layer.weight.rows())
            throw Error(ErrorKind::ShapeError, "hidden layer " + std::to_string(l) + " does not chain");
        prev = layer.weight.rows();
    }
    if (head.weight.cols() != prev || head.bias.size() != head.weight.rows())
        throw Error(ErrorKind::ShapeError, "head input dim differs from feature dim");
    if (head.classes() < 2) throw Error(ErrorKind::ShapeError, "head needs K >= 2");
}

MlpModel make_mlp(std::size_t input_dim, std::span<const std::size_t> hidden_dims, std::size_t classes,
                  std::uint64_t seed) {
    if (input_dim == 0 || classes < 2) throw Error(ErrorKind::InvalidConfig, "need d_in >= 1 and K >= 2");
    Rng rng(seed);
    MlpModel m;
    std::size_t fan_in = input_dim;
    for (std::size_t width : hidden_dims) {
        if (width == 0) throw Error(ErrorKind::InvalidConfig, "hidden width must be >= 1");
        DenseLayer layer{Matrix(width, fan_in), std::vector<double>(width, 0.0)};
        const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (double& w : layer.weight.flat()) w = sd * rng.normal();
        m.hidden.push_back(std::move(layer));
        fan_in = width;
    }
    m.head.weight = Matrix(classes, fan_in);
    m.head.bias.assign(classes, 0.0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& w : m.head.weight.flat()) w = bound * (2.0 * rng.uniform() - 1.0);
    return m;
}

MlpModel make_default_mlp(std::size_t input_dim, std::size_t classes, std::uint64_t seed) {
    const std::size_t widths[] = {64, 32};
    return make_mlp(input_dim, widths, classes, seed);
}

MlpModel zeros_like(const MlpModel& model) {
    MlpModel z = model;
    for (auto& v : parameter_views(z)) std::fill(v.values.begin(), v.values.end(), 0.0);
    return z;
}

// ---------------------------------------------------------------------------

namespace {

void add_bias_rows(Matrix& m, const std::vector<double>& bias) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto row = m.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[j];
    }
}

void column_sums_into(const Matrix& m, std::vector<double>& out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto row = m.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) out[j] += row[j];
    }
}

}  // namespace

Matrix head_logits(const LinearHead& head, const Matrix& features) {
    if (features.cols() != head.input_dim())
        throw Error(ErrorKind::ShapeError, "feature dim " + std::to_string(features.cols()) +
                                               " != head input dim " + std::to_string(head.input_dim()));
    Matrix logits = matmul_bt(features, head.weight);
    add_bias_rows(logits, head.bias);
    return logits;
}

ForwardCache forward_cached(const MlpModel& model, const Matrix& inputs) {
    if (inputs.cols() != model.input_dim())
        throw Error(ErrorKind::ShapeError, "input has " + std::to_string(inputs.cols()) +
                                               " columns, model expects " + std::to_string(model.input_dim()));
    ForwardCache cache;
    cache.activations.reserve(model.hidden.size() + 1);
    cache.activations.push_back(inputs);
    for (const auto& layer : model.hidden) {
        Matrix z = matmul_bt(cache.activations.back(), layer.weight);
        add_bias_rows(z, layer.bias);
        for (double& v : z.flat()) v = v > 0.0 ? v : 0.0;
        cache.activations.push_back(std::move(z));
    }
    cache.logits = head_logits(model.head, cache.activations.back());
    return cache;
}

ForwardResult forward(const MlpModel& model, const Matrix& inputs) {
    ForwardCache cache = forward_cached(model, inputs);
    return {std::move(cache.activations.back()), std::move(cache.logits)};
}

FeatureSet extract_features(const MlpModel& model, const Dataset& dataset) {
    return {forward(model, dataset.inputs).features, dataset.labels};
}

MlpModel backward(const MlpModel& model, const ForwardCache& cache, const Matrix& dlogits, Matrix* input_grad) {
    MlpModel grads = model;
    grads.head.weight = matmul_at(dlogits, cache.features());
    column_sums_into(dlogits, grads.head.bias);

    Matrix upstream = matmul(dlogits, model.head.weight);  // dL/d features
    for (std::size_t l = model.hidden.size(); l-- > 0;) {
        const Matrix& out = cache.activations[l + 1];
        // relu'(z) = 1 exactly where the stored activation is positive
        for (std::size_t i = 0; i < upstream.size(); ++i)
            if (!(out.flat()[i] > 0.0)) upstream.flat()[i] = 0.0;
        grads.hidden[l].weight = matmul_at(upstream, cache.activations[l]);
        column_sums_into(upstream, grads.hidden[l].bias);
        if (l > 0 || input_grad != nullptr) upstream = matmul(upstream, model.hidden[l].weight);
    }
    if (input_grad != nullptr) *input_grad = std::move(upstream);
    return grads;
}

double cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix* dlogits) {
    if (labels.size() != logits.rows()) throw Error(ErrorKind::ShapeError, "label count != logit rows");
    const std::size_t n = logits.rows();
    const std::size_t k = logits.cols();
    if (k == 0 && n > 0) throw Error(ErrorKind::InvalidInput, "cross entropy over zero classes");
    if (dlogits != nullptr) *dlogits = Matrix(n, k);
    const double inv_n = n == 0 ? 0.0 : 1.0 / static_cast<double>(n);
    double total = 0.0;
    std::vector<double> e(k);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= k)
            throw Error(ErrorKind::InvalidInput, "label " + std::to_string(y) + " outside [0, K)");
        auto z = logits.row(i);
        const double zmax = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            e[j] = std::exp(z[j] - zmax);
            sum += e[j];
        }
        total += zmax + std::log(sum) - z[static_cast<std::size_t>(y)];
        if (dlogits != nullptr) {
            auto d = dlogits->row(i);
            const double scale = inv_n / sum;
            for (std::size_t j = 0; j < k; ++j) d[j] = e[j] * scale;
            d[static_cast<std::size_t>(y)] -= inv_n;
        }
    }
    if (!std::isfinite(total)) throw Error(ErrorKind::InvalidInput, "non-finite logits in cross entropy");
    return total * inv_n;
}

void add_weight_decay(LossAndGrads& lg, const MlpModel& model, double weight_decay) {
    if (weight_decay == 0.0) return;
    auto params = parameter_views(model);
    auto grads = parameter_views(lg.grads);
    double sq = 0.0;
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto p = params[t].values;
        auto g = grads[t].values;
        for (std::size_t i = 0; i < p.size(); ++i) {
            sq += p[i] * p[i];
            g[i] += weight_decay * p[i];
        }
    }
    lg.loss += 0.5 * weight_decay * sq;
}

LossAndGrads ce_loss_and_grads(const MlpModel& model, const Matrix& inputs, std::span<const int> labels,
                               double weight_decay) {
    ForwardCache cache = forward_cached(model, inputs);
    Matrix dlogits;
    LossAndGrads lg;
    lg.loss = cross_entropy(cache.logits, labels, &dlogits);
    lg.grads = backward(model, cache, dlogits);
    add_weight_decay(lg, model, weight_decay);
    return lg;
}

// ---------------------------------------------------------------------------

std::vector<ParamView> parameter_views(MlpModel& model) {
    std::vector<ParamView> views;
    for (auto& layer : model.hidden) {
        views.push_back({layer.weight.flat(), ParamGroup::encoder});
        views.push_back({layer.bias, ParamGroup::encoder});
    }
    views.push_back({model.head.weight.flat(), ParamGroup::head});
    views.push_back({model.head.bias, ParamGroup::head});
    return views;
}

std::vector<ConstParamView> parameter_views(const MlpModel& model) {
    std::vector<ConstParamView> views;
    for (const auto& layer : model.hidden) {
        views.push_back({layer.weight.flat(), ParamGroup::encoder});
        views.push_back({layer.bias, ParamGroup::encoder});
    }
    views.push_back({model.head.weight.flat(), ParamGroup::head});
    views.push_back({model.head.bias, ParamGroup::head});
    return views;
}

std::size_t parameter_count(const MlpModel& model) {
    std::size_t n = 0;
    for (const auto& v : parameter_views(model)) n += v.values.size();
    return n;
}

std::size_t ParameterMask::kept() const noexcept {
    std::size_t n = 0;
    for (const auto& t : tensors) n += static_cast<std::size_t>(std::count(t.begin(), t.end(), std::uint8_t{1}));
    return n;
}

std::size_t ParameterMask::total() const noexcept {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
}

bool scope_trains(TrainScope scope, ParamGroup group) noexcept {
    switch (scope) {
        case TrainScope::full: return true;
        case TrainScope::classifier_only: return group == ParamGroup::head;
        case TrainScope::encoder_only: return group == ParamGroup::encoder;
    }
    return false;
}

double clip_global_norm(MlpModel& grads, double max_norm, TrainScope scope) {
    auto views = parameter_views(grads);
    double sq = 0.0;
    for (const auto& g : views)
        if (scope_trains(scope, g.group)) sq += squared_norm(g.values);
    const double nrm = std::sqrt(sq);
    if (nrm > max_norm) {
        const double s = max_norm / nrm;
        for (auto& g : views)
            if (scope_trains(scope, g.group))
                for (double& v : g.values) v *= s;
    }
    return nrm;
}

void axpy(MlpModel& dst, double scale, const MlpModel& src) {
    auto d = parameter_views(dst);
    auto s = parameter_views(src);
    if (d.size() != s.size()) throw Error(ErrorKind::ShapeError, "axpy: parameter layouts differ");
    for (std::size_t t = 0; t < d.size(); ++t) {
        if (d[t].values.size() != s[t].values.size()) throw Error(ErrorKind::ShapeError, "axpy: tensor sizes differ");
        for (std::size_t i = 0; i < d[t].values.size(); ++i) d[t].values[i] += scale * s[t].values[i];
    }
}

SgdOptimizer::SgdOptimizer(const MlpModel& shape, SgdConfig config)
    : config_(config), velocity_(zeros_like(shape)) {
    if (config_.learning_rate < 0.0) throw Error(ErrorKind::InvalidConfig, "learning rate must be >= 0");
    if (config_.momentum < 0.0 || config_.momentum >= 1.0)
        throw Error(ErrorKind::InvalidConfig, "momentum must lie in [0, 1)");
    if (config_.grad_clip && !(*config_.grad_clip > 0.0))
        throw Error(ErrorKind::InvalidConfig, "grad_clip must be > 0");
}

void SgdOptimizer::set_mask(ParameterMask mask) {
    auto views = parameter_views(velocity_);
    if (mask.tensors.size() != views.size())
        throw Error(ErrorKind::ShapeError, "mask tensor count differs from model");
    for (std::size_t t = 0; t < views.size(); ++t)
        if (mask.tensors[t].size() != views[t].values.size())
            throw Error(ErrorKind::ShapeError, "mask tensor " + std::to_string(t) + " has the wrong size");
    mask_ = std::move(mask);
}

void SgdOptimizer::step(MlpModel& model, MlpModel& grads) {
    auto params = parameter_views(model);
    auto gviews = parameter_views(grads);
    auto vel = parameter_views(velocity_);
    if (params.size() != gviews.size()) throw Error(ErrorKind::ShapeError, "gradient shape differs from model");

    if (mask_) {
        for (std::size_t t = 0; t < gviews.size(); ++t) {
            const auto& m = mask_->tensors[t];
            auto g = gviews[t].values;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (m[i] == 0) g[i] = 0.0;
        }
    }
    if (config_.grad_clip) clip_global_norm(grads, *config_.grad_clip, config_.scope);

    const double lr = config_.learning_rate;
    const double mom = config_.momentum;
    for (std::size_t t = 0; t < params.size(); ++t) {
        if (!scope_trains(config_.scope, params[t].group)) continue;
        auto p = params[t].values;
        auto g = gviews[t].values;
        auto v = vel[t].values;
        const std::uint8_t* m = mask_ ? mask_->tensors[t].data() : nullptr;
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (m != nullptr && m[i] == 0) continue;
            v[i] = mom * v[i] + g[i];
            p[i] -= lr * v[i];
        }
    }
}

// ---------------------------------------------------------------------------

void TrainConfig::check() const {
    if (epochs < 1) throw Error(ErrorKind::InvalidConfig, "epochs must be >= 1");
    if (batch_size < 1) throw Error(ErrorKind::InvalidConfig, "batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) throw Error(ErrorKind::InvalidConfig, "learning_rate must be >= 0");
    if (!(weight_decay >= 0.0)) throw Error(ErrorKind::InvalidConfig, "weight_decay must be >= 0");
    if (early_stop_patience && *early_stop_patience < 1)
        throw Error(ErrorKind::InvalidConfig, "early_stop_patience must be >= 1");
}

TrainResult train(MlpModel model, const Dataset& dataset, const TrainConfig& config, const TrainOptions& options) {
    config.check();
    model.check();
    dataset.check();
    if (dataset.input_dim() != model.input_dim()) throw Error(ErrorKind::ShapeError, "dataset d_in != model input dim");
    if (static_cast<std::size_t>(dataset.class_count) != model.class_count())
        throw Error(ErrorKind::ShapeError, "dataset K != model K");
    if (dataset.size() == 0) throw Error(ErrorKind::InvalidInput, "empty training set");

    const BatchLoss loss = options.loss ? options.loss : BatchLoss([](const MlpModel& m, const Matrix& x, std::span<const int> y) {
        return ce_loss_and_grads(m, x, y);
    });
    const bool early_stop = config.early_stop_patience.has_value() && options.validation != nullptr;

    Rng rng(config.seed);
    SgdOptimizer opt(model, {config.learning_rate, config.momentum, std::nullopt, options.scope});
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainResult result;
    double best_val = std::numeric_limits<double>::infinity();
    MlpModel best_model;
    int since_best = 0;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        rng.shuffle(order);
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            std::span<const std::size_t> idx(order.data() + start, stop - start);
            Dataset batch = dataset.subset(idx);
            LossAndGrads lg;
            try {
                lg = loss(model, batch.inputs, batch.labels);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::InvalidInput) throw;
                throw IndexedError(ErrorKind::TrainingDiverged, epoch, std::string("loss became non-finite: ") + e.what());
            }
            add_weight_decay(lg, model, config.weight_decay);
            if (!std::isfinite(lg.loss))
                throw IndexedError(ErrorKind::TrainingDiverged, epoch, "loss became non-finite");
            total += lg.loss * static_cast<double>(idx.size());
            opt.step(model, lg.grads);
        }
        if (!model_is_finite(model))
            throw IndexedError(ErrorKind::TrainingDiverged, epoch, "parameters became non-finite");
        EpochRecord rec{epoch, total / static_cast<double>(dataset.size()), std::nullopt};
        if (options.on_epoch) options.on_epoch(model, rec);
        result.history.push_back(rec);
        result.epochs_run = epoch;

        if (early_stop) {
            const double val = cross_entropy(forward(model, options.validation->inputs).logits,
                                             options.validation->labels, nullptr);
            if (val < best_val) {
                best_val = val;
                best_model = model;
                since_best = 0;
            } else if (++since_best >= *config.early_stop_patience) {
                model = best_model;
                break;
            }
        }
    }
    result.model = std::move(model);
    return result;
}

bool model_is_finite(const MlpModel& model) {
    for (const auto& v : parameter_views(model))
        for (double x : v.values)
            if (!std::isfinite(x)) return false;
    return true;
}

std::vector<int> argmax_rows(const Matrix& scores) {
    std::vector<int> out(scores.rows());
    for (std::size_t i = 0; i < scores.rows(); ++i) {
        auto row = scores.row(i);
        out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

double output_accuracy(const Matrix& logits, std::span<const int> labels, const std::function<bool(int)>& keep) {
    auto pred = argmax_rows(logits);
    std::size_t hit = 0, seen = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (keep && !keep(labels[i])) continue;
        ++seen;
        if (pred[i] == labels[i]) ++hit;
    }
    if (seen == 0) throw Error(ErrorKind::InvalidInput, "accuracy restriction selects no sample");
    return 100.0 * static_cast<double>(hit) / static_cast<double>(seen);
}

// ---------------------------------------------------------------------------

void write_checkpoint(const MlpModel& model, const std::filesystem::path& path) {
    model.check();
    detail::LeWriter w(path);
    w.magic("ULNM");
    w.u32(kCheckpointFormatVersion);
    w.u32(static_cast<std::uint32_t>(model.activation));
    w.u32(static_cast<std::uint32_t>(model.hidden.size() + 1));
    auto put_layer = [&](const Matrix& weight, const std::vector<double>& bias) {
        w.u64(weight.rows());
        w.u64(weight.cols());
        for (double v : weight.flat()) w.f64(v);
        for (double v : bias) w.f64(v);
    };
    for (const auto& layer : model.hidden) put_layer(layer.weight, layer.bias);
    put_layer(model.head.weight, model.head.bias);
    w.finish();
}

MlpModel read_checkpoint(const std::filesystem::path& path) {
    detail::LeReader r(path);
    r.expect_magic("ULNM");
    if (auto v = r.u32(); v != kCheckpointFormatVersion)
        throw Error(ErrorKind::IoError, path.string() + ": unsupported checkpoint version " + std::to_string(v));
    if (r.u32() != static_cast<std::uint32_t>(Activation::relu))
        throw Error(ErrorKind::IoError, path.string() + ": unknown activation");
    const std::uint32_t layers = r.u32();
    if (layers < 1 || layers > 1024) throw Error(ErrorKind::IoError, path.string() + ": implausible layer count");
    MlpModel model;
    for (std::uint32_t l = 0; l < layers; ++l) {
        const std::uint64_t out = r.u64();
        const std::uint64_t in = r.u64();
        if (out == 0 || in == 0 || out > (1u << 20) || in > (1u << 20))
            throw Error(ErrorKind::IoError, path.string() + ": implausible layer shape");
        std::vector<double> w(out * in);
        for (double& v : w) v = r.f64();
        std::vector<double> b(out);
        for (double& v : b) v = r.f64();
        DenseLayer layer{Matrix(out, in, std::move(w)), std::move(b)};
        if (l + 1 == layers)
            model.head = {std::move(layer.weight), std::move(layer.bias)};
        else
            model.hidden.push_back(std::move(layer));
    }
    if (!r.at_end()) throw Error(ErrorKind::IoError, path.string() + ": trailing bytes");
    try {
        model.check();
    } catch (const Error& e) {
        throw Error(ErrorKind::IoError, path.string() + ": " + e.what());
    }
    return model;
}

}  // namespace ulns
