#include "ulns/probes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "ulns/error.hpp"

namespace ulns {

namespace {

struct ProbeObjective {
    const FeatureSet& fs;
    double l2;

    // loss only, given precomputed logits
    double loss_from_logits(const Matrix& logits, const Matrix& weight) const {
        return cross_entropy(logits, fs.labels, nullptr) + 0.5 * l2 * squared_norm(weight.flat());
    }

    Matrix logits(const Matrix& weight, const std::vector<double>& bias) const {
        Matrix z = matmul_bt(fs.features, weight);
        for (std::size_t i = 0; i < z.rows(); ++i) {
            auto row = z.row(i);
            for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
        }
        return z;
    }
};

}  // namespace

LinearHead train_linear_probe(const FeatureSet& fs, int class_count, const ProbeConfig& config) {
    if (class_count < 2) throw Error(ErrorKind::InvalidConfig, "probe needs K >= 2");
    if (fs.features.rows() != fs.labels.size()) throw Error(ErrorKind::ShapeError, "feature rows != labels");
    auto counts = class_counts(fs.labels, class_count);
    for (int k = 0; k < class_count; ++k)
        if (counts[static_cast<std::size_t>(k)] == 0)
            throw IndexedError(ErrorKind::MissingClass, k, "probe training set lacks a class");

    const std::size_t k = static_cast<std::size_t>(class_count);
    const std::size_t d = fs.features.cols();
    ProbeObjective obj{fs, config.l2};

    LinearHead head{Matrix(k, d), std::vector<double>(k, 0.0)};
    Matrix z = obj.logits(head.weight, head.bias);
    double f = obj.loss_from_logits(z, head.weight);
    double step = 1.0;
    constexpr double kArmijo = 1e-4;
    // Previous iterate and gradient, for the Barzilai-Borwein trial step.
    std::vector<double> prev_params, prev_grad;

    for (int it = 0; it < config.max_iterations; ++it) {
        Matrix dz;
        cross_entropy(z, fs.labels, &dz);
        Matrix gw = matmul_at(dz, fs.features);
        for (std::size_t i = 0; i < gw.size(); ++i) gw.flat()[i] += config.l2 * head.weight.flat()[i];
        std::vector<double> gb(k, 0.0);
        for (std::size_t i = 0; i < dz.rows(); ++i)
            for (std::size_t c = 0; c < k; ++c) gb[c] += dz(i, c);

        const double gsq = squared_norm(gw.flat()) + squared_norm(gb);
        if (std::sqrt(gsq) <= config.grad_tolerance) break;

        std::vector<double> params(head.weight.flat().begin(), head.weight.flat().end());
        params.insert(params.end(), head.bias.begin(), head.bias.end());
        std::vector<double> grad(gw.flat().begin(), gw.flat().end());
        grad.insert(grad.end(), gb.begin(), gb.end());
        step = std::min(step * 2.0, 1e6);
        if (!prev_params.empty()) {
            double ss = 0.0, sy = 0.0;
            for (std::size_t i = 0; i < params.size(); ++i) {
                const double s = params[i] - prev_params[i];
                ss += s * s;
                sy += s * (grad[i] - prev_grad[i]);
            }
            if (sy > 0.0) step = std::clamp(ss / sy, 1e-10, 1e6);
        }
        prev_params = std::move(params);
        prev_grad = std::move(grad);

        // Logits are affine in (W, b): z(t) = z - t * dir_logits.
        Matrix dir = obj.logits(gw, gb);
        Matrix trial_w(k, d);
        Matrix trial_z(z.rows(), k);
        double trial_f = 0.0;
        for (;;) {
            for (std::size_t i = 0; i < trial_w.size(); ++i) trial_w.flat()[i] = head.weight.flat()[i] - step * gw.flat()[i];
            for (std::size_t i = 0; i < trial_z.size(); ++i) trial_z.flat()[i] = z.flat()[i] - step * dir.flat()[i];
            trial_f = obj.loss_from_logits(trial_z, trial_w);
            if (trial_f <= f - kArmijo * step * gsq) break;
            step *= 0.5;
            if (step < 1e-20) break;
        }
        if (step < 1e-20) break;
        head.weight = std::move(trial_w);
        for (std::size_t c = 0; c < k; ++c) head.bias[c] -= step * gb[c];
        z = std::move(trial_z);
        f = trial_f;
    }
    return head;
}

// ---------------------------------------------------------------------------

AccuracyGrid EvalReport::accuracies() const {
    return {output_retain, output_forget, probe_retain, probe_forget, ncc_retain, ncc_forget};
}

namespace {

// JSON has no NaN; undefined metrics travel as null.
nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

double number_from(const nlohmann::json& j, const char* key) {
    const auto& v = j.at(key);
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

}  // namespace

void to_json(nlohmann::json& j, const EvalReport& r) {
    j = nlohmann::json{
        {"output_retain", number_or_null(r.output_retain)},
        {"output_forget", number_or_null(r.output_forget)},
        {"probe_retain", number_or_null(r.probe_retain)},
        {"probe_forget", number_or_null(r.probe_forget)},
        {"ncc_retain", number_or_null(r.ncc_retain)},
        {"ncc_forget", number_or_null(r.ncc_forget)},
        {"nc3_forget_mean", number_or_null(r.nc3_forget_mean)},
        {"nc3_retain_mean", number_or_null(r.nc3_retain_mean)},
        {"nc1", number_or_null(r.nc1)},
        {"method_name", r.method_name},
        {"scope", r.scope},
        {"cmf_flag", r.cmf_flag},
        {"seed", r.seed},
    };
}

void from_json(const nlohmann::json& j, EvalReport& r) {
    r.output_retain = number_from(j, "output_retain");
    r.output_forget = number_from(j, "output_forget");
    r.probe_retain = number_from(j, "probe_retain");
    r.probe_forget = number_from(j, "probe_forget");
    r.ncc_retain = number_from(j, "ncc_retain");
    r.ncc_forget = number_from(j, "ncc_forget");
    r.nc3_forget_mean = number_from(j, "nc3_forget_mean");
    r.nc3_retain_mean = number_from(j, "nc3_retain_mean");
    r.nc1 = number_from(j, "nc1");
    j.at("method_name").get_to(r.method_name);
    j.at("scope").get_to(r.scope);
    j.at("cmf_flag").get_to(r.cmf_flag);
    j.at("seed").get_to(r.seed);
}

void write_report(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
    out << nlohmann::json(report).dump(2) << '\n';
    if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

EvalReport read_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    try {
        return nlohmann::json::parse(in).get<EvalReport>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::IoError, path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------

namespace {

double mean_over(const std::vector<double>& values, const std::vector<int>& classes) {
    double s = 0.0;
    for (int c : classes) s += values[static_cast<std::size_t>(c)];
    return s / static_cast<double>(classes.size());
}

}  // namespace

EvalReport evaluate(const MlpModel& model, const Dataset& train, const Dataset& test, const SplitSpec& spec,
                    const LinearHead& probe_head) {
    const int k = static_cast<int>(model.class_count());
    if (spec.class_count != k || train.class_count != k || test.class_count != k)
        throw Error(ErrorKind::InvalidConfig, "split spec / datasets do not match the model's class count");
    if (probe_head.classes() != model.class_count() || probe_head.input_dim() != model.feature_dim())
        throw Error(ErrorKind::ShapeError, "probe head shape does not match the model features");

    auto is_forget = [&](int y) { return spec.is_forget(y); };
    auto is_retain = [&](int y) { return !spec.is_forget(y); };

    EvalReport r;
    ForwardResult test_fwd = forward(model, test.inputs);
    r.output_retain = output_accuracy(test_fwd.logits, test.labels, is_retain);
    r.output_forget = output_accuracy(test_fwd.logits, test.labels, is_forget);

    Matrix probe_logits = head_logits(probe_head, test_fwd.features);
    r.probe_retain = output_accuracy(probe_logits, test.labels, is_retain);
    r.probe_forget = output_accuracy(probe_logits, test.labels, is_forget);

    FeatureSet train_fs = extract_features(model, train);
    ClassMeans means = class_means(train_fs, k);
    FeatureSet test_fs{std::move(test_fwd.features), test.labels};
    r.ncc_retain = ncc_accuracy(test_fs, means, spec.retain_classes);
    r.ncc_forget = ncc_accuracy(test_fs, means, spec.forget_classes);

    try {
        auto nc3 = nc3_per_class(model.head, means);
        r.nc3_forget_mean = mean_over(nc3, spec.forget_classes);
        r.nc3_retain_mean = mean_over(nc3, spec.retain_classes);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::DegenerateGeometry) throw;
        r.nc3_forget_mean = r.nc3_retain_mean = std::numeric_limits<double>::quiet_NaN();
    }
    try {
        r.nc1 = nc1_ratio(train_fs, means);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::DegenerateGeometry) throw;
        r.nc1 = std::numeric_limits<double>::quiet_NaN();
    }
    return r;
}

EvalReport evaluate_with_probe(const MlpModel& model, const Dataset& train, const Dataset& test,
                               const SplitSpec& spec, const ProbeConfig& config) {
    LinearHead probe = train_linear_probe(extract_features(model, train), train.class_count, config);
    return evaluate(model, train, test, spec, probe);
}

// ---------------------------------------------------------------------------

void export_features(const MlpModel& model, const Dataset& dataset, const std::filesystem::path& path) {
    FeatureSet fs = extract_features(model, dataset);
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
    const std::size_t d = fs.features.cols();
    for (std::size_t j = 0; j < d; ++j) out << 'f' << j << ',';
    out << "label\n";
    char buf[32];
    for (std::size_t i = 0; i < fs.size(); ++i) {
        for (double v : fs.features.row(i)) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << buf << ',';
        }
        out << fs.labels[i] << '\n';
    }
    out.flush();
    if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

FeatureSet read_features_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::IoError, path.string() + ": missing header");
    const std::size_t cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
    std::vector<double> values;
    std::vector<int> labels;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        for (std::size_t j = 0; j < cols; ++j) {
            if (!std::getline(row, cell, ',')) throw Error(ErrorKind::IoError, path.string() + ": short row");
            values.push_back(std::stod(cell));
        }
        if (!std::getline(row, cell)) throw Error(ErrorKind::IoError, path.string() + ": missing label");
        labels.push_back(std::stoi(cell));
    }
    return {Matrix(labels.size(), cols, std::move(values)), std::move(labels)};
}

}  // namespace ulns
