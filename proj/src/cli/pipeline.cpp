#include <cstdio>
#include <fstream>

#include "ulns/cli.hpp"
#include "ulns/error.hpp"

namespace ulns::cli {

std::string run_directory_name(std::string_view method, std::string_view scope, bool cmf, std::uint64_t seed) {
    std::string out;
    out.append(method).append("_").append(scope).append(cmf ? "_cmf_" : "_nocmf_").append(std::to_string(seed));
    return out;
}

namespace {

std::ofstream open_for_writing(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
    return out;
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string general(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

}  // namespace

void write_unlearn_history(const History& history, const std::filesystem::path& path) {
    auto out = open_for_writing(path);
    out << "epoch,loss,output_forget,output_retain,probe_forget,probe_retain,ncc_forget,ncc_retain\n";
    for (const auto& rec : history) {
        out << rec.epoch << ',' << general(rec.loss);
        if (rec.accuracy) {
            const auto& a = *rec.accuracy;
            for (double v : {a.output_forget, a.output_retain, a.probe_forget, a.probe_retain, a.ncc_forget,
                             a.ncc_retain})
                out << ',' << fixed(v, 4);
        } else {
            out << ",,,,,,";
        }
        out << '\n';
    }
    finish(out, path);
}

void write_train_history(const History& history, const std::filesystem::path& path) {
    auto out = open_for_writing(path);
    out << "epoch,loss,train_accuracy,test_accuracy\n";
    for (const auto& rec : history) {
        out << rec.epoch << ',' << general(rec.loss);
        if (rec.accuracy)
            out << ',' << fixed(rec.accuracy->output_retain, 4) << ',' << fixed(rec.accuracy->output_forget, 4);
        else
            out << ",,";
        out << '\n';
    }
    finish(out, path);
}

std::filesystem::path run_unlearn_job(const UnlearnJob& job) {
    const Dataset train_set = read_dataset(job.data_dir / "train.bin");
    const Dataset test_set = read_dataset(job.data_dir / "test.bin");
    const MlpModel original = read_checkpoint(job.model_path);
    const SplitSpec spec = make_split_spec(static_cast<int>(original.class_count()), job.forget_classes);
    const RetainForgetSplit split = split_retain_forget(train_set, job.forget_classes);

    std::optional<EvalReport> last;
    int last_epoch = -1;
    auto hook = [&](const MlpModel& m, EpochRecord& rec) {
        last = evaluate_with_probe(m, train_set, test_set, spec, job.probe);
        last_epoch = rec.epoch;
        rec.accuracy = last->accuracies();
    };

    MlpModel result;
    History history;
    int final_epoch = 0;
    if (job.retrain) {
        std::vector<std::size_t> dims;
        for (const auto& layer : original.hidden) dims.push_back(layer.weight.rows());
        MlpModel fresh = make_mlp(original.input_dim(), dims, original.class_count(), job.retrain_config.seed);
        TrainOptions options;
        if (job.curves) options.on_epoch = hook;
        TrainResult tr = train(std::move(fresh), split.retain, job.retrain_config, options);
        result = std::move(tr.model);
        history = std::move(tr.history);
        final_epoch = tr.epochs_run;
        if (job.retrain_config.early_stop_patience) final_epoch = -1;  // best model may be an earlier epoch
    } else {
        UnlearnResult ur = run_unlearning(original, split.retain, split.forget, spec, job.config,
                                          job.curves ? UnlearnHook(hook) : UnlearnHook{});
        result = std::move(ur.model);
        history = std::move(ur.history);
        final_epoch = job.config.epochs;
    }

    EvalReport report = (last && last_epoch == final_epoch)
                            ? *last
                            : evaluate_with_probe(result, train_set, test_set, spec, job.probe);
    report.method_name = job.retrain ? "retrain" : std::string(method_name(job.config.method));
    report.scope = job.retrain ? "full" : std::string(scope_name(job.config.scope));
    report.cmf_flag = !job.retrain && job.config.use_cmf;
    report.seed = job.retrain ? job.retrain_config.seed : job.config.seed;

    const auto dir = job.out_root / run_directory_name(report.method_name, report.scope, report.cmf_flag, report.seed);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
    write_checkpoint(result, dir / "model.bin");
    write_unlearn_history(history, dir / "history.csv");
    write_report(report, dir / "report.json");
    return dir;
}

}  // namespace ulns::cli
