#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "ulns/cli.hpp"
#include "ulns/error.hpp"

namespace ulns::cli {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const char* where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, std::string(where) + " must be an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
            throw Error(ErrorKind::InvalidConfig, std::string("unknown key '") + key + "' in " + where);
    }
}

template <typename T>
void read_opt(const json& j, const char* key, T& dst) {
    if (!j.contains(key)) return;
    try {
        dst = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error(ErrorKind::InvalidConfig, std::string("bad value for '") + key + "': " + e.what());
    }
}

std::string forget_tag(const std::vector<int>& classes) {
    std::string out = "forget";
    for (int c : classes) out += "_" + std::to_string(c);
    return out;
}

template <typename Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace

ExperimentConfig parse_experiment_config(const json& j) {
    reject_unknown(j, "experiment config",
                   {"data", "train", "hidden_dims", "unlearn", "runs", "forget_sets", "seeds", "output_dir", "curves"});
    ExperimentConfig cfg;

    if (j.contains("data")) {
        const auto& d = j.at("data");
        reject_unknown(d, "data", {"classes", "n_per_class", "input_dim", "mean_scale", "noise_sigma"});
        read_opt(d, "classes", cfg.data.classes);
        read_opt(d, "n_per_class", cfg.data.n_per_class);
        read_opt(d, "input_dim", cfg.data.input_dim);
        read_opt(d, "mean_scale", cfg.data.mean_scale);
        read_opt(d, "noise_sigma", cfg.data.noise_sigma);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        reject_unknown(t, "train", {"epochs", "batch_size", "learning_rate", "momentum", "weight_decay"});
        read_opt(t, "epochs", cfg.train.epochs);
        read_opt(t, "batch_size", cfg.train.batch_size);
        read_opt(t, "learning_rate", cfg.train.learning_rate);
        read_opt(t, "momentum", cfg.train.momentum);
        read_opt(t, "weight_decay", cfg.train.weight_decay);
    }
    read_opt(j, "hidden_dims", cfg.hidden_dims);
    if (j.contains("unlearn")) {
        const auto& u = j.at("unlearn");
        reject_unknown(u, "unlearn",
                       {"epochs", "batch_size", "learning_rate", "momentum", "salun_threshold", "scrub_msteps",
                        "scrub_kd_temperature", "scrub_kd_weight", "unsir_noise_steps", "unsir_noise_lr",
                        "unsir_noise_samples", "unsir_impair_epochs", "grad_clip", "neggrad_retain_weight"});
        read_opt(u, "epochs", cfg.unlearn.epochs);
        read_opt(u, "batch_size", cfg.unlearn.batch_size);
        read_opt(u, "learning_rate", cfg.unlearn.learning_rate);
        read_opt(u, "momentum", cfg.unlearn.momentum);
        auto& p = cfg.unlearn.params;
        read_opt(u, "salun_threshold", p.salun_threshold);
        read_opt(u, "scrub_msteps", p.scrub_msteps);
        read_opt(u, "scrub_kd_temperature", p.scrub_kd_temperature);
        read_opt(u, "scrub_kd_weight", p.scrub_kd_weight);
        read_opt(u, "unsir_noise_steps", p.unsir_noise_steps);
        read_opt(u, "unsir_noise_lr", p.unsir_noise_lr);
        read_opt(u, "unsir_noise_samples", p.unsir_noise_samples);
        read_opt(u, "unsir_impair_epochs", p.unsir_impair_epochs);
        read_opt(u, "neggrad_retain_weight", p.neggrad_retain_weight);
        if (u.contains("grad_clip")) {
            double clip = 0.0;
            read_opt(u, "grad_clip", clip);
            p.grad_clip = clip;
        }
    }
    if (!j.contains("runs") || !j.at("runs").is_array() || j.at("runs").empty())
        throw Error(ErrorKind::InvalidConfig, "experiment config needs a non-empty 'runs' array");
    for (const auto& r : j.at("runs")) {
        reject_unknown(r, "run spec", {"method", "scope", "cmf"});
        RunSpec spec;
        if (!r.contains("method")) throw Error(ErrorKind::InvalidConfig, "run spec without 'method'");
        read_opt(r, "method", spec.method);
        read_opt(r, "scope", spec.scope);
        read_opt(r, "cmf", spec.cmf);
        if (spec.method != "retrain") (void)parse_method(spec.method);
        (void)parse_scope(spec.scope);
        cfg.runs.push_back(spec);
    }
    read_opt(j, "forget_sets", cfg.forget_sets);
    read_opt(j, "seeds", cfg.seeds);
    read_opt(j, "curves", cfg.curves);
    std::string out;
    read_opt(j, "output_dir", out);
    cfg.output_dir = out;

    if (cfg.seeds.empty()) throw Error(ErrorKind::InvalidConfig, "seeds must be non-empty");
    if (cfg.forget_sets.empty()) throw Error(ErrorKind::InvalidConfig, "forget_sets must be non-empty");
    if (cfg.output_dir.empty()) throw Error(ErrorKind::InvalidConfig, "output_dir is required");
    for (const auto& fs : cfg.forget_sets) (void)make_split_spec(cfg.data.classes, fs);
    cfg.train.check();
    return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
    }
    return parse_experiment_config(j);
}

unsigned sweep_threads() {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("ULNS_THREADS")) {
        char* end = nullptr;
        const long cap = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && cap >= 1) n = std::min(n, static_cast<unsigned>(cap));
    }
    return n;
}

std::vector<std::filesystem::path> run_sweep(const ExperimentConfig& config, unsigned threads) {
    namespace fs = std::filesystem;
    auto seed_dir = [&](std::uint64_t s) { return config.output_dir / ("seed_" + std::to_string(s)); };

    // Stage 1: data and original model per seed.
    parallel_for(config.seeds.size(), threads, [&](std::size_t i) {
        const std::uint64_t seed = config.seeds[i];
        const fs::path data_dir = seed_dir(seed) / "data";
        const fs::path model_dir = seed_dir(seed) / "original";
        fs::create_directories(data_dir);
        fs::create_directories(model_dir);
        GaussianMixtureParams dp = config.data;
        dp.seed = seed;
        TrainTestData data = make_gaussian_mixture(dp);
        write_dataset(data.train, data_dir / "train.bin");
        write_dataset(data.test, data_dir / "test.bin");
        TrainConfig tc = config.train;
        tc.seed = seed;
        MlpModel model = make_mlp(dp.input_dim, config.hidden_dims, static_cast<std::size_t>(dp.classes), seed);
        TrainResult tr = train(std::move(model), data.train, tc);
        write_checkpoint(tr.model, model_dir / "model.bin");
        write_train_history(tr.history, model_dir / "history.csv");
    });

    // Stage 2: one evaluation of the original plus every run spec, per (forget set, seed).
    struct Job {
        std::uint64_t seed;
        const std::vector<int>* forget;
        const RunSpec* run;  // null: evaluate the original model
    };
    std::vector<Job> jobs;
    for (const auto& forget : config.forget_sets)
        for (std::uint64_t seed : config.seeds) {
            jobs.push_back({seed, &forget, nullptr});
            for (const auto& run : config.runs) jobs.push_back({seed, &forget, &run});
        }

    std::vector<fs::path> dirs(jobs.size());
    parallel_for(jobs.size(), threads, [&](std::size_t i) {
        const Job& job = jobs[i];
        const fs::path out_root = config.output_dir / forget_tag(*job.forget);
        const fs::path data_dir = seed_dir(job.seed) / "data";
        const fs::path model_path = seed_dir(job.seed) / "original" / "model.bin";
        if (job.run == nullptr) {
            const Dataset train_set = read_dataset(data_dir / "train.bin");
            const Dataset test_set = read_dataset(data_dir / "test.bin");
            const MlpModel model = read_checkpoint(model_path);
            const SplitSpec spec = make_split_spec(config.data.classes, *job.forget);
            EvalReport report = evaluate_with_probe(model, train_set, test_set, spec);
            report.seed = job.seed;
            dirs[i] = out_root / run_directory_name("original", "full", false, job.seed);
            fs::create_directories(dirs[i]);
            write_report(report, dirs[i] / "report.json");
            return;
        }
        UnlearnJob uj;
        uj.model_path = model_path;
        uj.data_dir = data_dir;
        uj.out_root = out_root;
        uj.forget_classes = *job.forget;
        uj.curves = config.curves;
        if (job.run->method == "retrain") {
            uj.retrain = true;
            uj.retrain_config = config.train;
            uj.retrain_config.seed = job.seed;
        } else {
            uj.config = config.unlearn;
            uj.config.method = parse_method(job.run->method);
            uj.config.scope = parse_scope(job.run->scope);
            uj.config.use_cmf = job.run->cmf;
            uj.config.seed = job.seed;
        }
        dirs[i] = run_unlearn_job(uj);
    });
    return dirs;
}

}  // namespace ulns::cli
