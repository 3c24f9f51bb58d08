#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ulns/cli.hpp"
#include "ulns/error.hpp"
#include "ulns/theory.hpp"

namespace ulns::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// --config FILE: a JSON object of flag names to values. Values become flag
// tokens appended after the ones given on the command line, which win.
// ---------------------------------------------------------------------------

bool flag_given(const std::vector<std::string>& args, const std::string& flag) {
    for (const auto& a : args)
        if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    return false;
}

std::string scalar_token(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
    if (v.is_number_float()) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
        return buf;
    }
    throw Error(ErrorKind::InvalidConfig, "config values must be scalars, booleans or arrays of scalars");
}

std::vector<std::string> expand_config(std::vector<std::string> args) {
    std::optional<std::string> path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
            break;
        }
    }
    if (!path) return args;

    std::ifstream in(*path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open config " + *path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::InvalidConfig, *path + ": " + e.what());
    }
    if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, *path + ": expected a JSON object");

    std::vector<std::string> extra;
    for (const auto& [key, value] : j.items()) {
        const std::string flag = "--" + key;
        if (flag_given(args, flag)) continue;
        if (value.is_boolean()) {
            if (value.get<bool>()) extra.push_back(flag);
        } else if (value.is_array()) {
            std::string joined;
            for (const auto& item : value) joined += (joined.empty() ? "" : ",") + scalar_token(item);
            extra.push_back(flag);
            extra.push_back(joined);
        } else {
            extra.push_back(flag);
            extra.push_back(scalar_token(value));
        }
    }
    args.insert(args.end(), extra.begin(), extra.end());
    return args;
}

// ---------------------------------------------------------------------------

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

struct GenDataArgs {
    GaussianMixtureParams params;
    std::string out_dir;
    bool csv = false;
};

void cmd_gen_data(const GenDataArgs& a) {
    TrainTestData data = make_gaussian_mixture(a.params);
    const fs::path dir = a.out_dir;
    ensure_dir(dir);
    write_dataset(data.train, dir / "train.bin");
    write_dataset(data.test, dir / "test.bin");
    if (a.csv) {
        write_dataset_csv(data.train, dir / "train.csv");
        write_dataset_csv(data.test, dir / "test.csv");
    }
}

struct TrainArgs {
    std::string data_dir;
    std::string out_dir;
    TrainConfig config;
    std::vector<std::size_t> hidden{64, 32};
    int early_stop = 0;
    std::vector<int> forget;  // retrain only
};

void cmd_train(const TrainArgs& a) {
    const fs::path data_dir = a.data_dir;
    const Dataset train_set = read_dataset(data_dir / "train.bin");
    const Dataset test_set = read_dataset(data_dir / "test.bin");
    TrainConfig tc = a.config;
    if (a.early_stop > 0) tc.early_stop_patience = a.early_stop;
    MlpModel model = make_mlp(train_set.input_dim(), a.hidden, static_cast<std::size_t>(train_set.class_count), tc.seed);
    TrainOptions options;
    options.validation = a.early_stop > 0 ? &test_set : nullptr;
    options.on_epoch = [&](const MlpModel& m, EpochRecord& rec) {
        AccuracyGrid g;
        g.output_retain = output_accuracy(forward(m, train_set.inputs).logits, train_set.labels);
        g.output_forget = output_accuracy(forward(m, test_set.inputs).logits, test_set.labels);
        rec.accuracy = g;
    };
    TrainResult tr = train(std::move(model), train_set, tc, options);
    const fs::path out = a.out_dir;
    ensure_dir(out);
    write_checkpoint(tr.model, out / "model.bin");
    write_train_history(tr.history, out / "history.csv");
}

void cmd_retrain(const TrainArgs& a, bool curves, const ProbeConfig& probe) {
    const fs::path data_dir = a.data_dir;
    const Dataset train_set = read_dataset(data_dir / "train.bin");
    const Dataset test_set = read_dataset(data_dir / "test.bin");
    const SplitSpec spec = make_split_spec(train_set.class_count, a.forget);
    const RetainForgetSplit split = split_retain_forget(train_set, a.forget);
    TrainConfig tc = a.config;
    if (a.early_stop > 0) tc.early_stop_patience = a.early_stop;
    MlpModel model = make_mlp(train_set.input_dim(), a.hidden, static_cast<std::size_t>(train_set.class_count), tc.seed);
    TrainOptions options;
    Dataset retain_test = split_retain_forget(test_set, a.forget).retain;
    options.validation = a.early_stop > 0 ? &retain_test : nullptr;
    if (curves)
        options.on_epoch = [&](const MlpModel& m, EpochRecord& rec) {
            rec.accuracy = evaluate_with_probe(m, train_set, test_set, spec, probe).accuracies();
        };
    TrainResult tr = train(std::move(model), split.retain, tc, options);
    EvalReport report = evaluate_with_probe(tr.model, train_set, test_set, spec, probe);
    report.method_name = "retrain";
    report.seed = tc.seed;
    const fs::path dir = fs::path(a.out_dir) / run_directory_name("retrain", "full", false, tc.seed);
    ensure_dir(dir);
    write_checkpoint(tr.model, dir / "model.bin");
    write_unlearn_history(tr.history, dir / "history.csv");
    write_report(report, dir / "report.json");
}

struct EvalArgs {
    std::string model;
    std::string data_dir;
    std::vector<int> forget;
    std::string out;
    std::string method_name = "original";
    std::string scope = "full";
    bool cmf = false;
    std::uint64_t seed = 0;
};

void cmd_eval(const EvalArgs& a, const ProbeConfig& probe) {
    const fs::path data_dir = a.data_dir;
    const Dataset train_set = read_dataset(data_dir / "train.bin");
    const Dataset test_set = read_dataset(data_dir / "test.bin");
    const MlpModel model = read_checkpoint(a.model);
    const SplitSpec spec = make_split_spec(static_cast<int>(model.class_count()), a.forget);
    EvalReport report = evaluate_with_probe(model, train_set, test_set, spec, probe);
    report.method_name = a.method_name;
    report.scope = a.scope;
    report.cmf_flag = a.cmf;
    report.seed = a.seed;
    if (a.out.empty()) {
        std::cout << json(report).dump(2) << '\n';
    } else {
        const fs::path out = a.out;
        if (out.has_parent_path()) ensure_dir(out.parent_path());
        write_report(report, out);
    }
}

struct ExportArgs {
    std::string model;
    std::string data;
    std::string out;
};

void cmd_export_features(const ExportArgs& a) {
    const MlpModel model = read_checkpoint(a.model);
    const Dataset data = read_dataset(a.data);
    const fs::path out = a.out;
    if (out.has_parent_path()) ensure_dir(out.parent_path());
    export_features(model, data, out);
}

struct TheoryArgs {
    std::vector<std::size_t> k_list{3, 5, 10};
    std::vector<double> lambda_list{1e-3, 1e-2, 1e-1};
    std::size_t dim = 0;  // 0: d = K
    std::size_t forget_class = 0;
    double tol = 1e-3;
    double family_tol = 1e-4;
    double grad_tol = 1e-8;
    long max_iterations = 2'000'000;
    std::uint64_t seed = kDefaultEtfSeed;
    std::string out_dir;
};

bool cmd_verify_theory(const TheoryArgs& a) {
    if (!a.out_dir.empty()) ensure_dir(a.out_dir);
    std::printf("%4s %8s %9s %10s %10s %8s %8s %8s %10s %10s %7s %5s\n", "K", "lambda", "iters", "gradnorm",
                "cos_fk", "gamma", "alpha", "beta", "span_res", "family_spr", "f_acc", "pass");
    bool all_pass = true;
    for (std::size_t k : a.k_list) {
        for (double lambda : a.lambda_list) {
            const std::size_t d = a.dim == 0 ? k : a.dim;
            TheoryInstance inst = make_theory_instance(k, d, a.forget_class, lambda, a.seed);
            LastLayerOptimizerConfig oc;
            oc.grad_tolerance = a.grad_tol;
            oc.max_iterations = a.max_iterations;
            LastLayerSolution sol = optimize_last_layer(inst, oc);
            FlipCertificate flip = certify_flip_structure(sol.weights, inst, a.tol);
            LogitFamilies families = certify_logit_families(sol.weights, inst, a.family_tol);
            const bool pass = flip.pass && families.pass && sol.final_loss < sol.initial_loss;
            all_pass = all_pass && pass;

            double span_max = 0.0;
            for (double r : flip.retain_span_residuals) span_max = std::max(span_max, r);
            const double family_spread =
                std::max({families.spread_a, families.spread_b, families.spread_b_prime, families.spread_c});
            std::printf("%4zu %8.0e %9ld %10.2e %10.6f %8.5f %8.5f %8.5f %10.2e %10.2e %7.1f %5s\n", k, lambda,
                        sol.iterations, sol.grad_norm, flip.forget_cosine, flip.gamma, flip.alpha, flip.beta,
                        span_max, family_spread, flip.forget_accuracy, pass ? "yes" : "no");

            if (!a.out_dir.empty()) {
                json j{{"classes", k},
                       {"dim", d},
                       {"forget_class", a.forget_class},
                       {"lambda_w", lambda},
                       {"iterations", sol.iterations},
                       {"grad_norm", sol.grad_norm},
                       {"initial_loss", sol.initial_loss},
                       {"final_loss", sol.final_loss},
                       {"flip_structure", flip},
                       {"logit_families", families},
                       {"pass", pass}};
                char name[96];
                std::snprintf(name, sizeof name, "theory_K%zu_lambda%g.json", k, lambda);
                write_text(fs::path(a.out_dir) / name, j.dump(2) + "\n");
            }
        }
    }
    return all_pass;
}

struct ReportArgs {
    std::string run_dir;
    std::string format = "markdown";
    std::string out;
};

void cmd_report(const ReportArgs& a) {
    auto groups = aggregate_reports(collect_reports(a.run_dir));
    const std::string text = a.format == "csv" ? format_report_csv(groups) : format_report_markdown(groups);
    if (a.out.empty())
        std::cout << text;
    else
        write_text(a.out, text);
}

void add_probe_flags(CLI::App* cmd, ProbeConfig& probe) {
    cmd->add_option("--probe-l2", probe.l2, "Probe ridge coefficient")->capture_default_str();
    cmd->add_option("--probe-iterations", probe.max_iterations, "Probe iteration cap")->capture_default_str();
}

void add_train_flags(CLI::App* cmd, TrainArgs& a) {
    cmd->add_option("--data-dir", a.data_dir, "Directory with train.bin and test.bin")->required();
    cmd->add_option("--out-dir", a.out_dir, "Output directory")->required();
    cmd->add_option("--epochs", a.config.epochs)->capture_default_str();
    cmd->add_option("--batch-size", a.config.batch_size)->capture_default_str();
    cmd->add_option("--lr", a.config.learning_rate)->capture_default_str();
    cmd->add_option("--momentum", a.config.momentum)->capture_default_str();
    cmd->add_option("--weight-decay", a.config.weight_decay)->capture_default_str();
    cmd->add_option("--seed", a.config.seed)->capture_default_str();
    cmd->add_option("--hidden", a.hidden, "Hidden widths, comma separated")->delimiter(',')->capture_default_str();
    cmd->add_option("--early-stop", a.early_stop, "Patience in epochs (0 disables)")->capture_default_str();
}

const std::vector<std::string> kMethodChoices{"retain_ft", "neggrad_plus", "random_label", "salun",
                                              "scrub", "unsir", "retrain"};

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"Class unlearning experiments on synthetic Gaussian mixtures"};
    app.name("ulns");
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate train/test Gaussian-mixture datasets");
    gen_cmd->add_option("--k", gen.params.classes, "Number of classes")->capture_default_str();
    gen_cmd->add_option("--n", gen.params.n_per_class, "Samples per class and split")->capture_default_str();
    gen_cmd->add_option("--d-in", gen.params.input_dim, "Input dimension")->capture_default_str();
    gen_cmd->add_option("--mean-scale", gen.params.mean_scale, "Distance of class means from the origin")->capture_default_str();
    gen_cmd->add_option("--noise", gen.params.noise_sigma, "Per-coordinate noise std")->capture_default_str();
    gen_cmd->add_option("--seed", gen.params.seed)->capture_default_str();
    gen_cmd->add_option("--out-dir", gen.out_dir)->required();
    gen_cmd->add_flag("--csv", gen.csv, "Also write train.csv and test.csv");

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train the original classifier");
    add_train_flags(train_cmd, tr);

    TrainArgs rt;
    ProbeConfig rt_probe;
    bool rt_curves = true;
    auto* retrain_cmd = app.add_subcommand("retrain", "Train from scratch on the retain classes only");
    add_train_flags(retrain_cmd, rt);
    retrain_cmd->add_option("--forget-classes", rt.forget)->delimiter(',')->required();
    retrain_cmd->add_flag("!--no-curves", rt_curves, "Skip per-epoch evaluation");
    add_probe_flags(retrain_cmd, rt_probe);

    UnlearnJob uj;
    std::string method = "random_label", scope = "full";
    std::string model_path, data_dir, out_dir;
    double grad_clip = 0.0;
    auto* un_cmd = app.add_subcommand("unlearn", "Run one unlearning method on a trained model");
    un_cmd->add_option("--model", model_path, "Original checkpoint")->required();
    un_cmd->add_option("--data-dir", data_dir, "Directory with train.bin and test.bin")->required();
    un_cmd->add_option("--out-dir", out_dir, "Root of the run directories")->required();
    un_cmd->add_option("--method", method)->check(CLI::IsMember(kMethodChoices))->capture_default_str();
    un_cmd->add_option("--scope", scope)->check(CLI::IsMember({"full", "classifier_only"}))->capture_default_str();
    un_cmd->add_flag("--cmf", uj.config.use_cmf, "Use the class-mean-feature head");
    un_cmd->add_option("--forget-classes", uj.forget_classes)->delimiter(',')->required();
    un_cmd->add_option("--epochs", uj.config.epochs)->capture_default_str();
    un_cmd->add_option("--lr", uj.config.learning_rate)->capture_default_str();
    un_cmd->add_option("--momentum", uj.config.momentum)->capture_default_str();
    un_cmd->add_option("--batch-size", uj.config.batch_size)->capture_default_str();
    un_cmd->add_option("--seed", uj.config.seed)->capture_default_str();
    auto& mp = uj.config.params;
    un_cmd->add_option("--salun-threshold", mp.salun_threshold)->capture_default_str();
    un_cmd->add_option("--scrub-msteps", mp.scrub_msteps)->capture_default_str();
    un_cmd->add_option("--scrub-temperature", mp.scrub_kd_temperature)->capture_default_str();
    un_cmd->add_option("--scrub-kd-weight", mp.scrub_kd_weight)->capture_default_str();
    un_cmd->add_option("--unsir-noise-steps", mp.unsir_noise_steps)->capture_default_str();
    un_cmd->add_option("--unsir-noise-lr", mp.unsir_noise_lr)->capture_default_str();
    un_cmd->add_option("--unsir-noise-samples", mp.unsir_noise_samples)->capture_default_str();
    un_cmd->add_option("--unsir-impair-epochs", mp.unsir_impair_epochs)->capture_default_str();
    auto* clip_opt = un_cmd->add_option("--grad-clip", grad_clip, "Global gradient-norm cap");
    un_cmd->add_option("--neggrad-retain-weight", mp.neggrad_retain_weight)->capture_default_str();
    un_cmd->add_option("--retrain-weight-decay", uj.retrain_config.weight_decay,
                       "Weight decay for --method retrain")->capture_default_str();
    un_cmd->add_flag("!--no-curves", uj.curves, "Skip per-epoch evaluation in history.csv");
    add_probe_flags(un_cmd, uj.probe);

    EvalArgs ev;
    ProbeConfig ev_probe;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint at output and representation level");
    eval_cmd->add_option("--model", ev.model)->required();
    eval_cmd->add_option("--data-dir", ev.data_dir)->required();
    eval_cmd->add_option("--forget-classes", ev.forget)->delimiter(',')->required();
    eval_cmd->add_option("--out", ev.out, "Report path (stdout when omitted)");
    eval_cmd->add_option("--method-name", ev.method_name)->capture_default_str();
    eval_cmd->add_option("--scope", ev.scope)->capture_default_str();
    eval_cmd->add_flag("--cmf", ev.cmf);
    eval_cmd->add_option("--seed", ev.seed)->capture_default_str();
    add_probe_flags(eval_cmd, ev_probe);

    ExportArgs ex;
    auto* export_cmd = app.add_subcommand("export-features", "Write penultimate features as CSV");
    export_cmd->add_option("--model", ex.model)->required();
    export_cmd->add_option("--data", ex.data, "Dataset file")->required();
    export_cmd->add_option("--out", ex.out)->required();

    TheoryArgs th;
    auto* theory_cmd = app.add_subcommand("verify-theory", "Certify the last-layer NegGrad stationary point");
    theory_cmd->add_option("--k-list", th.k_list)->delimiter(',')->capture_default_str();
    theory_cmd->add_option("--lambda-list", th.lambda_list)->delimiter(',')->capture_default_str();
    theory_cmd->add_option("--dim", th.dim, "Feature dimension (0: d = K)")->capture_default_str();
    theory_cmd->add_option("--forget-class", th.forget_class)->capture_default_str();
    theory_cmd->add_option("--tol", th.tol, "Structural tolerance")->capture_default_str();
    theory_cmd->add_option("--family-tol", th.family_tol, "Logit-family spread tolerance")->capture_default_str();
    theory_cmd->add_option("--grad-tol", th.grad_tol, "Optimizer stopping gradient norm")->capture_default_str();
    theory_cmd->add_option("--max-iterations", th.max_iterations)->capture_default_str();
    theory_cmd->add_option("--etf-seed", th.seed)->capture_default_str();
    theory_cmd->add_option("--out-dir", th.out_dir, "Write one JSON certificate per instance here");

    ReportArgs rp;
    auto* report_cmd = app.add_subcommand("report", "Aggregate report.json files into a comparison table");
    report_cmd->add_option("--run-dir", rp.run_dir)->required();
    report_cmd->add_option("--format", rp.format)->check(CLI::IsMember({"csv", "markdown"}))->capture_default_str();
    report_cmd->add_option("--out", rp.out, "Output file (stdout when omitted)");

    std::string experiment;
    auto* sweep_cmd = app.add_subcommand("sweep", "Run an experiment grid from a JSON description");
    sweep_cmd->add_option("--experiment", experiment, "Experiment JSON")->required()->check(CLI::ExistingFile);

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        args = expand_config(std::move(args));
        std::reverse(args.begin(), args.end());
        app.parse(args);
        if (un_cmd->parsed()) {
            uj.model_path = model_path;
            uj.data_dir = data_dir;
            uj.out_root = out_dir;
            if (clip_opt->count() > 0) mp.grad_clip = grad_clip;
            if (method == "retrain") {
                uj.retrain = true;
                uj.retrain_config.epochs = uj.config.epochs;
                uj.retrain_config.learning_rate = uj.config.learning_rate;
                uj.retrain_config.momentum = uj.config.momentum;
                uj.retrain_config.batch_size = uj.config.batch_size;
                uj.retrain_config.seed = uj.config.seed;
            } else {
                uj.config.method = parse_method(method);
                uj.config.scope = parse_scope(scope);
                uj.config.check();
            }
        }
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.kind() == ErrorKind::InvalidConfig ? 2 : 1;
    }

    try {
        if (gen_cmd->parsed()) {
            cmd_gen_data(gen);
        } else if (train_cmd->parsed()) {
            cmd_train(tr);
        } else if (retrain_cmd->parsed()) {
            cmd_retrain(rt, rt_curves, rt_probe);
        } else if (un_cmd->parsed()) {
            const fs::path dir = run_unlearn_job(uj);
            std::cout << dir.string() << '\n';
        } else if (eval_cmd->parsed()) {
            cmd_eval(ev, ev_probe);
        } else if (export_cmd->parsed()) {
            cmd_export_features(ex);
        } else if (theory_cmd->parsed()) {
            if (!cmd_verify_theory(th)) {
                std::cerr << "error: certification failed for at least one instance\n";
                return 1;
            }
        } else if (report_cmd->parsed()) {
            cmd_report(rp);
        } else if (sweep_cmd->parsed()) {
            const ExperimentConfig cfg = load_experiment_config(experiment);
            for (const auto& dir : run_sweep(cfg, sweep_threads())) std::cout << dir.string() << '\n';
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace ulns::cli
