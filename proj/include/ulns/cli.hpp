#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ulns/model.hpp"
#include "ulns/probes.hpp"
#include "ulns/synthdata.hpp"
#include "ulns/unlearn.hpp"

namespace ulns::cli {

/// Entry point of the `ulns` tool. Returns the process exit code:
/// 0 success, 1 runtime failure, 2 usage error.
int run(int argc, const char* const* argv);

// ---------------------------------------------------------------------------
// Pipeline pieces shared by the subcommands and the sweep runner
// ---------------------------------------------------------------------------

/// `<method>_<scope>_<cmf|nocmf>_<seed>`
std::string run_directory_name(std::string_view method, std::string_view scope, bool cmf, std::uint64_t seed);

/// epoch,loss,output_forget,output_retain,probe_forget,probe_retain,ncc_forget,ncc_retain
/// Accuracy cells stay empty for rows without an evaluation.
void write_unlearn_history(const History& history, const std::filesystem::path& path);

/// epoch,loss,train_accuracy,test_accuracy
void write_train_history(const History& history, const std::filesystem::path& path);

struct UnlearnJob {
    std::filesystem::path model_path;
    std::filesystem::path data_dir;  // holds train.bin and test.bin
    std::filesystem::path out_root;
    std::vector<int> forget_classes;
    UnlearnConfig config;
    bool retrain = false;      // retain-only retrain from a fresh initialisation
    TrainConfig retrain_config;
    bool curves = true;        // evaluate every epoch for history.csv
    ProbeConfig probe;
};

/// Runs one job and writes model.bin, history.csv and report.json into
/// `out_root / run_directory_name(...)`. Returns that directory.
std::filesystem::path run_unlearn_job(const UnlearnJob& job);

// ---------------------------------------------------------------------------
// Report aggregation
// ---------------------------------------------------------------------------

struct Summary {
    double mean = 0.0;
    double stddev = 0.0;  // population
};

struct ReportGroup {
    std::string method;
    std::string scope;
    bool cmf = false;
    std::size_t count = 0;
    Summary output_retain, output_forget, probe_retain, probe_forget, ncc_retain, ncc_forget;
};

Summary summarize(const std::vector<double>& values);

/// Groups reports by (method, scope, cmf) in first-seen order of the sorted input.
std::vector<ReportGroup> aggregate_reports(const std::vector<EvalReport>& reports);

/// All report.json files below `run_dir`, in path order. Throws NoReports when none exist.
std::vector<EvalReport> collect_reports(const std::filesystem::path& run_dir);

std::string format_report_csv(const std::vector<ReportGroup>& groups);
std::string format_report_markdown(const std::vector<ReportGroup>& groups);

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct RunSpec {
    std::string method;  // an unlearning method or "retrain"
    std::string scope = "full";
    bool cmf = false;
};

struct ExperimentConfig {
    GaussianMixtureParams data;
    TrainConfig train;
    std::vector<std::size_t> hidden_dims{64, 32};
    UnlearnConfig unlearn;  // method, scope, cmf and seed are taken from the run specs
    std::vector<RunSpec> runs;
    std::vector<std::vector<int>> forget_sets{{0}};
    std::vector<std::uint64_t> seeds{0};
    std::filesystem::path output_dir;
    bool curves = false;
};

/// Throws InvalidConfig on missing or malformed fields.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Parallelism cap from ULNS_THREADS (default: hardware concurrency, at least 1).
unsigned sweep_threads();

/// Per seed: generate data and train the original model, then run every
/// (forget set, run spec) job. Layout:
///   <output_dir>/seed_<s>/{data,original}/
///   <output_dir>/forget_<ids>/<method>_<scope>_<cmf>_<seed>/
/// Returns the run directories in job order.
std::vector<std::filesystem::path> run_sweep(const ExperimentConfig& config, unsigned threads);

}  // namespace ulns::cli
