#include <doctest.h>

#include <fstream>
#include <sstream>

#include "support.hpp"
#include "ulns/cli.hpp"
#include "ulns/error.hpp"

using namespace ulns;
namespace fs = std::filesystem;

namespace {

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "ulns");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> csv_lines(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    return lines;
}

std::size_t count_entries(const fs::path& dir) {
    std::size_t n = 0;
    for (auto it = fs::recursive_directory_iterator(dir); it != fs::recursive_directory_iterator(); ++it) ++n;
    return n;
}

// gen-data + train on a tiny problem; returns the work dir.
fs::path tiny_pipeline(const std::string& name) {
    fs::path dir = test::scratch_dir(name);
    REQUIRE(run_cli({"gen-data", "--k", "3", "--n", "40", "--d-in", "6", "--mean-scale", "5", "--seed", "7",
                     "--out-dir", (dir / "data").string()}) == 0);
    REQUIRE(run_cli({"train", "--data-dir", (dir / "data").string(), "--out-dir", (dir / "model").string(),
                     "--epochs", "40", "--lr", "0.05", "--hidden", "16,8", "--seed", "7"}) == 0);
    return dir;
}

EvalReport make_report(std::string method, std::string scope, bool cmf, double base) {
    EvalReport r;
    r.method_name = std::move(method);
    r.scope = std::move(scope);
    r.cmf_flag = cmf;
    r.output_retain = base;
    r.output_forget = base / 10.0;
    r.probe_retain = base - 1.0;
    r.probe_forget = base - 2.0;
    r.ncc_retain = base - 3.0;
    r.ncc_forget = base - 4.0;
    return r;
}

}  // namespace

TEST_CASE("gen-data, train and eval produce a report") {
    fs::path dir = tiny_pipeline("cli_eval");
    CHECK(fs::exists(dir / "data" / "train.bin"));
    CHECK(fs::exists(dir / "data" / "test.bin"));
    CHECK(fs::exists(dir / "model" / "model.bin"));
    auto hist = csv_lines(dir / "model" / "history.csv");
    CHECK(hist.front() == "epoch,loss,train_accuracy,test_accuracy");
    CHECK(hist.size() == 41);

    REQUIRE(run_cli({"eval", "--model", (dir / "model" / "model.bin").string(), "--data-dir",
                     (dir / "data").string(), "--forget-classes", "0", "--out", (dir / "report.json").string()}) == 0);
    EvalReport r = read_report(dir / "report.json");
    CHECK(r.method_name == "original");
    CHECK(r.output_retain > 90.0);

    REQUIRE(run_cli({"export-features", "--model", (dir / "model" / "model.bin").string(), "--data",
                     (dir / "data" / "test.bin").string(), "--out", (dir / "f.csv").string()}) == 0);
    CHECK(csv_lines(dir / "f.csv").size() == 121);
}

TEST_CASE("unlearn writes the run layout with an 8-column history") {
    fs::path dir = tiny_pipeline("cli_unlearn");
    REQUIRE(run_cli({"unlearn", "--model", (dir / "model" / "model.bin").string(), "--data-dir",
                     (dir / "data").string(), "--out-dir", (dir / "runs").string(), "--method", "random_label",
                     "--cmf", "--forget-classes", "0", "--epochs", "2", "--seed", "3"}) == 0);
    fs::path run = dir / "runs" / "random_label_full_cmf_3";
    REQUIRE(fs::exists(run / "model.bin"));
    REQUIRE(fs::exists(run / "report.json"));
    auto hist = csv_lines(run / "history.csv");
    REQUIRE(hist.size() == 4);
    CHECK(hist[0] == "epoch,loss,output_forget,output_retain,probe_forget,probe_retain,ncc_forget,ncc_retain");
    for (const auto& line : hist) CHECK(std::count(line.begin(), line.end(), ',') == 7);
    EvalReport r = read_report(run / "report.json");
    CHECK(r.method_name == "random_label");
    CHECK(r.cmf_flag);
    CHECK(r.seed == 3);

    REQUIRE(run_cli({"unlearn", "--model", (dir / "model" / "model.bin").string(), "--data-dir",
                     (dir / "data").string(), "--out-dir", (dir / "runs").string(), "--method", "neggrad_plus",
                     "--scope", "classifier_only", "--forget-classes", "0", "--epochs", "1", "--no-curves"}) == 0);
    auto quiet = csv_lines(dir / "runs" / "neggrad_plus_classifier_only_nocmf_0" / "history.csv");
    REQUIRE(quiet.size() == 3);
    CHECK(quiet[1].substr(quiet[1].size() - 6) == ",,,,,,");

    REQUIRE(run_cli({"retrain", "--data-dir", (dir / "data").string(), "--out-dir", (dir / "runs").string(),
                     "--forget-classes", "0", "--epochs", "3", "--hidden", "16,8", "--no-curves"}) == 0);
    CHECK(fs::exists(dir / "runs" / "retrain_full_nocmf_0" / "report.json"));
}

TEST_CASE("usage errors exit with 2 and write nothing") {
    fs::path dir = tiny_pipeline("cli_usage");
    const std::size_t before = count_entries(dir);
    CHECK(run_cli({"unlearn", "--model", (dir / "model" / "model.bin").string(), "--data-dir",
                   (dir / "data").string(), "--out-dir", (dir / "runs").string(), "--method", "bogus",
                   "--forget-classes", "0"}) == 2);
    CHECK(run_cli({"unlearn", "--model", (dir / "model" / "model.bin").string(), "--data-dir",
                   (dir / "data").string(), "--out-dir", (dir / "runs").string(), "--cmf", "--scope",
                   "classifier_only", "--forget-classes", "0"}) == 2);
    CHECK(run_cli({"frobnicate"}) == 2);
    CHECK(run_cli({}) == 2);
    CHECK(run_cli({"train", "--data-dir", (dir / "data").string()}) == 2);
    CHECK(count_entries(dir) == before);
    CHECK_FALSE(fs::exists(dir / "runs"));
}

TEST_CASE("runtime failures exit with 1") {
    fs::path dir = test::scratch_dir("cli_runtime");
    CHECK(run_cli({"train", "--data-dir", (dir / "missing").string(), "--out-dir", (dir / "m").string()}) == 1);
    fs::create_directories(dir / "empty");
    CHECK(run_cli({"report", "--run-dir", (dir / "empty").string()}) == 1);
}

TEST_CASE("flags override a JSON config file") {
    fs::path dir = test::scratch_dir("cli_config");
    std::ofstream(dir / "gen.json") << R"({"k": 4, "n": 5, "d-in": 3, "seed": 1, "out-dir": ")"
                                    << (dir / "a").string() << R"("})";
    REQUIRE(run_cli({"gen-data", "--config", (dir / "gen.json").string(), "--n", "6"}) == 0);
    Dataset ds = read_dataset(dir / "a" / "train.bin");
    CHECK(ds.class_count == 4);
    CHECK(ds.size() == 24);
    CHECK(ds.input_dim() == 3);
}

TEST_CASE("report aggregation against a hand-computed fixture") {
    std::vector<EvalReport> reports{make_report("random_label", "full", false, 90.0),
                                    make_report("random_label", "full", false, 94.0),
                                    make_report("random_label", "full", false, 98.0),
                                    make_report("random_label", "full", true, 80.0),
                                    make_report("neggrad_plus", "classifier_only", false, 70.0)};
    auto groups = cli::aggregate_reports(reports);
    REQUIRE(groups.size() == 3);
    CHECK(groups[0].method == "random_label");
    CHECK(groups[0].count == 3);
    CHECK(groups[0].output_retain.mean == doctest::Approx(94.0));
    // population std of {90, 94, 98} = sqrt(32/3)
    CHECK(groups[0].output_retain.stddev == doctest::Approx(3.265986323710904));
    CHECK(groups[0].output_forget.mean == doctest::Approx(9.4));
    CHECK(groups[0].ncc_forget.mean == doctest::Approx(90.0));
    CHECK(groups[1].cmf);
    CHECK(groups[1].output_retain.stddev == 0.0);
    CHECK(groups[2].scope == "classifier_only");

    auto csv = cli::format_report_csv(groups);
    CHECK(csv.find("random_label,full,3,94.00,3.27,9.40,0.33,93.00,3.27,92.00,3.27,91.00,3.27,90.00,3.27") !=
          std::string::npos);
    CHECK(csv.find("random_label,full+cmf,1,80.00,0.00") != std::string::npos);
    auto md = cli::format_report_markdown(groups);
    CHECK(md.find("| random_label | full | 3 | 94.00 ± 3.27 |") != std::string::npos);

    CHECK(cli::summarize({5.0}).stddev == 0.0);
    CHECK(cli::summarize({1.0, 2.0, 3.0}).mean == 2.0);
}

TEST_CASE("report subcommand reads only report files") {
    fs::path dir = test::scratch_dir("cli_report");
    fs::create_directories(dir / "a" / "x");
    fs::create_directories(dir / "b");
    write_report(make_report("scrub", "full", false, 90.0), dir / "a" / "x" / "report.json");
    write_report(make_report("scrub", "full", false, 92.0), dir / "b" / "report.json");
    std::ofstream(dir / "b" / "model.bin") << "not a model";
    REQUIRE(run_cli({"report", "--run-dir", dir.string(), "--format", "csv", "--out", (dir / "t.csv").string()}) == 0);
    auto lines = csv_lines(dir / "t.csv");
    REQUIRE(lines.size() == 2);
    CHECK(lines[1].rfind("scrub,full,2,91.00,1.00,", 0) == 0);
    REQUIRE(run_cli({"report", "--run-dir", dir.string(), "--format", "markdown", "--out",
                     (dir / "t.md").string()}) == 0);
    CHECK(slurp(dir / "t.md").find("| scrub | full | 2 | 91.00 ± 1.00 |") != std::string::npos);
    CHECK_THROWS_AS(cli::collect_reports(dir / "a" / "nothing"), Error);
}

TEST_CASE("verify-theory writes certificates") {
    fs::path dir = test::scratch_dir("cli_theory");
    CHECK(run_cli({"verify-theory", "--k-list", "3,4", "--lambda-list", "0.1", "--out-dir", dir.string()}) == 0);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir)) {
        ++files;
        auto j = nlohmann::json::parse(std::ifstream(e.path()));
        CHECK(j.contains("flip_structure"));
        CHECK(j.contains("logit_families"));
    }
    CHECK(files == 2);
}

TEST_CASE("experiment config parsing") {
    auto j = nlohmann::json::parse(R"({
        "data": {"classes": 4, "n_per_class": 10, "input_dim": 5},
        "train": {"epochs": 3},
        "hidden_dims": [8],
        "unlearn": {"epochs": 1, "learning_rate": 0.02},
        "runs": [{"method": "random_label"}, {"method": "retrain"}, {"method": "scrub", "scope": "classifier_only"}],
        "forget_sets": [[0], [1, 2]],
        "seeds": [1, 2],
        "output_dir": "out"
    })");
    auto cfg = cli::parse_experiment_config(j);
    CHECK(cfg.data.classes == 4);
    CHECK(cfg.runs.size() == 3);
    CHECK(cfg.unlearn.learning_rate == 0.02);
    CHECK(cfg.forget_sets.size() == 2);

    auto bad = j;
    bad["unlearn"]["learnign_rate"] = 0.1;
    CHECK_THROWS_AS(cli::parse_experiment_config(bad), Error);
    bad = j;
    bad["runs"][0]["method"] = "svd";
    CHECK_THROWS_AS(cli::parse_experiment_config(bad), Error);
    bad = j;
    bad["seeds"] = nlohmann::json::array();
    CHECK_THROWS_AS(cli::parse_experiment_config(bad), Error);
    bad = j;
    bad["forget_sets"] = {{0, 1, 2, 3}};
    CHECK_THROWS_AS(cli::parse_experiment_config(bad), Error);
}

TEST_CASE("sweep runs every job into its own directory") {
    fs::path dir = test::scratch_dir("cli_sweep");
    std::ofstream(dir / "exp.json") << R"({
        "data": {"classes": 3, "n_per_class": 20, "input_dim": 4, "mean_scale": 5.0},
        "train": {"epochs": 3},
        "hidden_dims": [8],
        "unlearn": {"epochs": 1},
        "runs": [{"method": "random_label"}, {"method": "neggrad_plus", "scope": "classifier_only"}],
        "forget_sets": [[0]],
        "seeds": [1, 2],
        "output_dir": ")" << (dir / "out").string()
                                    << R"("})";
    REQUIRE(run_cli({"sweep", "--experiment", (dir / "exp.json").string()}) == 0);
    fs::path f = dir / "out" / "forget_0";
    for (const char* run : {"original_full_nocmf_1", "random_label_full_nocmf_1",
                            "neggrad_plus_classifier_only_nocmf_2", "original_full_nocmf_2"})
        CHECK(fs::exists(f / run / "report.json"));
    CHECK(fs::exists(dir / "out" / "seed_1" / "original" / "model.bin"));
    CHECK(cli::collect_reports(dir / "out").size() == 6);
}

TEST_CASE("run directory names") {
    CHECK(cli::run_directory_name("scrub", "classifier_only", false, 4) == "scrub_classifier_only_nocmf_4");
    CHECK(cli::run_directory_name("salun", "full", true, 0) == "salun_full_cmf_0");
}
