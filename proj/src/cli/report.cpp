#include <algorithm>
#include <cmath>
#include <cstdio>
#include <tuple>

#include "ulns/cli.hpp"
#include "ulns/error.hpp"

namespace ulns::cli {

Summary summarize(const std::vector<double>& values) {
    if (values.empty()) return {};
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    return {mean, std::sqrt(var)};
}

std::vector<ReportGroup> aggregate_reports(const std::vector<EvalReport>& reports) {
    using Key = std::tuple<std::string, std::string, bool>;
    std::vector<Key> keys;
    std::vector<std::vector<const EvalReport*>> members;
    for (const auto& r : reports) {
        Key key{r.method_name, r.scope, r.cmf_flag};
        auto it = std::find(keys.begin(), keys.end(), key);
        if (it == keys.end()) {
            keys.push_back(key);
            members.emplace_back();
            it = keys.end() - 1;
        }
        members[static_cast<std::size_t>(it - keys.begin())].push_back(&r);
    }

    std::vector<ReportGroup> groups;
    for (std::size_t g = 0; g < keys.size(); ++g) {
        ReportGroup group;
        std::tie(group.method, group.scope, group.cmf) = keys[g];
        group.count = members[g].size();
        auto column = [&](double EvalReport::*field) {
            std::vector<double> v;
            for (const auto* r : members[g]) v.push_back(r->*field);
            return summarize(v);
        };
        group.output_retain = column(&EvalReport::output_retain);
        group.output_forget = column(&EvalReport::output_forget);
        group.probe_retain = column(&EvalReport::probe_retain);
        group.probe_forget = column(&EvalReport::probe_forget);
        group.ncc_retain = column(&EvalReport::ncc_retain);
        group.ncc_forget = column(&EvalReport::ncc_forget);
        groups.push_back(std::move(group));
    }
    return groups;
}

std::vector<EvalReport> collect_reports(const std::filesystem::path& run_dir) {
    std::error_code ec;
    if (!std::filesystem::is_directory(run_dir, ec))
        throw Error(ErrorKind::IoError, run_dir.string() + " is not a directory");
    std::vector<std::filesystem::path> paths;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(run_dir))
        if (entry.is_regular_file() && entry.path().filename() == "report.json") paths.push_back(entry.path());
    if (paths.empty()) throw Error(ErrorKind::NoReports, "no report.json under " + run_dir.string());
    std::sort(paths.begin(), paths.end());
    std::vector<EvalReport> reports;
    for (const auto& p : paths) reports.push_back(read_report(p));
    return reports;
}

namespace {

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string variant(const ReportGroup& g) {
    std::string out = g.scope;
    if (g.cmf) out += "+cmf";
    return out;
}

}  // namespace

std::string format_report_csv(const std::vector<ReportGroup>& groups) {
    std::string out =
        "method,variant,n,output_retain_mean,output_retain_std,output_forget_mean,output_forget_std,"
        "probe_retain_mean,probe_retain_std,probe_forget_mean,probe_forget_std,"
        "ncc_retain_mean,ncc_retain_std,ncc_forget_mean,ncc_forget_std\n";
    for (const auto& g : groups) {
        out += g.method + ',' + variant(g) + ',' + std::to_string(g.count);
        for (const Summary* s : {&g.output_retain, &g.output_forget, &g.probe_retain, &g.probe_forget,
                                 &g.ncc_retain, &g.ncc_forget})
            out += ',' + num(s->mean) + ',' + num(s->stddev);
        out += '\n';
    }
    return out;
}

std::string format_report_markdown(const std::vector<ReportGroup>& groups) {
    std::string out =
        "| Method | Variant | n | Output Retain | Output Forget | Probe Retain | Probe Forget | NCC Retain | NCC Forget |\n"
        "|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& g : groups) {
        out += "| " + g.method + " | " + variant(g) + " | " + std::to_string(g.count) + " |";
        for (const Summary* s : {&g.output_retain, &g.output_forget, &g.probe_retain, &g.probe_forget,
                                 &g.ncc_retain, &g.ncc_forget})
            out += ' ' + num(s->mean) + " ± " + num(s->stddev) + " |";
        out += '\n';
    }
    return out;
}

}  // namespace ulns::cli
