// Command-line front end. Links only the C library interface; everything
// it prints on failure is a single "drkd: error: ..." line on stderr, and
// the exit code is the library status (1 runtime, 2 config).

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "drkd.h"

namespace {

void print_line(const char* line, void*) { std::puts(line); }

int report_failure(int status) {
    std::cerr << "drkd: error: " << drkd_last_error() << "\n";
    return status;
}

std::string format_accuracy(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

struct TrainArgs {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool quiet = false;
};

int run_train(const TrainArgs& args, bool baseline_verb) {
    drkd_run* run = nullptr;
    int rc = drkd_run_open(args.config.c_str(), &run);
    if (rc != DRKD_OK) return report_failure(rc);

    const std::string framework = drkd_run_framework(run);
    const bool is_baseline = framework == "baseline" || framework == "lsr";
    if (baseline_verb != is_baseline) {
        drkd_run_close(run);
        std::cerr << "drkd: error: framework " << framework << " needs the "
                  << (is_baseline ? "train-baseline" : "distill") << " verb\n";
        return DRKD_ERR_CONFIG;
    }

    if (args.seed_set) drkd_run_set_seed(run, args.seed);
    if (!args.out.empty()) {
        rc = drkd_run_set_output_dir(run, args.out.c_str());
        if (rc != DRKD_OK) {
            drkd_run_close(run);
            return report_failure(rc);
        }
    }
    if (!args.quiet) drkd_run_set_log(run, print_line, nullptr);

    rc = drkd_run_train(run);
    drkd_run_close(run);
    if (rc != DRKD_OK) return report_failure(rc);
    return DRKD_OK;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"train small classifiers with rectified knowledge distillation "
                 "and compare loss frameworks"};
    app.set_version_flag("--version", drkd_version());
    app.require_subcommand(1);

    TrainArgs train_args;
    const auto add_train_options = [&](CLI::App* sub) {
        sub->add_option("--config", train_args.config, "run config file (JSON)")
            ->required();
        sub->add_option("--out", train_args.out, "override the config's output_dir");
        sub->add_option("--seed", train_args.seed, "override the config's run_seed")
            ->each([&](const std::string&) { train_args.seed_set = true; });
        sub->add_flag("--quiet", train_args.quiet, "suppress progress lines");
    };
    CLI::App* train_baseline = app.add_subcommand(
        "train-baseline", "stage 1: plain cross-entropy or label-smoothing training");
    add_train_options(train_baseline);
    CLI::App* distill = app.add_subcommand(
        "distill", "stage 2: distill a student against a frozen teacher checkpoint");
    add_train_options(distill);

    std::string eval_config, eval_checkpoint, eval_split = "test";
    CLI::App* evaluate =
        app.add_subcommand("evaluate", "accuracy of a checkpoint on a config's dataset");
    evaluate->add_option("--config", eval_config, "run config file (for its data section)")
        ->required();
    evaluate->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
    evaluate->add_option("--split", eval_split, "dataset split: train or test");

    std::string cmp_config, cmp_out;
    std::uint64_t cmp_seed = 0;
    bool cmp_seed_set = false, cmp_quiet = false;
    CLI::App* compare = app.add_subcommand(
        "compare", "run every arm x seed cell of a manifest and write the report");
    compare->add_option("--config", cmp_config, "experiment manifest (JSON)")->required();
    compare->add_option("--out", cmp_out, "override the manifest's output_dir");
    compare->add_option("--seed", cmp_seed, "run a single seed instead of the manifest list")
        ->each([&](const std::string&) { cmp_seed_set = true; });
    compare->add_flag("--quiet", cmp_quiet, "suppress progress lines");

    std::vector<std::string> report_inputs;
    std::string report_out;
    bool report_quiet = false;
    CLI::App* report = app.add_subcommand(
        "report", "chart metrics CSVs and merge them into one long-format CSV");
    report->add_option("metrics", report_inputs, "metrics CSV files")
        ->required()
        ->expected(-1);
    report->add_option("--out", report_out, "output directory")->required();
    report->add_flag("--quiet", report_quiet, "suppress progress lines");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
        std::cerr << "drkd: error: " << e.what() << "\n";
        return DRKD_ERR_CONFIG;
    }

    if (train_baseline->parsed()) return run_train(train_args, true);
    if (distill->parsed()) return run_train(train_args, false);

    if (evaluate->parsed()) {
        double accuracy = 0.0;
        const int rc = drkd_evaluate(eval_checkpoint.c_str(), eval_config.c_str(),
                                     eval_split.c_str(), &accuracy);
        if (rc != DRKD_OK) return report_failure(rc);
        std::cout << format_accuracy(accuracy) << "\n";
        return DRKD_OK;
    }

    if (compare->parsed()) {
        const int rc = drkd_compare(cmp_config.c_str(),
                                    cmp_out.empty() ? nullptr : cmp_out.c_str(),
                                    cmp_seed_set ? &cmp_seed : nullptr,
                                    cmp_quiet ? nullptr : print_line, nullptr);
        if (rc != DRKD_OK) return report_failure(rc);
        return DRKD_OK;
    }

    if (report->parsed()) {
        std::vector<const char*> paths;
        paths.reserve(report_inputs.size());
        for (const std::string& p : report_inputs) paths.push_back(p.c_str());
        const int rc = drkd_report(paths.data(), paths.size(), report_out.c_str(),
                                   report_quiet ? nullptr : print_line, nullptr);
        if (rc != DRKD_OK) return report_failure(rc);
        return DRKD_OK;
    }

    std::cerr << "drkd: error: no command given\n";
    return DRKD_ERR_CONFIG;
}
