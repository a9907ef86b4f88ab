#include "drkd.h"

#include <exception>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "drkd/config.hpp"
#include "drkd/error.hpp"
#include "drkd/experiment.hpp"
#include "drkd/trainer.hpp"

namespace {

thread_local std::string g_last_error;

int fail(int status, const std::string& msg) {
    g_last_error = msg;
    return status;
}

// Maps the library's exception taxonomy onto the status codes.
template <typename Fn>
int guarded(Fn&& fn) {
    try {
        fn();
        return DRKD_OK;
    } catch (const drkd::config_error& e) {
        return fail(DRKD_ERR_CONFIG, e.what());
    } catch (const std::invalid_argument& e) {
        return fail(DRKD_ERR_CONFIG, e.what());
    } catch (const std::exception& e) {
        return fail(DRKD_ERR_RUNTIME, e.what());
    }
}

drkd::ProgressFn make_progress(drkd_log_fn fn, void* user) {
    if (!fn) return {};
    return [fn, user](const std::string& line) { fn(line.c_str(), user); };
}

}  // namespace

struct drkd_run {
    drkd::RunConfig cfg;
    std::string framework_name;
    drkd::ProgressFn progress;
};

extern "C" {

const char* drkd_version(void) { return "0.1.0"; }

const char* drkd_last_error(void) { return g_last_error.c_str(); }

int drkd_run_open(const char* config_path, drkd_run** out) {
    if (!config_path || !out) return fail(DRKD_ERR_CONFIG, "null argument");
    *out = nullptr;
    return guarded([&] {
        auto run = std::make_unique<drkd_run>();
        run->cfg = drkd::load_run_config(config_path);
        run->framework_name = std::string(drkd::to_string(run->cfg.distill.framework));
        *out = run.release();
    });
}

void drkd_run_close(drkd_run* run) { delete run; }

const char* drkd_run_framework(const drkd_run* run) {
    return run ? run->framework_name.c_str() : "";
}

int drkd_run_set_seed(drkd_run* run, uint64_t seed) {
    if (!run) return fail(DRKD_ERR_CONFIG, "null run handle");
    run->cfg.run_seed = seed;
    return DRKD_OK;
}

int drkd_run_set_output_dir(drkd_run* run, const char* dir) {
    if (!run) return fail(DRKD_ERR_CONFIG, "null run handle");
    if (!dir || !*dir) return fail(DRKD_ERR_CONFIG, "output_dir: empty path");
    run->cfg.output_dir = dir;
    return DRKD_OK;
}

int drkd_run_set_log(drkd_run* run, drkd_log_fn fn, void* user) {
    if (!run) return fail(DRKD_ERR_CONFIG, "null run handle");
    run->progress = make_progress(fn, user);
    return DRKD_OK;
}

int drkd_run_train(drkd_run* run) {
    if (!run) return fail(DRKD_ERR_CONFIG, "null run handle");
    return guarded([&] { drkd::run_training(run->cfg, run->progress); });
}

int drkd_evaluate(const char* checkpoint_path, const char* config_path,
                  const char* split, double* out_accuracy) {
    if (!checkpoint_path || !config_path || !split || !out_accuracy)
        return fail(DRKD_ERR_CONFIG, "null argument");
    return guarded([&] {
        const std::string which(split);
        if (which != "train" && which != "test")
            throw drkd::config_error("split: expected \"train\" or \"test\", got \"" +
                                     which + "\"");
        const drkd::RunConfig cfg = drkd::load_run_config(config_path);
        const drkd::Checkpoint ckpt = drkd::load_checkpoint(checkpoint_path);
        auto [train, test] = drkd::load_datasets(cfg.data);
        *out_accuracy = drkd::evaluate(ckpt, which == "train" ? train : test);
    });
}

int drkd_compare(const char* manifest_path, const char* out_dir,
                 const uint64_t* seed, drkd_log_fn log, void* user) {
    if (!manifest_path) return fail(DRKD_ERR_CONFIG, "null manifest path");
    return guarded([&] {
        drkd::ExperimentManifest manifest = drkd::load_manifest(manifest_path);
        if (out_dir && *out_dir) manifest.output_dir = out_dir;
        if (seed) manifest.seeds = {*seed};
        drkd::run_compare(manifest, make_progress(log, user));
    });
}

int drkd_report(const char* const* metrics_paths, size_t count,
                const char* out_dir, drkd_log_fn log, void* user) {
    if (!metrics_paths || count == 0)
        return fail(DRKD_ERR_CONFIG, "no metrics files given");
    if (!out_dir || !*out_dir) return fail(DRKD_ERR_CONFIG, "output directory missing");
    return guarded([&] {
        std::vector<std::string> paths;
        paths.reserve(count);
        for (size_t i = 0; i < count; ++i) {
            if (!metrics_paths[i]) throw drkd::config_error("null metrics path");
            paths.emplace_back(metrics_paths[i]);
        }
        const auto series = drkd::load_metrics_series(paths);
        const std::filesystem::path out(out_dir);
        std::filesystem::create_directories(out);
        const drkd::ProgressFn progress = make_progress(log, user);

        const auto write_out = [&](const char* name, const std::string& body) {
            const std::filesystem::path path = out / name;
            std::ofstream f(path, std::ios::binary | std::ios::trunc);
            if (!f) throw drkd::io_error(path.string() + ": cannot open for writing");
            f.write(body.data(), static_cast<std::streamsize>(body.size()));
            if (!f) throw drkd::io_error(path.string() + ": write failed");
            if (progress) progress("wrote " + path.string());
        };
        write_out("accuracy.svg", drkd::render_accuracy_svg(series));
        write_out("metrics_long.csv", drkd::merged_long_csv(series));
    });
}

}  // extern "C"
