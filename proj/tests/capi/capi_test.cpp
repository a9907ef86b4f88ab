#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "drkd.h"

#include "test_util.hpp"

using nlohmann::json;
using testutil::TempDir;

// Defined in capi_smoke.c, compiled as plain C against drkd.h.
extern "C" int capi_header_compiles_as_c(void);

namespace {

void collect_line(const char* line, void* user) {
    static_cast<std::vector<std::string>*>(user)->push_back(line);
}

json blob_config_json(const std::string& framework, std::uint64_t epochs,
                      const std::string& out_dir) {
    json j = {
        {"model", {{"kind", "mlp"},
                   {"layer_sizes", {4, 12, 2}},
                   {"input_shape", {4}},
                   {"class_count", 2}}},
        {"data", {{"kind", "blobs"},
                  {"classes", 2},
                  {"dim", 4},
                  {"train_per_class", 20},
                  {"test_per_class", 10},
                  {"spread", 0.5},
                  {"seed", 3},
                  {"batch_size", 16}}},
        {"optim", {{"learning_rate", 0.1}, {"epochs", epochs}}},
        {"distill", {{"framework", framework}}},
        {"run_seed", 9},
    };
    if (framework == "drkd" || framework == "normal_kd" || framework == "tfkd_self") {
        j["distill"]["alpha"] = 0.7;
        j["distill"]["tau"] = 6.0;
    }
    if (!out_dir.empty()) j["output_dir"] = out_dir;
    return j;
}

std::string write_json(const std::string& path, const json& j) {
    testutil::write_file(path, j.dump(2));
    return path;
}

// Opens, optionally redirects, trains and closes a run; returns the status
// of the first failing step.
int train_config(const std::string& config_path, std::vector<std::string>* log) {
    drkd_run* run = nullptr;
    int rc = drkd_run_open(config_path.c_str(), &run);
    if (rc != DRKD_OK) return rc;
    if (log) drkd_run_set_log(run, collect_line, log);
    rc = drkd_run_train(run);
    drkd_run_close(run);
    return rc;
}

}  // namespace

TEST_CASE("version and error strings are always usable") {
    REQUIRE(drkd_version() != nullptr);
    CHECK(std::string(drkd_version()) == "0.1.0");
    REQUIRE(drkd_last_error() != nullptr);  // never NULL, even before any failure
}

TEST_CASE("the header is consumable from a plain C translation unit") {
    CHECK(capi_header_compiles_as_c() == 1);
}

TEST_CASE("null and invalid handles are rejected, not dereferenced") {
    CHECK(drkd_run_open(nullptr, nullptr) == DRKD_ERR_CONFIG);
    CHECK(std::string(drkd_last_error()) == "null argument");

    drkd_run* run = nullptr;
    CHECK(drkd_run_open("/no/such/config.json", &run) == DRKD_ERR_CONFIG);
    CHECK(run == nullptr);
    CHECK(std::string(drkd_last_error()).find("/no/such/config.json") !=
          std::string::npos);

    CHECK(drkd_run_set_seed(nullptr, 1) == DRKD_ERR_CONFIG);
    CHECK(drkd_run_set_output_dir(nullptr, "x") == DRKD_ERR_CONFIG);
    CHECK(drkd_run_set_log(nullptr, nullptr, nullptr) == DRKD_ERR_CONFIG);
    CHECK(drkd_run_train(nullptr) == DRKD_ERR_CONFIG);
    CHECK(std::string(drkd_run_framework(nullptr)).empty());
    drkd_run_close(nullptr);  // must be a no-op
}

TEST_CASE("config parse failures report DRKD_ERR_CONFIG with the field path") {
    TempDir tmp;
    json bad = blob_config_json("baseline", 1, (tmp / "out").string());
    bad["optim"]["learning_rate"] = -2.0;
    const std::string path = write_json((tmp / "bad.json").string(), bad);

    drkd_run* run = nullptr;
    CHECK(drkd_run_open(path.c_str(), &run) == DRKD_ERR_CONFIG);
    CHECK(run == nullptr);
    CHECK(std::string(drkd_last_error()).find("optim.learning_rate") !=
          std::string::npos);
}

TEST_CASE("run lifecycle: open, inspect, override, train, evaluate") {
    TempDir tmp;
    const std::string cfg_path = write_json(
        (tmp / "cfg.json").string(), blob_config_json("baseline", 2, (tmp / "out").string()));

    drkd_run* run = nullptr;
    REQUIRE(drkd_run_open(cfg_path.c_str(), &run) == DRKD_OK);
    REQUIRE(run != nullptr);
    CHECK(std::string(drkd_run_framework(run)) == "baseline");

    CHECK(drkd_run_set_seed(run, 123) == DRKD_OK);
    const std::string moved = (tmp / "moved").string();
    CHECK(drkd_run_set_output_dir(run, moved.c_str()) == DRKD_OK);
    CHECK(drkd_run_set_output_dir(run, "") == DRKD_ERR_CONFIG);  // rejected, keeps old

    std::vector<std::string> lines;
    CHECK(drkd_run_set_log(run, collect_line, &lines) == DRKD_OK);
    REQUIRE(drkd_run_train(run) == DRKD_OK);
    drkd_run_close(run);

    CHECK(lines.size() == 2);  // one progress line per epoch
    CHECK(lines[0].find("epoch 0/2") != std::string::npos);
    namespace fs = std::filesystem;
    CHECK(fs::exists(fs::path(moved) / "checkpoint.bin"));
    CHECK(fs::exists(fs::path(moved) / "metrics.csv"));
    CHECK_FALSE(fs::exists(tmp / "out"));  // the override replaced the config's dir

    double train_acc = -1.0, test_acc = -1.0;
    const std::string ckpt = (fs::path(moved) / "checkpoint.bin").string();
    CHECK(drkd_evaluate(ckpt.c_str(), cfg_path.c_str(), "train", &train_acc) == DRKD_OK);
    CHECK(drkd_evaluate(ckpt.c_str(), cfg_path.c_str(), "test", &test_acc) == DRKD_OK);
    CHECK(train_acc >= 0.0);
    CHECK(train_acc <= 1.0);
    CHECK(test_acc >= 0.0);
    CHECK(test_acc <= 1.0);
}

TEST_CASE("distillation frameworks train through the same entry point") {
    TempDir tmp;
    const std::string teacher_cfg = write_json(
        (tmp / "t.json").string(),
        blob_config_json("baseline", 2, (tmp / "teacher").string()));
    REQUIRE(train_config(teacher_cfg, nullptr) == DRKD_OK);

    json stu = blob_config_json("drkd", 2, (tmp / "student").string());
    stu["teacher_checkpoint"] =
        (std::filesystem::path(tmp / "teacher") / "checkpoint.bin").string();
    const std::string stu_cfg = write_json((tmp / "s.json").string(), stu);

    drkd_run* run = nullptr;
    REQUIRE(drkd_run_open(stu_cfg.c_str(), &run) == DRKD_OK);
    CHECK(std::string(drkd_run_framework(run)) == "drkd");
    std::vector<std::string> lines;
    drkd_run_set_log(run, collect_line, &lines);
    CHECK(drkd_run_train(run) == DRKD_OK);
    drkd_run_close(run);

    REQUIRE_FALSE(lines.empty());
    CHECK(lines[0].find("rectified=") != std::string::npos);

    SUBCASE("a missing teacher checkpoint is a runtime failure") {
        json orphan = blob_config_json("drkd", 1, (tmp / "orphan").string());
        orphan["teacher_checkpoint"] = (tmp / "gone.bin").string();
        const std::string orphan_cfg = write_json((tmp / "o.json").string(), orphan);
        CHECK(train_config(orphan_cfg, nullptr) == DRKD_ERR_RUNTIME);
        CHECK(std::string(drkd_last_error()).find("gone.bin") != std::string::npos);
    }
}

TEST_CASE("drkd_evaluate validates its inputs") {
    TempDir tmp;
    const std::string cfg_path = write_json(
        (tmp / "cfg.json").string(), blob_config_json("baseline", 1, (tmp / "out").string()));
    REQUIRE(train_config(cfg_path, nullptr) == DRKD_OK);
    const std::string ckpt =
        (std::filesystem::path(tmp / "out") / "checkpoint.bin").string();

    double acc = 0.0;
    CHECK(drkd_evaluate(nullptr, cfg_path.c_str(), "test", &acc) == DRKD_ERR_CONFIG);
    CHECK(drkd_evaluate(ckpt.c_str(), cfg_path.c_str(), "test", nullptr) ==
          DRKD_ERR_CONFIG);
    CHECK(drkd_evaluate(ckpt.c_str(), cfg_path.c_str(), "validation", &acc) ==
          DRKD_ERR_CONFIG);
    CHECK(std::string(drkd_last_error()).find("expected \"train\" or \"test\"") !=
          std::string::npos);

    const std::string missing = (tmp / "gone.bin").string();
    CHECK(drkd_evaluate(missing.c_str(), cfg_path.c_str(), "test", &acc) ==
          DRKD_ERR_RUNTIME);

    // A corrupt checkpoint is a runtime failure, not a crash.
    const std::string junk = (tmp / "junk.bin").string();
    testutil::write_file(junk, "this is not a checkpoint");
    CHECK(drkd_evaluate(junk.c_str(), cfg_path.c_str(), "test", &acc) ==
          DRKD_ERR_RUNTIME);
}

TEST_CASE("drkd_compare runs a manifest with optional overrides") {
    TempDir tmp;
    json base = blob_config_json("baseline", 2, "");
    json dr = blob_config_json("drkd", 2, "");
    json teacher = blob_config_json("baseline", 1, "");
    write_json((tmp / "base.json").string(), base);
    write_json((tmp / "dr.json").string(), dr);
    write_json((tmp / "teacher.json").string(), teacher);
    const json manifest = {{"name", "capi-exp"},
                           {"seeds", {1, 2}},
                           {"output_dir", (tmp / "out").string()},
                           {"teacher", "teacher.json"},
                           {"arms", json::array({
                                        json{{"name", "base"}, {"config", "base.json"}},
                                        json{{"name", "dr"}, {"config", "dr.json"}},
                                    })}};
    const std::string manifest_path =
        write_json((tmp / "manifest.json").string(), manifest);

    CHECK(drkd_compare(nullptr, nullptr, nullptr, nullptr, nullptr) == DRKD_ERR_CONFIG);

    std::vector<std::string> lines;
    REQUIRE(drkd_compare(manifest_path.c_str(), nullptr, nullptr, collect_line,
                         &lines) == DRKD_OK);
    namespace fs = std::filesystem;
    CHECK(fs::exists(fs::path(tmp / "out") / "report.json"));
    CHECK(fs::exists(fs::path(tmp / "out") / "base" / "seed1" / "metrics.csv"));
    CHECK_FALSE(lines.empty());

    SUBCASE("single-seed and output overrides") {
        const std::uint64_t seed = 7;
        const std::string single = (tmp / "single").string();
        REQUIRE(drkd_compare(manifest_path.c_str(), single.c_str(), &seed, nullptr,
                             nullptr) == DRKD_OK);
        const json rep = json::parse(
            testutil::read_file((fs::path(single) / "report.json").string()));
        CHECK(rep["seeds"] == json({7}));
        CHECK(fs::exists(fs::path(single) / "dr" / "seed7" / "checkpoint.bin"));
    }
}

TEST_CASE("drkd_report merges metrics and renders the chart") {
    TempDir tmp;
    const std::string cfg_a = write_json(
        (tmp / "a.json").string(), blob_config_json("baseline", 2, (tmp / "a").string()));
    REQUIRE(train_config(cfg_a, nullptr) == DRKD_OK);
    json b = blob_config_json("baseline", 2, (tmp / "b").string());
    b["run_seed"] = 77;
    const std::string cfg_b = write_json((tmp / "b.json").string(), b);
    REQUIRE(train_config(cfg_b, nullptr) == DRKD_OK);

    namespace fs = std::filesystem;
    const std::string ma = (fs::path(tmp / "a") / "metrics.csv").string();
    const std::string mb = (fs::path(tmp / "b") / "metrics.csv").string();
    const char* paths[] = {ma.c_str(), mb.c_str()};
    const std::string charts = (tmp / "charts").string();

    std::vector<std::string> lines;
    REQUIRE(drkd_report(paths, 2, charts.c_str(), collect_line, &lines) == DRKD_OK);
    const std::string svg =
        testutil::read_file((fs::path(charts) / "accuracy.svg").string());
    CHECK(testutil::count_occurrences(svg, "<polyline") == 2);
    CHECK(testutil::xml_well_formed(svg));
    CHECK(fs::exists(fs::path(charts) / "metrics_long.csv"));
    CHECK(lines.size() == 2);  // one "wrote ..." line per artifact

    SUBCASE("input validation") {
        CHECK(drkd_report(nullptr, 0, charts.c_str(), nullptr, nullptr) ==
              DRKD_ERR_CONFIG);
        CHECK(drkd_report(paths, 0, charts.c_str(), nullptr, nullptr) ==
              DRKD_ERR_CONFIG);
        CHECK(drkd_report(paths, 2, nullptr, nullptr, nullptr) == DRKD_ERR_CONFIG);
        const char* missing[] = {"/no/such/metrics.csv"};
        CHECK(drkd_report(missing, 1, charts.c_str(), nullptr, nullptr) ==
              DRKD_ERR_RUNTIME);
    }
}

TEST_CASE("identical configs trained through the C API are byte-identical") {
    TempDir tmp;
    json cfg = blob_config_json("baseline", 2, (tmp / "r1").string());
    const std::string p1 = write_json((tmp / "c1.json").string(), cfg);
    cfg["output_dir"] = (tmp / "r2").string();
    const std::string p2 = write_json((tmp / "c2.json").string(), cfg);

    REQUIRE(train_config(p1, nullptr) == DRKD_OK);
    REQUIRE(train_config(p2, nullptr) == DRKD_OK);
    namespace fs = std::filesystem;
    CHECK(testutil::read_file((fs::path(tmp / "r1") / "metrics.csv").string()) ==
          testutil::read_file((fs::path(tmp / "r2") / "metrics.csv").string()));
    CHECK(testutil::read_file((fs::path(tmp / "r1") / "checkpoint.bin").string()) ==
          testutil::read_file((fs::path(tmp / "r2") / "checkpoint.bin").string()));
}
