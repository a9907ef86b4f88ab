#include <cstdint>
#include <string>

#include "doctest.h"
#include "json.hpp"

#include "drkd/config.hpp"
#include "drkd/error.hpp"
#include "test_util.hpp"

using drkd::config_error;
using drkd::DataConfig;
using drkd::DataKind;
using drkd::Framework;
using drkd::LrStep;
using drkd::ModelKind;
using drkd::OptimConfig;
using drkd::RunConfig;
using nlohmann::json;

namespace {

json minimal_config() {
    return json::parse(R"({
        "model": {"kind": "mlp", "layer_sizes": [4, 8, 2], "input_shape": [4], "class_count": 2},
        "data": {"kind": "blobs", "classes": 2, "dim": 4, "train_per_class": 5,
                 "test_per_class": 3, "spread": 1.0, "seed": 1},
        "optim": {"epochs": 2, "lr_schedule": []},
        "distill": {"framework": "baseline"},
        "output_dir": "out"
    })");
}

}  // namespace

TEST_CASE("a minimal config parses with documented defaults") {
    RunConfig cfg = drkd::run_config_from_json(minimal_config());
    CHECK(cfg.model.kind == ModelKind::mlp);
    CHECK(cfg.data.batch_size == 32);
    CHECK_FALSE(cfg.data.drop_last);
    CHECK_FALSE(cfg.data.standardize);
    CHECK(cfg.optim.learning_rate == 0.1);
    CHECK(cfg.optim.momentum == 0.9);
    CHECK(cfg.optim.weight_decay == 5e-4);
    CHECK(cfg.distill.framework == Framework::baseline);
    CHECK(cfg.distill.tau == 1.0);
    CHECK(cfg.distill.alpha == 0.0);
    CHECK_FALSE(cfg.distill.kd_grad_scale);
    CHECK(cfg.run_seed == 0);
    CHECK(cfg.teacher_checkpoint.empty());
    CHECK_FALSE(cfg.record_timing);
}

TEST_CASE("configs round-trip through their json form") {
    json j = minimal_config();
    j["model"]["init_seed"] = 9;
    j["data"]["batch_size"] = 17;
    j["data"]["standardize"] = true;
    j["optim"] = {{"learning_rate", 0.05},
                  {"momentum", 0.8},
                  {"weight_decay", 1e-4},
                  {"epochs", 10},
                  {"lr_schedule", json::array({json::array({5, 0.1})})}};
    j["distill"] = {{"framework", "drkd"}, {"tau", 6.0}, {"alpha", 0.95},
                    {"kd_grad_scale", true}};
    j["teacher_checkpoint"] = "teacher.bin";
    j["run_seed"] = 77;
    j["record_timing"] = true;

    RunConfig cfg = drkd::run_config_from_json(j);
    CHECK(cfg.optim.lr_schedule.size() == 1);
    CHECK(cfg.optim.lr_schedule[0].epoch == 5);
    RunConfig again = drkd::run_config_from_json(drkd::run_config_to_json(cfg));
    CHECK(again == cfg);
}

TEST_CASE("idx and cifar10 data configs parse their file lists") {
    json j = minimal_config();
    j["data"] = {{"kind", "idx"},
                 {"train_images", "ti"}, {"train_labels", "tl"},
                 {"test_images", "si"}, {"test_labels", "sl"},
                 {"class_count", 10}};
    j["model"] = {{"kind", "mlp"}, {"layer_sizes", {4, 8, 2}},
                  {"input_shape", {4}}, {"class_count", 2}};
    RunConfig cfg = drkd::run_config_from_json(j);
    CHECK(cfg.data.kind == DataKind::idx);
    CHECK(cfg.data.train_images == "ti");
    CHECK(cfg.data.class_count == 10);
    RunConfig again = drkd::run_config_from_json(drkd::run_config_to_json(cfg));
    CHECK(again == cfg);

    j["data"] = {{"kind", "cifar10"},
                 {"train_files", {"a.bin", "b.bin"}},
                 {"test_files", {"t.bin"}}};
    cfg = drkd::run_config_from_json(j);
    CHECK(cfg.data.kind == DataKind::cifar10);
    CHECK(cfg.data.train_files == std::vector<std::string>{"a.bin", "b.bin"});
    again = drkd::run_config_from_json(drkd::run_config_to_json(cfg));
    CHECK(again == cfg);
}

TEST_CASE("validation failures carry dotted field paths") {
    SUBCASE("alpha out of range") {
        json j = minimal_config();
        j["distill"]["alpha"] = 1.5;
        CHECK_THROWS_WITH_AS(drkd::run_config_from_json(j),
                             doctest::Contains("distill.alpha"), config_error);
    }
    SUBCASE("unknown framework") {
        json j = minimal_config();
        j["distill"]["framework"] = "gan";
        CHECK_THROWS_AS(drkd::run_config_from_json(j), config_error);
    }
    SUBCASE("unknown field is rejected, not ignored") {
        json j = minimal_config();
        j["optim"]["learning_rat"] = 0.1;
        CHECK_THROWS_WITH_AS(drkd::run_config_from_json(j),
                             doctest::Contains("optim.learning_rat"), config_error);
    }
    SUBCASE("wrong type") {
        json j = minimal_config();
        j["optim"]["epochs"] = "ten";
        CHECK_THROWS_WITH_AS(drkd::run_config_from_json(j),
                             doctest::Contains("optim.epochs"), config_error);
    }
    SUBCASE("missing required output_dir") {
        json j = minimal_config();
        j.erase("output_dir");
        CHECK_THROWS_WITH_AS(drkd::run_config_from_json(j),
                             doctest::Contains("output_dir"), config_error);
    }
    SUBCASE("missing epochs") {
        json j = minimal_config();
        j["optim"].erase("epochs");
        CHECK_THROWS_WITH_AS(drkd::run_config_from_json(j),
                             doctest::Contains("optim.epochs"), config_error);
    }
}

TEST_CASE("teacher checkpoint presence must match the framework") {
    json j = minimal_config();
    j["distill"] = {{"framework", "drkd"}, {"tau", 6.0}, {"alpha", 0.4}};
    CHECK_THROWS_WITH_AS(drkd::run_config_from_json(j),
                         doctest::Contains("teacher_checkpoint"), config_error);

    j["teacher_checkpoint"] = "t.bin";
    CHECK_NOTHROW(drkd::run_config_from_json(j));

    j["distill"] = {{"framework", "baseline"}};
    CHECK_THROWS_WITH_AS(drkd::run_config_from_json(j),
                         doctest::Contains("teacher_checkpoint"), config_error);
}

TEST_CASE("learning rate schedules validate and apply multiplicatively") {
    OptimConfig optim;
    optim.learning_rate = 0.2;
    optim.epochs = 10;
    optim.lr_schedule = {{4, 0.5}, {8, 0.1}};
    optim.validate();
    CHECK(optim.lr_at(0) == 0.2);
    CHECK(optim.lr_at(3) == 0.2);
    CHECK(optim.lr_at(4) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(optim.lr_at(7) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(optim.lr_at(8) == doctest::Approx(0.01).epsilon(1e-15));
    CHECK(optim.lr_at(9) == doctest::Approx(0.01).epsilon(1e-15));

    optim.lr_schedule = {{8, 0.5}, {4, 0.1}};
    CHECK_THROWS_WITH_AS(optim.validate(), doctest::Contains("strictly increasing"),
                         config_error);
    optim.lr_schedule = {{10, 0.5}};
    CHECK_THROWS_WITH_AS(optim.validate(), doctest::Contains("beyond the epoch budget"),
                         config_error);
    optim.lr_schedule = {{4, 0.0}};
    CHECK_THROWS_AS(optim.validate(), config_error);
}

TEST_CASE("the default schedule steps at half and three quarters") {
    const auto sched = drkd::default_lr_schedule(20);
    REQUIRE(sched.size() == 2);
    CHECK(sched[0].epoch == 10);
    CHECK(sched[0].multiplier == 0.1);
    CHECK(sched[1].epoch == 15);
    CHECK(sched[1].multiplier == 0.1);
    // short budgets degenerate gracefully
    CHECK(drkd::default_lr_schedule(1).empty());
    for (std::uint64_t epochs : {2ull, 3ull, 4ull}) {
        OptimConfig optim;
        optim.epochs = epochs;
        optim.lr_schedule = drkd::default_lr_schedule(epochs);
        CHECK_NOTHROW(optim.validate());
    }
}

TEST_CASE("data config validation names the offending field") {
    DataConfig data;
    data.kind = DataKind::blobs;
    data.train_per_class = 0;
    CHECK_THROWS_WITH_AS(data.validate(), doctest::Contains("data.train_per_class"),
                         config_error);
    data = DataConfig{};
    data.batch_size = 0;
    CHECK_THROWS_WITH_AS(data.validate(), doctest::Contains("batch_size"), config_error);
    data = DataConfig{};
    data.kind = DataKind::idx;
    CHECK_THROWS_AS(data.validate(), config_error);  // missing paths
}

TEST_CASE("load_run_config prefixes problems with the file path") {
    testutil::TempDir dir;
    const auto path = (dir / "cfg.json").string();

    testutil::write_file(path, "{ not json");
    CHECK_THROWS_WITH_AS(drkd::load_run_config(path), doctest::Contains(path.c_str()),
                         config_error);

    json j = minimal_config();
    j["distill"]["alpha"] = 2.0;
    testutil::write_file(path, j.dump());
    CHECK_THROWS_WITH_AS(drkd::load_run_config(path), doctest::Contains(path.c_str()),
                         config_error);

    testutil::write_file(path, minimal_config().dump());
    RunConfig cfg = drkd::load_run_config(path);
    CHECK(cfg.output_dir == "out");

    CHECK_THROWS_AS(drkd::load_run_config((dir / "absent.json").string()), config_error);
}

TEST_CASE("blob datasets ignore the run seed by construction") {
    DataConfig data;  // blobs defaults
    data.classes = 3;
    data.dim = 4;
    data.train_per_class = 6;
    data.test_per_class = 4;
    data.seed = 11;
    auto [train_a, test_a] = drkd::load_datasets(data);
    auto [train_b, test_b] = drkd::load_datasets(data);
    CHECK(train_a.inputs == train_b.inputs);
    CHECK(test_a.inputs == test_b.inputs);
    CHECK(train_a.size() == 18);
    CHECK(test_a.size() == 12);
    CHECK(train_a.split == "train");
    CHECK(test_a.split == "test");
    // train and test draw from different streams
    CHECK_FALSE(train_a.inputs.at(0, 0) == test_a.inputs.at(0, 0));
}

TEST_CASE("standardize in the data config applies train stats to both splits") {
    DataConfig data;
    data.classes = 2;
    data.dim = 4;
    data.train_per_class = 20;
    data.test_per_class = 10;
    data.standardize = true;
    auto [train, test] = drkd::load_datasets(data);
    CHECK(train.standardized);
    CHECK(test.standardized);
    CHECK(train.norm == test.norm);  // same record: the training split's stats
    const drkd::ChannelStats stats = drkd::channel_stats(train);
    CHECK(std::fabs(stats.mean[0]) < 1e-12);
    CHECK(std::fabs(stats.stdev[0] - 1.0) < 1e-12);
}

TEST_CASE("data kind names round-trip") {
    CHECK(drkd::data_kind_from_string("blobs") == DataKind::blobs);
    CHECK(drkd::data_kind_from_string("idx") == DataKind::idx);
    CHECK(drkd::data_kind_from_string("cifar10") == DataKind::cifar10);
    CHECK(drkd::to_string(DataKind::cifar10) == "cifar10");
    CHECK_THROWS_AS(drkd::data_kind_from_string("imagenet"), config_error);
}
