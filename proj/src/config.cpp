#include "drkd/config.hpp"

#include <cmath>
#include <fstream>

#include "drkd/checkpoint.hpp"
#include "drkd/error.hpp"
#include "drkd/rng.hpp"
#include "json_util.hpp"

namespace drkd {

namespace {

// Stream tags for deriving the two blob splits from one corpus seed.
constexpr std::uint64_t kBlobsTrainStream = 1;
constexpr std::uint64_t kBlobsTestStream = 2;

}  // namespace

std::string_view to_string(DataKind k) {
    switch (k) {
        case DataKind::blobs: return "blobs";
        case DataKind::idx: return "idx";
        case DataKind::cifar10: return "cifar10";
    }
    throw std::logic_error("unreachable data kind");
}

DataKind data_kind_from_string(std::string_view name) {
    if (name == "blobs") return DataKind::blobs;
    if (name == "idx") return DataKind::idx;
    if (name == "cifar10") return DataKind::cifar10;
    throw config_error("data.kind: unknown kind \"" + std::string(name) +
                       "\" (expected blobs, idx or cifar10)");
}

void DataConfig::validate() const {
    if (batch_size == 0) throw config_error("data.batch_size: must be positive");
    switch (kind) {
        case DataKind::blobs:
            if (classes < 2) throw config_error("data.classes: must be at least 2");
            if (dim < 2) throw config_error("data.dim: must be at least 2");
            if (train_per_class == 0)
                throw config_error("data.train_per_class: must be positive");
            if (test_per_class == 0)
                throw config_error("data.test_per_class: must be positive");
            if (!(spread > 0.0) || !std::isfinite(spread))
                throw config_error("data.spread: must be positive and finite");
            break;
        case DataKind::idx:
            if (train_images.empty()) throw config_error("data.train_images: missing path");
            if (train_labels.empty()) throw config_error("data.train_labels: missing path");
            if (test_images.empty()) throw config_error("data.test_images: missing path");
            if (test_labels.empty()) throw config_error("data.test_labels: missing path");
            break;
        case DataKind::cifar10:
            if (train_files.empty()) throw config_error("data.train_files: missing paths");
            if (test_files.empty()) throw config_error("data.test_files: missing paths");
            break;
    }
}

std::pair<Dataset, Dataset> load_datasets(const DataConfig& cfg) {
    cfg.validate();
    Dataset train, test;
    switch (cfg.kind) {
        case DataKind::blobs:
            train = synth_blobs(derive_seed(cfg.seed, kBlobsTrainStream), cfg.classes,
                                cfg.dim, cfg.train_per_class, cfg.spread);
            test = synth_blobs(derive_seed(cfg.seed, kBlobsTestStream), cfg.classes,
                               cfg.dim, cfg.test_per_class, cfg.spread);
            break;
        case DataKind::idx: {
            train = load_idx(cfg.train_images, cfg.train_labels, cfg.class_count);
            test = load_idx(cfg.test_images, cfg.test_labels, cfg.class_count);
            // With an inferred class count the splits must still agree.
            const std::size_t classes = std::max(train.class_count, test.class_count);
            train.class_count = classes;
            test.class_count = classes;
            break;
        }
        case DataKind::cifar10:
            train = load_cifar10_bin(cfg.train_files);
            test = load_cifar10_bin(cfg.test_files);
            break;
    }
    train.split = "train";
    test.split = "test";
    if (cfg.standardize) {
        const ChannelStats stats = channel_stats(train);
        standardize(train, stats);
        standardize(test, stats);
    }
    return {std::move(train), std::move(test)};
}

double OptimConfig::lr_at(std::uint64_t epoch) const {
    double lr = learning_rate;
    for (const LrStep& step : lr_schedule)
        if (step.epoch <= epoch) lr *= step.multiplier;
    return lr;
}

void OptimConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw config_error("optim.learning_rate: must be positive and finite");
    if (!(momentum >= 0.0 && momentum < 1.0))
        throw config_error("optim.momentum: must be in [0, 1)");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay))
        throw config_error("optim.weight_decay: must be nonnegative and finite");
    std::uint64_t prev = 0;
    bool first = true;
    for (const LrStep& step : lr_schedule) {
        if (step.epoch >= epochs)
            throw config_error("optim.lr_schedule: step epoch beyond the epoch budget");
        if (!first && step.epoch <= prev)
            throw config_error("optim.lr_schedule: step epochs must be strictly increasing");
        if (!(step.multiplier > 0.0) || !std::isfinite(step.multiplier))
            throw config_error("optim.lr_schedule: multipliers must be positive and finite");
        prev = step.epoch;
        first = false;
    }
}

std::vector<LrStep> default_lr_schedule(std::uint64_t epochs) {
    std::vector<LrStep> schedule;
    const std::uint64_t half = epochs / 2;
    const std::uint64_t three_quarters = epochs * 3 / 4;
    if (half > 0 && half < epochs) schedule.push_back({half, 0.1});
    if (three_quarters > half && three_quarters < epochs)
        schedule.push_back({three_quarters, 0.1});
    return schedule;
}

void RunConfig::validate() const {
    model.validate();
    data.validate();
    optim.validate();
    distill.validate();
    if (framework_needs_teacher(distill.framework)) {
        if (teacher_checkpoint.empty())
            throw config_error("teacher_checkpoint: required for framework " +
                               std::string(to_string(distill.framework)));
    } else if (!teacher_checkpoint.empty()) {
        throw config_error("teacher_checkpoint: must not be set for framework " +
                           std::string(to_string(distill.framework)));
    }
    if (output_dir.empty()) throw config_error("output_dir: missing field");
}

DataConfig data_config_from_json(const nlohmann::json& j, const std::string& prefix) {
    DataConfig cfg;
    cfg.kind = data_kind_from_string(jsonu::require<std::string>(j, "kind", prefix));
    switch (cfg.kind) {
        case DataKind::blobs:
            jsonu::check_keys(j, prefix,
                              {"kind", "classes", "dim", "train_per_class",
                               "test_per_class", "spread", "seed", "batch_size",
                               "drop_last", "standardize"});
            cfg.classes = jsonu::opt<std::size_t>(j, "classes", prefix, cfg.classes);
            cfg.dim = jsonu::opt<std::size_t>(j, "dim", prefix, cfg.dim);
            cfg.train_per_class =
                jsonu::opt<std::size_t>(j, "train_per_class", prefix, cfg.train_per_class);
            cfg.test_per_class =
                jsonu::opt<std::size_t>(j, "test_per_class", prefix, cfg.test_per_class);
            cfg.spread = jsonu::opt<double>(j, "spread", prefix, cfg.spread);
            cfg.seed = jsonu::opt<std::uint64_t>(j, "seed", prefix, cfg.seed);
            break;
        case DataKind::idx:
            jsonu::check_keys(j, prefix,
                              {"kind", "train_images", "train_labels", "test_images",
                               "test_labels", "class_count", "batch_size", "drop_last",
                               "standardize"});
            cfg.train_images = jsonu::require<std::string>(j, "train_images", prefix);
            cfg.train_labels = jsonu::require<std::string>(j, "train_labels", prefix);
            cfg.test_images = jsonu::require<std::string>(j, "test_images", prefix);
            cfg.test_labels = jsonu::require<std::string>(j, "test_labels", prefix);
            cfg.class_count = jsonu::opt<std::size_t>(j, "class_count", prefix, 0);
            break;
        case DataKind::cifar10:
            jsonu::check_keys(j, prefix, {"kind", "train_files", "test_files",
                                          "batch_size", "drop_last", "standardize"});
            cfg.train_files =
                jsonu::require<std::vector<std::string>>(j, "train_files", prefix);
            cfg.test_files =
                jsonu::require<std::vector<std::string>>(j, "test_files", prefix);
            break;
    }
    cfg.batch_size = jsonu::opt<std::size_t>(j, "batch_size", prefix, cfg.batch_size);
    cfg.drop_last = jsonu::opt<bool>(j, "drop_last", prefix, cfg.drop_last);
    cfg.standardize = jsonu::opt<bool>(j, "standardize", prefix, cfg.standardize);
    cfg.validate();
    return cfg;
}

OptimConfig optim_config_from_json(const nlohmann::json& j, const std::string& prefix) {
    jsonu::check_keys(j, prefix, {"learning_rate", "momentum", "weight_decay", "epochs",
                                  "lr_schedule"});
    OptimConfig cfg;
    cfg.learning_rate = jsonu::opt<double>(j, "learning_rate", prefix, cfg.learning_rate);
    cfg.momentum = jsonu::opt<double>(j, "momentum", prefix, cfg.momentum);
    cfg.weight_decay = jsonu::opt<double>(j, "weight_decay", prefix, cfg.weight_decay);
    cfg.epochs = jsonu::require<std::uint64_t>(j, "epochs", prefix);
    if (j.contains("lr_schedule")) {
        const auto& sched = j.at("lr_schedule");
        if (!sched.is_array())
            throw config_error(prefix + ".lr_schedule: expected an array of [epoch, multiplier]");
        for (std::size_t i = 0; i < sched.size(); ++i) {
            const auto& entry = sched[i];
            if (!entry.is_array() || entry.size() != 2)
                throw config_error(prefix + ".lr_schedule: entry " + std::to_string(i) +
                                   " is not an [epoch, multiplier] pair");
            try {
                cfg.lr_schedule.push_back(
                    {entry[0].get<std::uint64_t>(), entry[1].get<double>()});
            } catch (const nlohmann::json::exception&) {
                throw config_error(prefix + ".lr_schedule: entry " + std::to_string(i) +
                                   " has wrong types");
            }
        }
    } else {
        cfg.lr_schedule = default_lr_schedule(cfg.epochs);
    }
    cfg.validate();
    return cfg;
}

DistillConfig distill_config_from_json(const nlohmann::json& j, const std::string& prefix) {
    jsonu::check_keys(j, prefix, {"framework", "tau", "alpha", "lsr_epsilon",
                                  "kd_grad_scale"});
    DistillConfig cfg;
    cfg.framework =
        framework_from_string(jsonu::require<std::string>(j, "framework", prefix));
    cfg.tau = jsonu::opt<double>(j, "tau", prefix, cfg.tau);
    cfg.alpha = jsonu::opt<double>(j, "alpha", prefix, cfg.alpha);
    cfg.lsr_epsilon = jsonu::opt<double>(j, "lsr_epsilon", prefix, cfg.lsr_epsilon);
    cfg.kd_grad_scale = jsonu::opt<bool>(j, "kd_grad_scale", prefix, cfg.kd_grad_scale);
    cfg.validate();
    return cfg;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    jsonu::check_keys(j, "config",
                      {"model", "data", "optim", "distill", "teacher_checkpoint",
                       "run_seed", "output_dir", "record_timing"});
    RunConfig cfg;
    if (!j.contains("model")) throw config_error("model: missing section");
    cfg.model = model_spec_from_json(j.at("model"), "model");
    if (!j.contains("data")) throw config_error("data: missing section");
    cfg.data = data_config_from_json(j.at("data"), "data");
    if (!j.contains("optim")) throw config_error("optim: missing section");
    cfg.optim = optim_config_from_json(j.at("optim"), "optim");
    if (!j.contains("distill")) throw config_error("distill: missing section");
    cfg.distill = distill_config_from_json(j.at("distill"), "distill");
    cfg.teacher_checkpoint =
        jsonu::opt<std::string>(j, "teacher_checkpoint", "config", "");
    cfg.run_seed = jsonu::opt<std::uint64_t>(j, "run_seed", "config", 0);
    cfg.output_dir = jsonu::require<std::string>(j, "output_dir", "config");
    cfg.record_timing = jsonu::opt<bool>(j, "record_timing", "config", false);
    cfg.validate();
    return cfg;
}

nlohmann::json data_config_to_json(const DataConfig& cfg) {
    nlohmann::json j;
    j["kind"] = std::string(to_string(cfg.kind));
    switch (cfg.kind) {
        case DataKind::blobs:
            j["classes"] = cfg.classes;
            j["dim"] = cfg.dim;
            j["train_per_class"] = cfg.train_per_class;
            j["test_per_class"] = cfg.test_per_class;
            j["spread"] = cfg.spread;
            j["seed"] = cfg.seed;
            break;
        case DataKind::idx:
            j["train_images"] = cfg.train_images;
            j["train_labels"] = cfg.train_labels;
            j["test_images"] = cfg.test_images;
            j["test_labels"] = cfg.test_labels;
            j["class_count"] = cfg.class_count;
            break;
        case DataKind::cifar10:
            j["train_files"] = cfg.train_files;
            j["test_files"] = cfg.test_files;
            break;
    }
    j["batch_size"] = cfg.batch_size;
    j["drop_last"] = cfg.drop_last;
    j["standardize"] = cfg.standardize;
    return j;
}

nlohmann::json optim_config_to_json(const OptimConfig& cfg) {
    nlohmann::json sched = nlohmann::json::array();
    for (const LrStep& step : cfg.lr_schedule)
        sched.push_back({step.epoch, step.multiplier});
    return {{"learning_rate", cfg.learning_rate},
            {"momentum", cfg.momentum},
            {"weight_decay", cfg.weight_decay},
            {"epochs", cfg.epochs},
            {"lr_schedule", std::move(sched)}};
}

nlohmann::json distill_config_to_json(const DistillConfig& cfg) {
    return {{"framework", std::string(to_string(cfg.framework))},
            {"tau", cfg.tau},
            {"alpha", cfg.alpha},
            {"lsr_epsilon", cfg.lsr_epsilon},
            {"kd_grad_scale", cfg.kd_grad_scale}};
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["model"] = model_spec_to_json(cfg.model);
    j["data"] = data_config_to_json(cfg.data);
    j["optim"] = optim_config_to_json(cfg.optim);
    j["distill"] = distill_config_to_json(cfg.distill);
    if (!cfg.teacher_checkpoint.empty()) j["teacher_checkpoint"] = cfg.teacher_checkpoint;
    j["run_seed"] = cfg.run_seed;
    j["output_dir"] = cfg.output_dir;
    j["record_timing"] = cfg.record_timing;
    return j;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error(path + ": cannot open config file");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw config_error(path + ": invalid JSON: " + e.what());
    }
    try {
        return run_config_from_json(j);
    } catch (const config_error& e) {
        throw config_error(path + ": " + e.what());
    }
}

}  // namespace drkd
