#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "drkd/data.hpp"
#include "drkd/losses.hpp"
#include "drkd/model.hpp"

namespace drkd {

enum class DataKind { blobs, idx, cifar10 };

std::string_view to_string(DataKind k);
DataKind data_kind_from_string(std::string_view name);  // config_error on unknown

// Where the corpus comes from and how to batch it. The blobs seed is
// independent of run_seed on purpose: every arm and every training seed of
// an experiment must see the identical corpus.
struct DataConfig {
    DataKind kind = DataKind::blobs;

    // blobs
    std::size_t classes = 10;
    std::size_t dim = 32;
    std::size_t train_per_class = 100;
    std::size_t test_per_class = 50;
    double spread = 1.0;
    std::uint64_t seed = 0;

    // idx
    std::string train_images, train_labels, test_images, test_labels;
    std::size_t class_count = 0;  // 0 = infer from the label bytes

    // cifar10
    std::vector<std::string> train_files, test_files;

    // batching & preprocessing
    std::size_t batch_size = 32;
    bool drop_last = false;
    bool standardize = false;

    void validate() const;  // throws config_error

    friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

// Loads (train, test) per the config; when standardize is set, both splits
// get the training split's channel statistics.
std::pair<Dataset, Dataset> load_datasets(const DataConfig& cfg);

// SGD hyperparameters. lr_schedule entries are (epoch, multiplier) step
// decays: from that 0-based epoch onward the learning rate is multiplied.
struct LrStep {
    std::uint64_t epoch = 0;
    double multiplier = 1.0;

    friend bool operator==(const LrStep&, const LrStep&) = default;
};

struct OptimConfig {
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::uint64_t epochs = 1;
    std::vector<LrStep> lr_schedule;

    // Learning rate in effect at a 0-based epoch: base rate times every
    // multiplier whose step epoch has been reached.
    double lr_at(std::uint64_t epoch) const;
    void validate() const;  // throws config_error

    friend bool operator==(const OptimConfig&, const OptimConfig&) = default;
};

// The conventional step recipe: multiply by 0.1 at 50% and at 75% of the
// epoch budget (degenerate entries dropped for very short runs).
std::vector<LrStep> default_lr_schedule(std::uint64_t epochs);

// Everything one training run needs. record_timing keeps wall-clock values
// out of the artifacts by default so reruns are byte-identical.
struct RunConfig {
    ModelSpec model;
    DataConfig data;
    OptimConfig optim;
    DistillConfig distill;
    std::string teacher_checkpoint;  // empty = none
    std::uint64_t run_seed = 0;
    std::string output_dir;
    bool record_timing = false;

    void validate() const;  // throws config_error

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

DataConfig data_config_from_json(const nlohmann::json& j, const std::string& prefix);
OptimConfig optim_config_from_json(const nlohmann::json& j, const std::string& prefix);
DistillConfig distill_config_from_json(const nlohmann::json& j, const std::string& prefix);
RunConfig run_config_from_json(const nlohmann::json& j);

nlohmann::json data_config_to_json(const DataConfig& cfg);
nlohmann::json optim_config_to_json(const OptimConfig& cfg);
nlohmann::json distill_config_to_json(const DistillConfig& cfg);
nlohmann::json run_config_to_json(const RunConfig& cfg);

// Reads and validates a config file; parse and validation problems are
// config_error with the file path and the dotted field path.
RunConfig load_run_config(const std::string& path);

}  // namespace drkd
