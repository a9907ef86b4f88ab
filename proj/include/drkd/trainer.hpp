#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "drkd/checkpoint.hpp"
#include "drkd/config.hpp"
#include "drkd/data.hpp"
#include "drkd/losses.hpp"
#include "drkd/model.hpp"

namespace drkd {

// One CSV row of training telemetry. Epochs are 0-based, matching the
// lr_schedule indexing. rectified_fraction is the epoch total of swapped
// teacher rows over the epoch's sample count (0 outside drkd).
struct MetricsRecord {
    std::uint64_t epoch = 0;
    double train_loss = 0.0;
    double ce_component = 0.0;
    double kl_component = 0.0;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    double rectified_fraction = 0.0;
    double learning_rate = 0.0;
    double wall_time_s = 0.0;

    friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

// The exact column set, also used to validate files on read.
extern const char kMetricsCsvHeader[];

// Doubles are written in shortest round-trip form so equal values always
// produce equal bytes. read throws io_error naming the file and line.
void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& rows);
std::vector<MetricsRecord> read_metrics_csv(const std::string& path);

// Momentum buffers, one per parameter tensor.
struct SgdState {
    Parameters velocity;
};

SgdState make_sgd_state(const Parameters& params);

// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
// Non-finite gradients abort with an error naming the tensor.
void sgd_step(Parameters& params, const Parameters& grads, SgdState& state,
              double learning_rate, double momentum, double weight_decay);

// Fraction of samples whose argmax logit equals the label.
double evaluate(const ModelSpec& spec, const Parameters& params, const Dataset& ds);
double evaluate(const Checkpoint& ckpt, const Dataset& ds);

using ProgressFn = std::function<void(const std::string& line)>;

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<MetricsRecord> metrics;
};

// Artifact locations inside a run's output directory.
std::string run_checkpoint_path(const std::string& output_dir);
std::string run_metrics_path(const std::string& output_dir);

// Stage 1: plain training with cross-entropy (framework baseline) or label
// smoothing (framework lsr). Writes checkpoint.bin and metrics.csv into
// cfg.output_dir. Fully determined by (cfg, run_seed).
TrainResult train_baseline(const RunConfig& cfg, const ProgressFn& progress = {});

// Stage 2: distillation against the frozen teacher checkpoint with
// framework normal_kd, tfkd_self or drkd. The teacher file is only read.
TrainResult distill(const RunConfig& cfg, const ProgressFn& progress = {});

// Dispatches on cfg.distill.framework.
TrainResult run_training(const RunConfig& cfg, const ProgressFn& progress = {});

}  // namespace drkd
