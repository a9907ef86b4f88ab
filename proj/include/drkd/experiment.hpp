#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "drkd/config.hpp"
#include "drkd/trainer.hpp"

namespace drkd {

// One framework arm of a comparison; the config comes from a run-config
// file referenced by the manifest. compare overrides its run_seed,
// output_dir and teacher_checkpoint per cell.
struct ExperimentArm {
    std::string name;
    RunConfig config;

    friend bool operator==(const ExperimentArm&, const ExperimentArm&) = default;
};

// A multi-seed, multi-framework comparison. Every arm must share the
// model, data and optimizer configs so that only the loss framework
// varies; the self-teacher has its own optimizer budget (its quality is
// the experiment's knob) but the same model and data.
struct ExperimentManifest {
    std::string name;
    std::vector<ExperimentArm> arms;
    bool has_teacher = false;
    RunConfig teacher;  // meaningful only when has_teacher
    std::vector<std::uint64_t> seeds;
    std::string output_dir;
    std::string report_title;

    void validate() const;  // throws config_error
};

// Parses a manifest file; config paths inside it are resolved relative to
// the manifest's directory.
ExperimentManifest load_manifest(const std::string& path);

// Aggregates over seeds for one arm. stdev is the sample standard
// deviation (n - 1); increment is this arm's mean minus the baseline
// arm's mean. mean_rectified_fraction averages each run's epoch-mean
// rectified_fraction and is meaningful for drkd arms.
struct ArmSummary {
    std::string name;
    Framework framework = Framework::baseline;
    std::vector<double> final_test_accuracy;  // per seed, in seed order
    double mean = 0.0;
    double stdev = 0.0;
    double increment = 0.0;
    double mean_rectified_fraction = 0.0;
};

struct ComparisonReport {
    std::string experiment;
    std::vector<std::uint64_t> seeds;
    std::string baseline_arm;
    std::vector<ArmSummary> arms;  // manifest order
};

// Runs (or resumes) every teacher and arm x seed cell sequentially, then
// writes report.json and report.md into the manifest's output_dir. A cell
// is complete when its metrics row count equals its epoch budget and its
// checkpoint exists; complete cells are read, not retrained. A failing
// cell aborts with the cell identity prefixed to the error.
ComparisonReport run_compare(const ExperimentManifest& manifest,
                             const ProgressFn& progress = {});

nlohmann::json report_to_json(const ComparisonReport& report);
std::string report_to_markdown(const ComparisonReport& report);

// One named metrics trajectory, for charting.
struct MetricsSeries {
    std::string name;
    std::vector<MetricsRecord> rows;
};

// Reads each CSV and derives a unique display name per input (file stem,
// parent directory, or sanitized path — whichever first disambiguates).
// A file without data rows is an io_error.
std::vector<MetricsSeries> load_metrics_series(const std::vector<std::string>& paths);

// Standalone SVG chart of test_accuracy vs epoch: fixed [0,1] accuracy
// axis, one polyline per series (axes and ticks are line elements, so
// polyline count == series count), plus a legend.
std::string render_accuracy_svg(const std::vector<MetricsSeries>& series);

// Long-format merge: series name column prepended to the metrics columns,
// numbers formatted exactly as in the per-run CSVs.
std::string merged_long_csv(const std::vector<MetricsSeries>& series);

}  // namespace drkd
