#include "drkd/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "csv_util.hpp"
#include "drkd/error.hpp"
#include "drkd/rng.hpp"
#include "json_util.hpp"

namespace drkd {

namespace fs = std::filesystem;

namespace {

// Teacher runs draw from their own seed lane so a teacher never shares a
// trajectory with the baseline arm of the same seed.
constexpr std::uint64_t kTeacherSeedStream = 0x74656163;

bool valid_component_name(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_')
            return false;
    return true;
}

}  // namespace

void ExperimentManifest::validate() const {
    if (name.empty()) throw config_error("name: missing field");
    if (output_dir.empty()) throw config_error("output_dir: missing field");
    if (seeds.empty()) throw config_error("seeds: must not be empty");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
        throw config_error("seeds: duplicate seed");
    if (arms.empty()) throw config_error("arms: must not be empty");

    std::set<std::string> names;
    std::size_t baselines = 0;
    bool needs_teacher = false;
    for (std::size_t i = 0; i < arms.size(); ++i) {
        const ExperimentArm& arm = arms[i];
        const std::string where = "arms[" + std::to_string(i) + "]";
        if (!valid_component_name(arm.name))
            throw config_error(where + ".name: must be non-empty, using [A-Za-z0-9_-]");
        if (arm.name == "teacher")
            throw config_error(where + ".name: \"teacher\" is reserved");
        if (!names.insert(arm.name).second)
            throw config_error(where + ".name: duplicate arm name \"" + arm.name + "\"");
        if (arm.config.optim.epochs == 0)
            throw config_error(where + ": optim.epochs must be at least 1");
        if (arm.config.distill.framework == Framework::baseline) ++baselines;
        needs_teacher = needs_teacher || framework_needs_teacher(arm.config.distill.framework);
        if (i > 0) {
            if (!(arm.config.model == arms[0].config.model))
                throw config_error(where + ".model: arms must share one model spec");
            if (!(arm.config.data == arms[0].config.data))
                throw config_error(where + ".data: arms must share one data config");
            if (!(arm.config.optim == arms[0].config.optim))
                throw config_error(where + ".optim: arms must share one optimizer config");
        }
    }
    if (baselines != 1)
        throw config_error("arms: exactly one baseline arm is required, found " +
                           std::to_string(baselines));
    if (needs_teacher) {
        if (!has_teacher)
            throw config_error("teacher: missing config (required by a distillation arm)");
        if (teacher.distill.framework != Framework::baseline)
            throw config_error("teacher: framework must be baseline (the self-teacher is "
                               "trained with plain cross-entropy)");
        if (!(teacher.model == arms[0].config.model))
            throw config_error("teacher.model: must equal the arms' model (self-teacher)");
        if (!(teacher.data == arms[0].config.data))
            throw config_error("teacher.data: must equal the arms' data config");
    }
}

namespace {

// Run configs referenced by a manifest omit the fields compare manages
// (output_dir, per-seed teacher_checkpoint); placeholders keep the shared
// config parser strict for everything else.
RunConfig load_referenced_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw config_error(path.string() + ": cannot open config file");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw config_error(path.string() + ": invalid JSON: " + e.what());
    }
    if (!j.contains("output_dir")) j["output_dir"] = "(managed by compare)";
    if (j.contains("distill") && j["distill"].is_object() &&
        j["distill"].contains("framework") && j["distill"]["framework"].is_string()) {
        try {
            const Framework f =
                framework_from_string(j["distill"]["framework"].get<std::string>());
            if (framework_needs_teacher(f) && !j.contains("teacher_checkpoint"))
                j["teacher_checkpoint"] = "(managed by compare)";
        } catch (const config_error&) {
            // fall through; run_config_from_json reports it with the field path
        }
    }
    try {
        return run_config_from_json(j);
    } catch (const config_error& e) {
        throw config_error(path.string() + ": " + e.what());
    }
}

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path fp(p);
    return fp.is_relative() ? base / fp : fp;
}

}  // namespace

ExperimentManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error(path + ": cannot open manifest");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw config_error(path + ": invalid JSON: " + e.what());
    }
    const fs::path base = fs::path(path).parent_path();
    try {
        jsonu::check_keys(j, "manifest", {"name", "arms", "teacher", "seeds",
                                          "output_dir", "report_title"});
        ExperimentManifest m;
        m.name = jsonu::require<std::string>(j, "name", "manifest");
        m.seeds = jsonu::require<std::vector<std::uint64_t>>(j, "seeds", "manifest");
        m.output_dir = jsonu::require<std::string>(j, "output_dir", "manifest");
        m.report_title = jsonu::opt<std::string>(j, "report_title", "manifest", m.name);
        if (!j.contains("arms") || !j["arms"].is_array())
            throw config_error("manifest.arms: expected an array");
        for (std::size_t i = 0; i < j["arms"].size(); ++i) {
            const std::string where = "manifest.arms[" + std::to_string(i) + "]";
            const auto& entry = j["arms"][i];
            jsonu::check_keys(entry, where, {"name", "config"});
            ExperimentArm arm;
            arm.name = jsonu::require<std::string>(entry, "name", where);
            arm.config = load_referenced_config(
                resolve(base, jsonu::require<std::string>(entry, "config", where)));
            m.arms.push_back(std::move(arm));
        }
        if (j.contains("teacher")) {
            m.has_teacher = true;
            m.teacher = load_referenced_config(
                resolve(base, jsonu::require<std::string>(j, "teacher", "manifest")));
        }
        m.validate();
        return m;
    } catch (const config_error& e) {
        throw config_error(path + ": " + e.what());
    }
}

namespace {

bool cell_complete(const RunConfig& cfg) {
    const std::string metrics = run_metrics_path(cfg.output_dir);
    if (!fs::exists(metrics) || !fs::exists(run_checkpoint_path(cfg.output_dir)))
        return false;
    try {
        return read_metrics_csv(metrics).size() == cfg.optim.epochs;
    } catch (const io_error&) {
        return false;  // half-written metrics: retrain the cell
    }
}

std::vector<MetricsRecord> ensure_cell(const RunConfig& cfg, const std::string& cell,
                                       const ProgressFn& progress) {
    try {
        if (cell_complete(cfg)) {
            if (progress) progress("[" + cell + "] complete, reusing existing run");
            return read_metrics_csv(run_metrics_path(cfg.output_dir));
        }
        ProgressFn sub;
        if (progress)
            sub = [&progress, &cell](const std::string& line) {
                progress("[" + cell + "] " + line);
            };
        TrainResult res = run_training(cfg, sub);
        if (progress)
            progress("[" + cell + "] done, final test_acc=" +
                     csvu::format_double(res.checkpoint.meta.final_test_accuracy));
        return std::move(res.metrics);
    } catch (const config_error& e) {
        throw config_error(cell + ": " + e.what());
    } catch (const io_error& e) {
        throw io_error(cell + ": " + e.what());
    } catch (const std::exception& e) {
        throw std::runtime_error(cell + ": " + e.what());
    }
}

double mean_of(const std::vector<double>& v) {
    double sum = 0.0;
    for (double x : v) sum += x;
    return sum / static_cast<double>(v.size());
}

double sample_stdev(const std::vector<double>& v, double mean) {
    if (v.size() < 2) return 0.0;
    double sq = 0.0;
    for (double x : v) {
        const double d = x - mean;
        sq += d * d;
    }
    return std::sqrt(sq / static_cast<double>(v.size() - 1));
}

void write_text_file(const fs::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error(path.string() + ": cannot open for writing");
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) throw io_error(path.string() + ": write failed");
}

}  // namespace

ComparisonReport run_compare(const ExperimentManifest& manifest,
                             const ProgressFn& progress) {
    manifest.validate();
    const fs::path out(manifest.output_dir);
    const bool need_teacher =
        std::any_of(manifest.arms.begin(), manifest.arms.end(), [](const ExperimentArm& a) {
            return framework_needs_teacher(a.config.distill.framework);
        });

    std::vector<std::string> teacher_ckpts(manifest.seeds.size());
    if (need_teacher) {
        for (std::size_t i = 0; i < manifest.seeds.size(); ++i) {
            const std::uint64_t seed = manifest.seeds[i];
            RunConfig tcfg = manifest.teacher;
            tcfg.run_seed = derive_seed(seed, kTeacherSeedStream);
            tcfg.output_dir =
                (out / "teacher" / ("seed" + csvu::format_u64(seed))).string();
            ensure_cell(tcfg, "teacher seed " + csvu::format_u64(seed), progress);
            teacher_ckpts[i] = run_checkpoint_path(tcfg.output_dir);
        }
    }

    ComparisonReport report;
    report.experiment = manifest.report_title.empty() ? manifest.name : manifest.report_title;
    report.seeds = manifest.seeds;
    double baseline_mean = 0.0;
    for (const ExperimentArm& arm : manifest.arms) {
        ArmSummary summary;
        summary.name = arm.name;
        summary.framework = arm.config.distill.framework;
        std::vector<double> run_rectified_means;
        for (std::size_t i = 0; i < manifest.seeds.size(); ++i) {
            const std::uint64_t seed = manifest.seeds[i];
            RunConfig cfg = arm.config;
            cfg.run_seed = seed;
            cfg.output_dir = (out / arm.name / ("seed" + csvu::format_u64(seed))).string();
            cfg.teacher_checkpoint =
                framework_needs_teacher(cfg.distill.framework) ? teacher_ckpts[i] : "";
            const auto rows = ensure_cell(
                cfg, "arm " + arm.name + " seed " + csvu::format_u64(seed), progress);
            summary.final_test_accuracy.push_back(rows.back().test_accuracy);
            double rect_sum = 0.0;
            for (const MetricsRecord& r : rows) rect_sum += r.rectified_fraction;
            run_rectified_means.push_back(rect_sum / static_cast<double>(rows.size()));
        }
        summary.mean = mean_of(summary.final_test_accuracy);
        summary.stdev = sample_stdev(summary.final_test_accuracy, summary.mean);
        summary.mean_rectified_fraction = mean_of(run_rectified_means);
        if (summary.framework == Framework::baseline) {
            baseline_mean = summary.mean;
            report.baseline_arm = arm.name;
        }
        report.arms.push_back(std::move(summary));
    }
    for (ArmSummary& s : report.arms) s.increment = s.mean - baseline_mean;

    fs::create_directories(out);
    write_text_file(out / "report.json", report_to_json(report).dump(2) + "\n");
    write_text_file(out / "report.md", report_to_markdown(report));
    if (progress)
        progress("report written to " + (out / "report.json").string() + " and " +
                 (out / "report.md").string());
    return report;
}

nlohmann::json report_to_json(const ComparisonReport& report) {
    nlohmann::json arms = nlohmann::json::array();
    for (const ArmSummary& s : report.arms) {
        nlohmann::json a{{"name", s.name},
                         {"framework", std::string(to_string(s.framework))},
                         {"final_test_accuracy", s.final_test_accuracy},
                         {"mean", s.mean},
                         {"stdev", s.stdev},
                         {"increment_over_baseline", s.increment}};
        if (s.framework == Framework::drkd)
            a["mean_rectified_fraction"] = s.mean_rectified_fraction;
        arms.push_back(std::move(a));
    }
    return {{"experiment", report.experiment},
            {"seeds", report.seeds},
            {"baseline_arm", report.baseline_arm},
            {"dispersion", "sample standard deviation"},
            {"arms", std::move(arms)}};
}

namespace {

std::string fixed4(double v) {
    char buf[48];
    const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 4);
    return std::string(buf, res.ptr);
}

std::string signed_fixed4(double v) {
    return v > 0.0 ? "+" + fixed4(v) : fixed4(v);
}

}  // namespace

std::string report_to_markdown(const ComparisonReport& report) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < report.arms.size(); ++i)
        if (report.arms[i].mean > report.arms[best].mean) best = i;
    const bool any_drkd =
        std::any_of(report.arms.begin(), report.arms.end(),
                    [](const ArmSummary& s) { return s.framework == Framework::drkd; });

    std::ostringstream md;
    md << "# " << report.experiment << "\n\n";
    md << "Final test accuracy over " << report.seeds.size()
       << " seeds, shown as mean ± sample standard deviation; the best arm is bold.\n\n";
    md << "| arm | framework | test accuracy | increment over baseline |";
    if (any_drkd) md << " mean rectified fraction |";
    md << "\n|---|---|---|---|";
    if (any_drkd) md << "---|";
    md << "\n";
    for (std::size_t i = 0; i < report.arms.size(); ++i) {
        const ArmSummary& s = report.arms[i];
        const bool bold = i == best;
        const std::string acc = fixed4(s.mean) + " ± " + fixed4(s.stdev);
        md << "| " << (bold ? "**" + s.name + "**" : s.name) << " | "
           << to_string(s.framework) << " | " << (bold ? "**" + acc + "**" : acc)
           << " | " << signed_fixed4(s.increment) << " |";
        if (any_drkd)
            md << " " << (s.framework == Framework::drkd ? fixed4(s.mean_rectified_fraction)
                                                         : std::string("—"))
               << " |";
        md << "\n";
    }
    return md.str();
}

namespace {

std::string sanitize_path_name(const std::string& path) {
    std::string out = path;
    for (char& c : out)
        if (c == '/' || c == '\\') c = '-';
    while (!out.empty() && out.front() == '-') out.erase(out.begin());
    return out;
}

bool usable_names(const std::vector<std::string>& names) {
    std::set<std::string> seen;
    for (const std::string& n : names) {
        if (n.empty()) return false;
        if (!seen.insert(n).second) return false;
    }
    return true;
}

std::vector<std::string> derive_series_names(const std::vector<std::string>& paths) {
    std::vector<std::string> stems, parents, combos, deep, full;
    for (const std::string& p : paths) {
        const fs::path fp(p);
        stems.push_back(fp.stem().string());
        parents.push_back(fp.parent_path().filename().string());
        combos.push_back(parents.back().empty() ? std::string()
                                                : parents.back() + "/" + stems.back());
        // Two directory levels cover the compare layout (arm/seedN/metrics.csv).
        const std::string grand = fp.parent_path().parent_path().filename().string();
        deep.push_back(grand.empty() || parents.back().empty()
                           ? std::string()
                           : grand + "/" + parents.back());
        full.push_back(sanitize_path_name(p));
    }
    if (usable_names(stems)) return stems;
    if (usable_names(parents)) return parents;
    if (usable_names(deep)) return deep;
    if (usable_names(combos)) return combos;
    // Duplicated input paths still collide here; suffix them apart.
    std::set<std::string> seen;
    for (std::string& n : full) {
        std::string candidate = n;
        std::size_t k = 2;
        while (!seen.insert(candidate).second)
            candidate = n + "#" + std::to_string(k++);
        n = candidate;
    }
    return full;
}

}  // namespace

std::vector<MetricsSeries> load_metrics_series(const std::vector<std::string>& paths) {
    if (paths.empty()) throw io_error("no metrics files given");
    const std::vector<std::string> names = derive_series_names(paths);
    std::vector<MetricsSeries> out;
    for (std::size_t i = 0; i < paths.size(); ++i) {
        std::vector<MetricsRecord> rows = read_metrics_csv(paths[i]);
        if (rows.empty()) throw io_error(paths[i] + ": no data rows");
        out.push_back(MetricsSeries{names[i], std::move(rows)});
    }
    return out;
}

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string coord(double v) {
    char buf[48];
    const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 2);
    return std::string(buf, res.ptr);
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

}  // namespace

std::string render_accuracy_svg(const std::vector<MetricsSeries>& series) {
    if (series.empty()) throw std::invalid_argument("no series to chart");
    // Plot box in a fixed 720x480 canvas; the legend lives to the right.
    constexpr double kLeft = 60.0, kRight = 560.0, kTop = 30.0, kBottom = 440.0;

    std::uint64_t max_epoch = 0;
    for (const MetricsSeries& s : series)
        for (const MetricsRecord& r : s.rows) max_epoch = std::max(max_epoch, r.epoch);
    const double span = static_cast<double>(std::max<std::uint64_t>(max_epoch, 1));
    const auto x_of = [&](std::uint64_t epoch) {
        return kLeft + (static_cast<double>(epoch) / span) * (kRight - kLeft);
    };
    const auto y_of = [&](double acc) {
        const double a = std::clamp(acc, 0.0, 1.0);
        return kBottom - a * (kBottom - kTop);
    };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"720\" height=\"480\" "
           "viewBox=\"0 0 720 480\" role=\"img\">\n";
    svg << "  <rect x=\"0\" y=\"0\" width=\"720\" height=\"480\" fill=\"white\"/>\n";
    svg << "  <text x=\"" << coord(kLeft) << "\" y=\"20\" font-family=\"sans-serif\" "
           "font-size=\"14\" fill=\"#333\">test accuracy by epoch</text>\n";

    // Axes and ticks are plain line elements; polylines are data only.
    svg << "  <line x1=\"" << coord(kLeft) << "\" y1=\"" << coord(kBottom) << "\" x2=\""
        << coord(kRight) << "\" y2=\"" << coord(kBottom)
        << "\" stroke=\"#333\" stroke-width=\"1\"/>\n";
    svg << "  <line x1=\"" << coord(kLeft) << "\" y1=\"" << coord(kTop) << "\" x2=\""
        << coord(kLeft) << "\" y2=\"" << coord(kBottom)
        << "\" stroke=\"#333\" stroke-width=\"1\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double a = 0.25 * i;
        const double y = y_of(a);
        svg << "  <line x1=\"" << coord(kLeft - 4) << "\" y1=\"" << coord(y) << "\" x2=\""
            << coord(kLeft) << "\" y2=\"" << coord(y)
            << "\" stroke=\"#333\" stroke-width=\"1\"/>\n";
        svg << "  <text x=\"" << coord(kLeft - 8) << "\" y=\"" << coord(y + 4)
            << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\" "
               "text-anchor=\"end\">" << coord(a) << "</text>\n";
    }
    const std::uint64_t step = std::max<std::uint64_t>(1, (max_epoch + 7) / 8);
    for (std::uint64_t e = 0; e <= max_epoch; e += step) {
        const double x = x_of(e);
        svg << "  <line x1=\"" << coord(x) << "\" y1=\"" << coord(kBottom) << "\" x2=\""
            << coord(x) << "\" y2=\"" << coord(kBottom + 4)
            << "\" stroke=\"#333\" stroke-width=\"1\"/>\n";
        svg << "  <text x=\"" << coord(x) << "\" y=\"" << coord(kBottom + 18)
            << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\" "
               "text-anchor=\"middle\">" << csvu::format_u64(e) << "</text>\n";
    }
    svg << "  <text x=\"" << coord((kLeft + kRight) / 2) << "\" y=\"470\" "
           "font-family=\"sans-serif\" font-size=\"12\" fill=\"#333\" "
           "text-anchor=\"middle\">epoch</text>\n";

    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* color = kPalette[i % std::size(kPalette)];
        svg << "  <polyline fill=\"none\" stroke=\"" << color
            << "\" stroke-width=\"2\" points=\"";
        bool first = true;
        for (const MetricsRecord& r : series[i].rows) {
            if (!first) svg << ' ';
            svg << coord(x_of(r.epoch)) << ',' << coord(y_of(r.test_accuracy));
            first = false;
        }
        svg << "\"/>\n";
    }

    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* color = kPalette[i % std::size(kPalette)];
        const double y = kTop + static_cast<double>(i) * 18.0;
        svg << "  <rect x=\"572\" y=\"" << coord(y) << "\" width=\"12\" height=\"12\" "
               "fill=\"" << color << "\"/>\n";
        svg << "  <text x=\"590\" y=\"" << coord(y + 10)
            << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#333\">"
            << xml_escape(series[i].name) << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

namespace {

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out.push_back('"');
    return out;
}

}  // namespace

std::string merged_long_csv(const std::vector<MetricsSeries>& series) {
    std::string body = "series,";
    body += kMetricsCsvHeader;
    body.push_back('\n');
    for (const MetricsSeries& s : series) {
        for (const MetricsRecord& r : s.rows) {
            body += csv_escape(s.name);
            body.push_back(',');
            body += csvu::format_u64(r.epoch);
            for (double v : {r.train_loss, r.ce_component, r.kl_component,
                             r.train_accuracy, r.test_accuracy, r.rectified_fraction,
                             r.learning_rate, r.wall_time_s}) {
                body.push_back(',');
                body += csvu::format_double(v);
            }
            body.push_back('\n');
        }
    }
    return body;
}

}  // namespace drkd
