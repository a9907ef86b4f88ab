#include "drkd/trainer.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "csv_util.hpp"
#include "drkd/error.hpp"
#include "drkd/rng.hpp"

namespace drkd {

const char kMetricsCsvHeader[] =
    "epoch,train_loss,ce_component,kl_component,train_accuracy,test_accuracy,"
    "rectified_fraction,learning_rate,wall_time_s";

namespace {

// Stream tags separating the independent RNG uses of one run seed.
constexpr std::uint64_t kInitStream = 0x696e6974;     // parameter init
constexpr std::uint64_t kShuffleStream = 0x73687566;  // batch order

constexpr std::size_t kEvalBatch = 256;

using csvu::format_double;
using csvu::format_u64;

double parse_double_field(std::string_view field, const std::string& path,
                          std::size_t line_no) {
    double v = 0.0;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc{} || res.ptr != field.data() + field.size()) {
        std::ostringstream msg;
        msg << path << ": line " << line_no << ": malformed number \"" << field << "\"";
        throw io_error(msg.str());
    }
    return v;
}

std::uint64_t parse_u64_field(std::string_view field, const std::string& path,
                              std::size_t line_no) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc{} || res.ptr != field.data() + field.size()) {
        std::ostringstream msg;
        msg << path << ": line " << line_no << ": malformed integer \"" << field << "\"";
        throw io_error(msg.str());
    }
    return v;
}

std::string utc_now_iso8601() {
    const std::time_t t =
        std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& rows) {
    std::string body(kMetricsCsvHeader);
    body.push_back('\n');
    for (const MetricsRecord& r : rows) {
        body += format_u64(r.epoch);
        for (double v : {r.train_loss, r.ce_component, r.kl_component, r.train_accuracy,
                         r.test_accuracy, r.rectified_fraction, r.learning_rate,
                         r.wall_time_s}) {
            body.push_back(',');
            body += format_double(v);
        }
        body.push_back('\n');
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error(path + ": cannot open for writing");
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) throw io_error(path + ": write failed");
}

std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error(path + ": cannot open file");
    std::string line;
    if (!std::getline(in, line) || line != kMetricsCsvHeader)
        throw io_error(path + ": line 1: unexpected metrics header");
    std::vector<MetricsRecord> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string_view> fields;
        std::string_view rest(line);
        while (true) {
            const std::size_t comma = rest.find(',');
            if (comma == std::string_view::npos) {
                fields.push_back(rest);
                break;
            }
            fields.push_back(rest.substr(0, comma));
            rest.remove_prefix(comma + 1);
        }
        if (fields.size() != 9) {
            std::ostringstream msg;
            msg << path << ": line " << line_no << ": expected 9 fields, found "
                << fields.size();
            throw io_error(msg.str());
        }
        MetricsRecord r;
        r.epoch = parse_u64_field(fields[0], path, line_no);
        r.train_loss = parse_double_field(fields[1], path, line_no);
        r.ce_component = parse_double_field(fields[2], path, line_no);
        r.kl_component = parse_double_field(fields[3], path, line_no);
        r.train_accuracy = parse_double_field(fields[4], path, line_no);
        r.test_accuracy = parse_double_field(fields[5], path, line_no);
        r.rectified_fraction = parse_double_field(fields[6], path, line_no);
        r.learning_rate = parse_double_field(fields[7], path, line_no);
        r.wall_time_s = parse_double_field(fields[8], path, line_no);
        rows.push_back(r);
    }
    return rows;
}

SgdState make_sgd_state(const Parameters& params) {
    return SgdState{Parameters::zeros_like(params)};
}

void sgd_step(Parameters& params, const Parameters& grads, SgdState& state,
              double learning_rate, double momentum, double weight_decay) {
    if (!params.same_layout(grads) || !params.same_layout(state.velocity))
        throw std::invalid_argument("sgd_step: parameter/gradient layouts disagree");
    for (std::size_t t = 0; t < params.count(); ++t) {
        auto& [name, p] = params.entries()[t];
        const Tensor& g = grads.entries()[t].second;
        Tensor& v = state.velocity.entries()[t].second;
        if (!g.all_finite())
            throw std::runtime_error("non-finite gradient in tensor " + name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            v[i] = momentum * v[i] + g[i] + weight_decay * p[i];
            p[i] -= learning_rate * v[i];
        }
    }
}

double evaluate(const ModelSpec& spec, const Parameters& params, const Dataset& ds) {
    spec.validate();
    ds.validate();
    if (ds.class_count != spec.class_count) {
        std::ostringstream msg;
        msg << "dataset has " << ds.class_count << " classes but the model has "
            << spec.class_count;
        throw config_error(msg.str());
    }
    std::size_t correct = 0;
    for (const Batch& b : sequential_batches(ds, kEvalBatch)) {
        const Tensor logits = forward(spec, params, b.inputs);
        const auto predicted = argmax_rows(logits);
        for (std::size_t i = 0; i < predicted.size(); ++i)
            if (predicted[i] == b.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

double evaluate(const Checkpoint& ckpt, const Dataset& ds) {
    return evaluate(ckpt.spec, ckpt.params, ds);
}

std::string run_checkpoint_path(const std::string& output_dir) {
    return (std::filesystem::path(output_dir) / "checkpoint.bin").string();
}

std::string run_metrics_path(const std::string& output_dir) {
    return (std::filesystem::path(output_dir) / "metrics.csv").string();
}

namespace {

using LossFn = std::function<LossResult(const Batch&, const Tensor& logits)>;

void check_model_matches_data(const ModelSpec& model, const Dataset& train) {
    if (model.input_size() != train.feature_count()) {
        std::ostringstream msg;
        msg << "model.input_shape: flattened size " << model.input_size()
            << " does not match the dataset's " << train.feature_count() << " features";
        throw config_error(msg.str());
    }
    if (model.class_count != train.class_count) {
        std::ostringstream msg;
        msg << "model.class_count: " << model.class_count
            << " does not match the dataset's " << train.class_count << " classes";
        throw config_error(msg.str());
    }
}

TrainResult train_core(const RunConfig& cfg, const Dataset& train, const Dataset& test,
                       const LossFn& loss_fn, const ProgressFn& progress) {
    check_model_matches_data(cfg.model, train);

    const std::uint64_t init_seed =
        derive_seed(derive_seed(cfg.run_seed, kInitStream), cfg.model.init_seed);
    Parameters params = init_params(cfg.model, init_seed);
    SgdState state = make_sgd_state(params);
    const BatchPlan plan{cfg.data.batch_size, derive_seed(cfg.run_seed, kShuffleStream),
                         cfg.data.drop_last};

    std::vector<MetricsRecord> metrics;
    metrics.reserve(cfg.optim.epochs);
    for (std::uint64_t epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        const double lr = cfg.optim.lr_at(epoch);
        double loss_sum = 0.0, ce_sum = 0.0, kl_sum = 0.0;
        std::uint64_t rectified = 0;
        std::size_t seen = 0;
        std::size_t batch_no = 0;
        for (const Batch& b : batches(train, plan, epoch)) {
            ForwardCache cache;
            const Tensor logits = forward(cfg.model, params, b.inputs, &cache);
            if (!logits.all_finite()) {
                std::ostringstream msg;
                msg << "training aborted: non-finite logits at epoch " << epoch
                    << ", batch " << batch_no;
                throw std::runtime_error(msg.str());
            }
            const LossResult res = loss_fn(b, logits);
            if (!std::isfinite(res.loss)) {
                std::ostringstream msg;
                msg << "training aborted: non-finite loss at epoch " << epoch
                    << ", batch " << batch_no;
                throw std::runtime_error(msg.str());
            }
            const double n = static_cast<double>(b.labels.size());
            loss_sum += res.loss * n;
            ce_sum += res.ce_component * n;
            kl_sum += res.kl_component * n;
            rectified += res.rectified_count;
            seen += b.labels.size();
            const Parameters grads = backward(cfg.model, params, cache, res.grad);
            try {
                sgd_step(params, grads, state, lr, cfg.optim.momentum,
                         cfg.optim.weight_decay);
            } catch (const std::runtime_error& e) {
                std::ostringstream msg;
                msg << "training aborted at epoch " << epoch << ", batch " << batch_no
                    << ": " << e.what();
                throw std::runtime_error(msg.str());
            }
            ++batch_no;
        }

        MetricsRecord row;
        row.epoch = epoch;
        const double total = static_cast<double>(seen);
        row.train_loss = loss_sum / total;
        row.ce_component = ce_sum / total;
        row.kl_component = kl_sum / total;
        row.train_accuracy = evaluate(cfg.model, params, train);
        row.test_accuracy = evaluate(cfg.model, params, test);
        row.rectified_fraction = static_cast<double>(rectified) / total;
        row.learning_rate = lr;
        if (cfg.record_timing) {
            const std::chrono::duration<double> elapsed =
                std::chrono::steady_clock::now() - epoch_start;
            row.wall_time_s = elapsed.count();
        }
        metrics.push_back(row);

        if (progress) {
            std::ostringstream line;
            line << "epoch " << epoch << "/" << cfg.optim.epochs << " lr=" << lr
                 << " loss=" << row.train_loss << " train_acc=" << row.train_accuracy
                 << " test_acc=" << row.test_accuracy;
            if (cfg.distill.framework == Framework::drkd)
                line << " rectified=" << row.rectified_fraction;
            progress(line.str());
        }
    }

    Checkpoint ckpt;
    ckpt.spec = cfg.model;
    ckpt.params = std::move(params);
    ckpt.meta.run_seed = cfg.run_seed;
    ckpt.meta.epochs = cfg.optim.epochs;
    ckpt.meta.final_train_accuracy = evaluate(cfg.model, ckpt.params, train);
    ckpt.meta.final_test_accuracy = evaluate(cfg.model, ckpt.params, test);
    if (cfg.record_timing) ckpt.meta.created_at = utc_now_iso8601();

    std::filesystem::create_directories(cfg.output_dir);
    write_metrics_csv(run_metrics_path(cfg.output_dir), metrics);
    save_checkpoint(ckpt, run_checkpoint_path(cfg.output_dir));
    return TrainResult{std::move(ckpt), std::move(metrics)};
}

}  // namespace

TrainResult train_baseline(const RunConfig& cfg, const ProgressFn& progress) {
    cfg.validate();
    if (cfg.distill.framework != Framework::baseline &&
        cfg.distill.framework != Framework::lsr)
        throw config_error("distill.framework: train_baseline handles baseline and lsr, "
                           "not " + std::string(to_string(cfg.distill.framework)));
    auto [train, test] = load_datasets(cfg.data);
    const DistillConfig dcfg = cfg.distill;
    const LossFn loss_fn =
        dcfg.framework == Framework::baseline
            ? LossFn([](const Batch& b, const Tensor& logits) {
                  return cross_entropy(logits, b.labels);
              })
            : LossFn([dcfg](const Batch& b, const Tensor& logits) {
                  return lsr_loss(logits, b.labels, dcfg);
              });
    return train_core(cfg, train, test, loss_fn, progress);
}

TrainResult distill(const RunConfig& cfg, const ProgressFn& progress) {
    cfg.validate();
    if (!framework_needs_teacher(cfg.distill.framework))
        throw config_error("distill.framework: distill requires a teacher framework, "
                           "not " + std::string(to_string(cfg.distill.framework)));
    const Checkpoint teacher = load_checkpoint(cfg.teacher_checkpoint);
    if (teacher.spec.class_count != cfg.model.class_count) {
        std::ostringstream msg;
        msg << "teacher_checkpoint: teacher has " << teacher.spec.class_count
            << " classes but the student model has " << cfg.model.class_count;
        throw config_error(msg.str());
    }

    auto [train, test] = load_datasets(cfg.data);
    if (teacher.spec.input_size() != train.feature_count()) {
        std::ostringstream msg;
        msg << "teacher_checkpoint: teacher expects " << teacher.spec.input_size()
            << " features but the dataset has " << train.feature_count();
        throw config_error(msg.str());
    }

    // The teacher is frozen, so its logits per training sample are fixed;
    // compute them once and gather per batch.
    const std::size_t classes = cfg.model.class_count;
    Tensor teacher_logits({train.size(), classes});
    for (const Batch& b : sequential_batches(train, kEvalBatch)) {
        const Tensor out = forward(teacher.spec, teacher.params, b.inputs);
        for (std::size_t i = 0; i < b.rows.size(); ++i)
            for (std::size_t k = 0; k < classes; ++k)
                teacher_logits.at(b.rows[i], k) = out.at(i, k);
    }

    const DistillConfig dcfg = cfg.distill;
    const LossFn loss_fn = [&teacher_logits, dcfg, classes](const Batch& b,
                                                            const Tensor& logits) {
        Tensor t({b.rows.size(), classes});
        for (std::size_t i = 0; i < b.rows.size(); ++i)
            for (std::size_t k = 0; k < classes; ++k)
                t.at(i, k) = teacher_logits.at(b.rows[i], k);
        return dcfg.framework == Framework::drkd ? drkd_loss(logits, t, b.labels, dcfg)
                                                 : kd_loss(logits, t, b.labels, dcfg);
    };
    return train_core(cfg, train, test, loss_fn, progress);
}

TrainResult run_training(const RunConfig& cfg, const ProgressFn& progress) {
    return framework_needs_teacher(cfg.distill.framework) ? distill(cfg, progress)
                                                          : train_baseline(cfg, progress);
}

}  // namespace drkd
