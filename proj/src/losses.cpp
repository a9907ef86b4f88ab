#include "drkd/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "drkd/error.hpp"

namespace drkd {

std::string_view to_string(Framework f) {
    switch (f) {
        case Framework::baseline: return "baseline";
        case Framework::normal_kd: return "normal_kd";
        case Framework::tfkd_self: return "tfkd_self";
        case Framework::drkd: return "drkd";
        case Framework::lsr: return "lsr";
    }
    return "?";
}

Framework framework_from_string(std::string_view name) {
    if (name == "baseline") return Framework::baseline;
    if (name == "normal_kd") return Framework::normal_kd;
    if (name == "tfkd_self") return Framework::tfkd_self;
    if (name == "drkd") return Framework::drkd;
    if (name == "lsr") return Framework::lsr;
    throw config_error("unknown framework \"" + std::string(name) +
                       "\" (expected baseline, normal_kd, tfkd_self, drkd or lsr)");
}

bool framework_needs_teacher(Framework f) {
    return f == Framework::normal_kd || f == Framework::tfkd_self || f == Framework::drkd;
}

void DistillConfig::validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) {
        throw config_error("distill.tau must be positive and finite (got " +
                           std::to_string(tau) + ")");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw config_error("distill.alpha must be in [0, 1] (got " +
                           std::to_string(alpha) + ")");
    }
    if (!(lsr_epsilon >= 0.0 && lsr_epsilon < 1.0)) {
        throw config_error("distill.lsr_epsilon must be in [0, 1) (got " +
                           std::to_string(lsr_epsilon) + ")");
    }
}

namespace {

void check_logits_labels(const Tensor& logits, const LabelBatch& labels,
                         const char* op) {
    if (logits.rank() != 2) {
        throw std::invalid_argument(std::string(op) + ": logits must be batch x classes");
    }
    if (logits.rows() != labels.size()) {
        throw std::invalid_argument(std::string(op) + ": batch size mismatch (" +
                                    std::to_string(logits.rows()) + " logit rows vs " +
                                    std::to_string(labels.size()) + " labels)");
    }
    if (logits.cols() != labels.class_count()) {
        throw std::invalid_argument(std::string(op) + ": class count mismatch (" +
                                    std::to_string(logits.cols()) + " logit columns vs " +
                                    std::to_string(labels.class_count()) + " label classes)");
    }
    if (!logits.all_finite()) {
        throw std::invalid_argument(std::string(op) + ": logits contain non-finite entries");
    }
}

// Count-returning core of rectify; operates in place.
std::size_t rectify_in_place(Tensor& teacher_logits, const LabelBatch& labels) {
    const std::size_t batch = teacher_logits.rows();
    const std::size_t classes = teacher_logits.cols();
    double* row = teacher_logits.data();
    std::size_t swapped = 0;
    for (std::size_t i = 0; i < batch; ++i, row += classes) {
        std::size_t l = 0;
        for (std::size_t k = 1; k < classes; ++k) {
            if (row[k] > row[l]) {
                l = k;
            }
        }
        const std::size_t j = labels[i];
        if (j != l) {
            std::swap(row[j], row[l]);
            ++swapped;
        }
    }
    return swapped;
}

// Shared Eq-style weighted loss on an already chosen teacher batch.
// drkd_loss routes rectified logits through here so that a teacher that
// is correct everywhere produces bit-identical results to kd_loss.
LossResult weighted_kd(const Tensor& student_logits, const Tensor& teacher_logits,
                       const LabelBatch& labels, const DistillConfig& cfg,
                       const char* op) {
    check_logits_labels(student_logits, labels, op);
    if (!teacher_logits.same_shape(student_logits)) {
        throw std::invalid_argument(std::string(op) + ": teacher/student shape mismatch");
    }
    if (!teacher_logits.all_finite()) {
        throw std::invalid_argument(std::string(op) + ": teacher logits contain non-finite entries");
    }
    cfg.validate();

    if (cfg.alpha == 0.0) {
        return cross_entropy(student_logits, labels);
    }

    const double alpha = cfg.alpha;
    const Temperature tau(cfg.tau);
    const double scale = cfg.kd_grad_scale ? cfg.tau * cfg.tau : 1.0;
    const std::size_t batch = student_logits.rows();
    const std::size_t classes = student_logits.cols();

    LossResult ce = cross_entropy(student_logits, labels);

    const Tensor teacher_probs = softmax_tau(teacher_logits, tau);
    const Tensor teacher_logp = log_softmax_tau(teacher_logits, tau);
    const Tensor student_probs = softmax_tau(student_logits, tau);
    const Tensor student_logp = log_softmax_tau(student_logits, tau);

    double kl_sum = 0.0;
    for (std::size_t i = 0; i < batch * classes; ++i) {
        const double pt = teacher_probs[i];
        if (pt > 0.0) {
            kl_sum += pt * (teacher_logp[i] - student_logp[i]);
        }
    }
    const double kl = kl_sum / static_cast<double>(batch);

    LossResult out;
    out.ce_component = (1.0 - alpha) * ce.loss;
    out.kl_component = alpha * scale * kl;
    out.loss = out.ce_component + out.kl_component;
    out.grad = Tensor(student_logits.shape());
    const double kl_coeff = alpha * scale / (cfg.tau * static_cast<double>(batch));
    for (std::size_t i = 0; i < batch * classes; ++i) {
        out.grad[i] = (1.0 - alpha) * ce.grad[i] +
                      kl_coeff * (student_probs[i] - teacher_probs[i]);
    }
    return out;
}

}  // namespace

LossResult cross_entropy(const Tensor& student_logits, const LabelBatch& labels) {
    check_logits_labels(student_logits, labels, "cross_entropy");

    const std::size_t batch = student_logits.rows();
    const std::size_t classes = student_logits.cols();
    const Temperature one(1.0);
    const Tensor probs = softmax_tau(student_logits, one);
    const Tensor logp = log_softmax_tau(student_logits, one);

    double loss_sum = 0.0;
    LossResult out;
    out.grad = Tensor(student_logits.shape());
    const double inv_batch = 1.0 / static_cast<double>(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t y = labels[i];
        loss_sum -= logp[i * classes + y];
        for (std::size_t k = 0; k < classes; ++k) {
            const double target = (k == y) ? 1.0 : 0.0;
            out.grad[i * classes + k] = (probs[i * classes + k] - target) * inv_batch;
        }
    }
    out.loss = loss_sum * inv_batch;
    out.ce_component = out.loss;
    return out;
}

double kl_divergence(const Tensor& teacher_probs, const Tensor& student_probs) {
    if (!teacher_probs.same_shape(student_probs)) {
        throw std::invalid_argument("kl_divergence: shape mismatch");
    }
    const std::size_t rows = teacher_probs.rows();
    const std::size_t cols = teacher_probs.cols();

    for (const Tensor* t : {&teacher_probs, &student_probs}) {
        const double* v = t->data();
        for (std::size_t r = 0; r < rows; ++r, v += cols) {
            double sum = 0.0;
            for (std::size_t k = 0; k < cols; ++k) {
                if (!(v[k] >= 0.0)) {
                    throw std::invalid_argument("kl_divergence: negative probability in row " +
                                                std::to_string(r));
                }
                sum += v[k];
            }
            if (std::abs(sum - 1.0) > 1e-9) {
                throw std::invalid_argument("kl_divergence: row " + std::to_string(r) +
                                            " sums to " + std::to_string(sum) +
                                            ", not a probability vector");
            }
        }
    }

    double total = 0.0;
    for (std::size_t i = 0; i < rows * cols; ++i) {
        const double pt = teacher_probs[i];
        if (pt > 0.0) {
            total += pt * (std::log(pt) - std::log(student_probs[i]));
        }
    }
    return total / static_cast<double>(rows);
}

LossResult kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                   const LabelBatch& labels, const DistillConfig& cfg) {
    return weighted_kd(student_logits, teacher_logits, labels, cfg, "kd_loss");
}

std::pair<Tensor, double> rectify(const Tensor& teacher_logits, const LabelBatch& labels) {
    check_logits_labels(teacher_logits, labels, "rectify");
    Tensor out = teacher_logits;
    const std::size_t swapped = rectify_in_place(out, labels);
    return {std::move(out),
            static_cast<double>(swapped) / static_cast<double>(labels.size())};
}

LossResult drkd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                     const LabelBatch& labels, const DistillConfig& cfg) {
    check_logits_labels(teacher_logits, labels, "drkd_loss");
    Tensor rectified = teacher_logits;
    const std::size_t swapped = rectify_in_place(rectified, labels);
    LossResult out = weighted_kd(student_logits, rectified, labels, cfg, "drkd_loss");
    if (cfg.alpha == 0.0) {
        return out;  // degenerates to plain cross-entropy
    }
    out.rectified_count = swapped;
    out.rectified_fraction =
        static_cast<double>(swapped) / static_cast<double>(labels.size());
    return out;
}

LossResult lsr_loss(const Tensor& student_logits, const LabelBatch& labels,
                    const DistillConfig& cfg) {
    check_logits_labels(student_logits, labels, "lsr_loss");
    cfg.validate();

    if (cfg.lsr_epsilon == 0.0) {
        return cross_entropy(student_logits, labels);
    }

    const std::size_t batch = student_logits.rows();
    const std::size_t classes = student_logits.cols();
    const double eps = cfg.lsr_epsilon;
    const double uniform = eps / static_cast<double>(classes);
    const Temperature one(1.0);
    const Tensor probs = softmax_tau(student_logits, one);
    const Tensor logp = log_softmax_tau(student_logits, one);

    double loss_sum = 0.0;
    LossResult out;
    out.grad = Tensor(student_logits.shape());
    const double inv_batch = 1.0 / static_cast<double>(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t y = labels[i];
        for (std::size_t k = 0; k < classes; ++k) {
            const double target = uniform + ((k == y) ? 1.0 - eps : 0.0);
            loss_sum -= target * logp[i * classes + k];
            out.grad[i * classes + k] = (probs[i * classes + k] - target) * inv_batch;
        }
    }
    out.loss = loss_sum * inv_batch;
    out.ce_component = out.loss;
    return out;
}

}  // namespace drkd
