#pragma once

#include <cstddef>
#include <string_view>
#include <utility>

#include "drkd/tensor.hpp"

namespace drkd {

// The training frameworks the experiment harness can compare.
// normal_kd and tfkd_self share the same loss; they differ only in where
// the teacher checkpoint comes from.
enum class Framework { baseline, normal_kd, tfkd_self, drkd, lsr };

std::string_view to_string(Framework f);
Framework framework_from_string(std::string_view name);  // config_error on unknown
bool framework_needs_teacher(Framework f);

// Distillation hyperparameters: temperature tau, mixing weight alpha,
// label-smoothing epsilon, and the tau^2 scaling convention for the KL
// term (off by default; the weighted losses are used exactly as written).
struct DistillConfig {
    Framework framework = Framework::baseline;
    double tau = 1.0;
    double alpha = 0.0;
    double lsr_epsilon = 0.1;
    bool kd_grad_scale = false;  // multiply the KL term (loss and gradient) by tau^2

    void validate() const;  // throws config_error naming the offending field

    friend bool operator==(const DistillConfig&, const DistillConfig&) = default;
};

// Scalar loss plus its analytic gradient with respect to the student
// logits. ce_component and kl_component are the weighted contributions,
// so loss == ce_component + kl_component. rectified_count is the number
// of teacher rows whose logits were swapped (zero for non-DR losses).
struct LossResult {
    double loss = 0.0;
    Tensor grad;
    double ce_component = 0.0;
    double kl_component = 0.0;
    std::size_t rectified_count = 0;
    double rectified_fraction = 0.0;
};

// Mean cross-entropy of softmax(student_logits) against the labels.
// Gradient: (softmax(student) - one_hot) / batch.
LossResult cross_entropy(const Tensor& student_logits, const LabelBatch& labels);

// Mean KL(teacher || student) over the batch. Both arguments are
// row-stochastic probability tensors; rows must sum to 1 within 1e-9.
// Terms where the teacher probability is 0 contribute 0.
double kl_divergence(const Tensor& teacher_probs, const Tensor& student_probs);

// Weighted distillation loss:
//   (1 - alpha) * CE(softmax(student), labels)
//     + alpha * KL(softmax_tau(teacher), softmax_tau(student))
// The teacher is a constant; no gradient flows to it. With alpha == 0 the
// result is exactly cross_entropy(student_logits, labels).
LossResult kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                   const LabelBatch& labels, const DistillConfig& cfg);

// Dynamic rectification: per sample, if the teacher's argmax l differs
// from the true class j, swap the logits at positions j and l so the true
// class carries the row maximum. Returns the rectified copy and the
// fraction of rows that were swapped. The input is not modified.
std::pair<Tensor, double> rectify(const Tensor& teacher_logits, const LabelBatch& labels);

// kd_loss applied to the rectified teacher; rectified_count/fraction in
// the result report the swap rate for this batch.
LossResult drkd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                     const LabelBatch& labels, const DistillConfig& cfg);

// Cross-entropy against smoothed targets (1 - eps) * one_hot + eps / classes.
// With eps == 0 the result is exactly cross_entropy(student_logits, labels).
LossResult lsr_loss(const Tensor& student_logits, const LabelBatch& labels,
                    const DistillConfig& cfg);

}  // namespace drkd
