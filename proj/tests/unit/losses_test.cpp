#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"

#include "drkd/error.hpp"
#include "drkd/losses.hpp"
#include "drkd/rng.hpp"
#include "drkd/tensor.hpp"
#include "test_util.hpp"

using drkd::DistillConfig;
using drkd::Framework;
using drkd::LabelBatch;
using drkd::LossResult;
using drkd::Rng;
using drkd::Temperature;
using drkd::Tensor;

namespace {

Tensor random_logits(Rng& rng, std::size_t rows, std::size_t cols, double scale = 2.0) {
    Tensor t({rows, cols});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    return t;
}

LabelBatch random_labels(Rng& rng, std::size_t rows, std::size_t classes) {
    std::vector<std::size_t> idx(rows);
    for (auto& v : idx) v = rng.below(classes);
    return LabelBatch(std::move(idx), classes);
}

// Teacher logits whose argmax agrees with every label.
Tensor correct_teacher(Rng& rng, const LabelBatch& labels) {
    Tensor t = random_logits(rng, labels.size(), labels.class_count());
    for (std::size_t r = 0; r < labels.size(); ++r) {
        double row_max = t.at(r, 0);
        for (std::size_t k = 1; k < labels.class_count(); ++k)
            row_max = std::max(row_max, t.at(r, k));
        t.at(r, labels[r]) = row_max + 1.0;
    }
    return t;
}

DistillConfig kd_config(double tau, double alpha, bool scale = false) {
    DistillConfig cfg;
    cfg.framework = Framework::normal_kd;
    cfg.tau = tau;
    cfg.alpha = alpha;
    cfg.kd_grad_scale = scale;
    return cfg;
}

}  // namespace

TEST_CASE("cross entropy of a confident correct prediction is near zero") {
    LossResult r = drkd::cross_entropy(Tensor::row({10.0, -10.0}), LabelBatch({0}, 2));
    CHECK(r.loss >= 0.0);
    CHECK(r.loss < 1e-8);
}

TEST_CASE("cross entropy of a uniform prediction is log 2") {
    LossResult r = drkd::cross_entropy(Tensor::row({0.0, 0.0}), LabelBatch({0}, 2));
    CHECK(std::fabs(r.loss - std::log(2.0)) < 1e-12);
    CHECK(r.ce_component == r.loss);
    CHECK(r.kl_component == 0.0);
}

TEST_CASE("cross entropy gradient matches finite differences") {
    Rng rng(11);
    Tensor z = random_logits(rng, 4, 5);
    LabelBatch labels = random_labels(rng, 4, 5);
    LossResult r = drkd::cross_entropy(z, labels);
    Tensor fd = drkd::finite_diff_grad(
        [&](const Tensor& x) { return drkd::cross_entropy(x, labels).loss; }, z);
    std::string why;
    CHECK_MESSAGE(testutil::grads_close(r.grad, fd, 0.0, 1e-6, &why), why);
}

TEST_CASE("cross entropy rejects mismatched shapes") {
    CHECK_THROWS_AS(drkd::cross_entropy(Tensor::row({0.0, 0.0}), LabelBatch({0, 1}, 2)),
                    std::invalid_argument);
    CHECK_THROWS_AS(drkd::cross_entropy(Tensor({1, 3}, {0.0, 0.0, 0.0}), LabelBatch({0}, 2)),
                    std::invalid_argument);
}

TEST_CASE("KL divergence of a distribution with itself is zero") {
    Rng rng(5);
    for (int trial = 0; trial < 3; ++trial) {
        Tensor p = drkd::softmax_tau(random_logits(rng, 3, 6), Temperature(1.0));
        CHECK(drkd::kl_divergence(p, p) == 0.0);
    }
}

TEST_CASE("KL divergence matches direct evaluation on a point mass") {
    Tensor teacher = Tensor::row({1.0, 0.0});
    Tensor student = Tensor::row({0.5, 0.5});
    CHECK(std::fabs(drkd::kl_divergence(teacher, student) - std::log(2.0)) < 1e-12);
}

TEST_CASE("KL divergence is nonnegative on random stochastic pairs") {
    Rng rng(17);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor p = drkd::softmax_tau(random_logits(rng, 4, 7), Temperature(1.0));
        Tensor q = drkd::softmax_tau(random_logits(rng, 4, 7), Temperature(1.0));
        CHECK(drkd::kl_divergence(p, q) >= 0.0);
    }
}

TEST_CASE("KL divergence rejects non-stochastic rows") {
    Tensor bad = Tensor::row({0.7, 0.7});
    Tensor ok = Tensor::row({0.5, 0.5});
    CHECK_THROWS_AS(drkd::kl_divergence(bad, ok), std::invalid_argument);
    CHECK_THROWS_AS(drkd::kl_divergence(ok, bad), std::invalid_argument);
}

TEST_CASE("kd loss with alpha 0 is exactly cross entropy") {
    Rng rng(23);
    Tensor z = random_logits(rng, 4, 5);
    Tensor t = random_logits(rng, 4, 5);
    LabelBatch labels = random_labels(rng, 4, 5);
    LossResult kd = drkd::kd_loss(z, t, labels, kd_config(6.0, 0.0));
    LossResult ce = drkd::cross_entropy(z, labels);
    CHECK(kd.loss == ce.loss);
    CHECK(kd.grad == ce.grad);
    CHECK(kd.ce_component == ce.ce_component);
    CHECK(kd.kl_component == 0.0);
}

TEST_CASE("kd loss with alpha 1 and matching logits is zero with zero gradient") {
    Rng rng(29);
    Tensor z = random_logits(rng, 3, 4);
    LabelBatch labels = random_labels(rng, 3, 4);
    LossResult r = drkd::kd_loss(z, z, labels, kd_config(2.0, 1.0));
    CHECK(r.loss == 0.0);
    for (std::size_t i = 0; i < r.grad.size(); ++i) CHECK(r.grad[i] == 0.0);
}

TEST_CASE("kd loss gradient matches finite differences at high temperature and alpha") {
    Rng rng(31);
    Tensor z = random_logits(rng, 4, 5);
    Tensor t = random_logits(rng, 4, 5);
    LabelBatch labels = random_labels(rng, 4, 5);
    for (bool scale : {false, true}) {
        DistillConfig cfg = kd_config(20.0, 0.95, scale);
        LossResult r = drkd::kd_loss(z, t, labels, cfg);
        Tensor fd = drkd::finite_diff_grad(
            [&](const Tensor& x) { return drkd::kd_loss(x, t, labels, cfg).loss; }, z);
        std::string why;
        CHECK_MESSAGE(testutil::grads_close(r.grad, fd, 0.0, 1e-6, &why),
                      "kd_grad_scale=" << scale << ": " << why);
    }
}

TEST_CASE("kd loss splits into its weighted components") {
    Rng rng(37);
    Tensor z = random_logits(rng, 4, 5);
    Tensor t = random_logits(rng, 4, 5);
    LabelBatch labels = random_labels(rng, 4, 5);
    DistillConfig cfg = kd_config(6.0, 0.4);
    LossResult r = drkd::kd_loss(z, t, labels, cfg);
    CHECK(r.loss == doctest::Approx(r.ce_component + r.kl_component).epsilon(1e-15));
    // components carry the (1-alpha) and alpha weights already
    LossResult ce = drkd::cross_entropy(z, labels);
    CHECK(r.ce_component == doctest::Approx(0.6 * ce.loss).epsilon(1e-12));
    const double kl = drkd::kl_divergence(drkd::softmax_tau(t, Temperature(6.0)),
                                          drkd::softmax_tau(z, Temperature(6.0)));
    CHECK(r.kl_component == doctest::Approx(0.4 * kl).epsilon(1e-12));
}

TEST_CASE("kd_grad_scale multiplies the KL term of the loss by tau squared") {
    Rng rng(41);
    Tensor z = random_logits(rng, 3, 5);
    Tensor t = random_logits(rng, 3, 5);
    LabelBatch labels = random_labels(rng, 3, 5);
    LossResult plain = drkd::kd_loss(z, t, labels, kd_config(6.0, 0.4, false));
    LossResult scaled = drkd::kd_loss(z, t, labels, kd_config(6.0, 0.4, true));
    CHECK(scaled.ce_component == plain.ce_component);
    CHECK(scaled.kl_component == doctest::Approx(36.0 * plain.kl_component).epsilon(1e-12));
}

TEST_CASE("rectify swaps the true-class and argmax logits when the teacher is wrong") {
    auto [out, fraction] = drkd::rectify(Tensor::row({1.0, 3.0, 2.0}), LabelBatch({0}, 3));
    CHECK(out == Tensor::row({3.0, 1.0, 2.0}));
    CHECK(fraction == 1.0);
}

TEST_CASE("rectify leaves correct teacher rows untouched") {
    Tensor t = Tensor::row({3.0, 1.0, 2.0});
    auto [out, fraction] = drkd::rectify(t, LabelBatch({0}, 3));
    CHECK(out == t);
    CHECK(fraction == 0.0);
}

TEST_CASE("rectified fraction counts the swapped rows") {
    // one wrong row out of four
    Tensor t({4, 3}, {5.0, 0.0, 0.0,
                      0.0, 5.0, 0.0,
                      0.0, 0.0, 5.0,
                      0.0, 5.0, 0.0});
    LabelBatch labels({0, 1, 2, 0}, 3);
    auto [out, fraction] = drkd::rectify(t, labels);
    CHECK(fraction == 0.25);
    CHECK(out.at(3, 0) == 5.0);
    CHECK(out.at(3, 1) == 0.0);
}

TEST_CASE("rectified rows always put the true class on top") {
    Rng rng(43);
    Tensor t = random_logits(rng, 12, 6);
    LabelBatch labels = random_labels(rng, 12, 6);
    auto [out, fraction] = drkd::rectify(t, labels);
    CHECK(drkd::argmax_rows(out) == labels.indices());
    CHECK(fraction >= 0.0);
    CHECK(fraction <= 1.0);
}

TEST_CASE("rectify permutes each row and changes at most two positions") {
    Rng rng(47);
    Tensor t = random_logits(rng, 8, 5);
    LabelBatch labels = random_labels(rng, 8, 5);
    Tensor original = t;
    auto [out, fraction] = drkd::rectify(t, labels);
    CHECK(t == original);  // input untouched
    for (std::size_t r = 0; r < 8; ++r) {
        std::vector<double> a, b;
        std::size_t moved = 0;
        for (std::size_t k = 0; k < 5; ++k) {
            a.push_back(t.at(r, k));
            b.push_back(out.at(r, k));
            if (t.at(r, k) != out.at(r, k)) ++moved;
        }
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
        CHECK(moved <= 2);
    }
}

TEST_CASE("rectify is idempotent") {
    Rng rng(53);
    Tensor t = random_logits(rng, 10, 4);
    LabelBatch labels = random_labels(rng, 10, 4);
    auto [once, f1] = drkd::rectify(t, labels);
    auto [twice, f2] = drkd::rectify(once, labels);
    CHECK(once == twice);
    CHECK(f2 == 0.0);
}

TEST_CASE("drkd loss equals kd loss when the teacher is already correct") {
    Rng rng(59);
    Tensor z = random_logits(rng, 6, 5);
    LabelBatch labels = random_labels(rng, 6, 5);
    Tensor t = correct_teacher(rng, labels);
    DistillConfig cfg = kd_config(6.0, 0.4);
    cfg.framework = Framework::drkd;
    LossResult dr = drkd::drkd_loss(z, t, labels, cfg);
    LossResult kd = drkd::kd_loss(z, t, labels, cfg);
    CHECK(dr.loss == kd.loss);
    CHECK(dr.grad == kd.grad);
    CHECK(dr.rectified_count == 0);
    CHECK(dr.rectified_fraction == 0.0);
}

TEST_CASE("drkd loss with alpha 0 is exactly cross entropy") {
    Rng rng(61);
    Tensor z = random_logits(rng, 4, 5);
    Tensor t = random_logits(rng, 4, 5);
    LabelBatch labels = random_labels(rng, 4, 5);
    LossResult dr = drkd::drkd_loss(z, t, labels, kd_config(6.0, 0.0));
    LossResult ce = drkd::cross_entropy(z, labels);
    CHECK(dr.loss == ce.loss);
    CHECK(dr.grad == ce.grad);
}

TEST_CASE("drkd gradient matches finite differences with a half-wrong teacher") {
    Rng rng(67);
    const std::size_t rows = 6, classes = 5;
    LabelBatch labels = random_labels(rng, rows, classes);
    Tensor t = correct_teacher(rng, labels);
    // break the teacher on every even row
    for (std::size_t r = 0; r < rows; r += 2) {
        const std::size_t wrong = (labels[r] + 1) % classes;
        t.at(r, wrong) = t.at(r, labels[r]) + 2.0;
    }
    Tensor z = random_logits(rng, rows, classes);
    DistillConfig cfg = kd_config(6.0, 0.4);
    LossResult r = drkd::drkd_loss(z, t, labels, cfg);
    CHECK(r.rectified_count == rows / 2);
    CHECK(r.rectified_fraction == doctest::Approx(0.5));
    Tensor fd = drkd::finite_diff_grad(
        [&](const Tensor& x) { return drkd::drkd_loss(x, t, labels, cfg).loss; }, z);
    std::string why;
    CHECK_MESSAGE(testutil::grads_close(r.grad, fd, 0.0, 1e-6, &why), why);
}

TEST_CASE("lsr loss with epsilon 0 is exactly cross entropy") {
    Rng rng(71);
    Tensor z = random_logits(rng, 4, 5);
    LabelBatch labels = random_labels(rng, 4, 5);
    DistillConfig cfg;
    cfg.framework = Framework::lsr;
    cfg.lsr_epsilon = 0.0;
    LossResult lsr = drkd::lsr_loss(z, labels, cfg);
    LossResult ce = drkd::cross_entropy(z, labels);
    CHECK(lsr.loss == ce.loss);
    CHECK(lsr.grad == ce.grad);
}

TEST_CASE("lsr loss of a uniform prediction is log 2 regardless of the target") {
    DistillConfig cfg;
    cfg.framework = Framework::lsr;
    cfg.lsr_epsilon = 0.1;
    for (std::size_t target : {std::size_t{0}, std::size_t{1}}) {
        LossResult r = drkd::lsr_loss(Tensor::row({0.0, 0.0}), LabelBatch({target}, 2), cfg);
        CHECK(std::fabs(r.loss - std::log(2.0)) < 1e-12);
    }
}

TEST_CASE("lsr gradient matches finite differences") {
    Rng rng(73);
    Tensor z = random_logits(rng, 4, 5);
    LabelBatch labels = random_labels(rng, 4, 5);
    DistillConfig cfg;
    cfg.framework = Framework::lsr;
    cfg.lsr_epsilon = 0.1;
    LossResult r = drkd::lsr_loss(z, labels, cfg);
    Tensor fd = drkd::finite_diff_grad(
        [&](const Tensor& x) { return drkd::lsr_loss(x, labels, cfg).loss; }, z);
    std::string why;
    CHECK_MESSAGE(testutil::grads_close(r.grad, fd, 0.0, 1e-6, &why), why);
}

TEST_CASE("all loss gradients pass the oracle across the hyperparameter grid") {
    Rng rng(79);
    for (double tau : {1.0, 6.0, 20.0}) {
        for (double alpha : {0.1, 0.4, 0.95}) {
            Tensor z = random_logits(rng, 5, 6);
            Tensor t = random_logits(rng, 5, 6);
            LabelBatch labels = random_labels(rng, 5, 6);
            DistillConfig cfg = kd_config(tau, alpha);

            LossResult kd = drkd::kd_loss(z, t, labels, cfg);
            Tensor kd_fd = drkd::finite_diff_grad(
                [&](const Tensor& x) { return drkd::kd_loss(x, t, labels, cfg).loss; }, z);
            std::string why;
            CHECK_MESSAGE(testutil::grads_close(kd.grad, kd_fd, 1e-5, 1e-7, &why),
                          "kd tau=" << tau << " alpha=" << alpha << ": " << why);

            LossResult dr = drkd::drkd_loss(z, t, labels, cfg);
            Tensor dr_fd = drkd::finite_diff_grad(
                [&](const Tensor& x) { return drkd::drkd_loss(x, t, labels, cfg).loss; }, z);
            CHECK_MESSAGE(testutil::grads_close(dr.grad, dr_fd, 1e-5, 1e-7, &why),
                          "drkd tau=" << tau << " alpha=" << alpha << ": " << why);
        }
    }
}

TEST_CASE("loss values are finite and nonnegative on random batches") {
    Rng rng(83);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor z = random_logits(rng, 4, 6, 5.0);
        Tensor t = random_logits(rng, 4, 6, 5.0);
        LabelBatch labels = random_labels(rng, 4, 6);
        CHECK(drkd::cross_entropy(z, labels).loss >= 0.0);
        DistillConfig cfg = kd_config(6.0, 0.4);
        LossResult kd = drkd::kd_loss(z, t, labels, cfg);
        CHECK(kd.loss >= 0.0);
        CHECK(std::isfinite(kd.loss));
        CHECK(kd.grad.all_finite());
    }
}

TEST_CASE("distill config validation names the offending field") {
    DistillConfig cfg;
    cfg.alpha = 1.5;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("alpha"), drkd::config_error);
    cfg.alpha = 0.5;
    cfg.tau = 0.0;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("tau"), drkd::config_error);
    cfg.tau = 1.0;
    cfg.lsr_epsilon = 1.0;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("lsr_epsilon"),
                         drkd::config_error);
}

TEST_CASE("framework names round-trip") {
    using drkd::framework_from_string;
    for (Framework f : {Framework::baseline, Framework::normal_kd, Framework::tfkd_self,
                        Framework::drkd, Framework::lsr}) {
        CHECK(framework_from_string(drkd::to_string(f)) == f);
    }
    CHECK_THROWS_AS(framework_from_string("bogus"), drkd::config_error);
    CHECK(drkd::framework_needs_teacher(Framework::normal_kd));
    CHECK(drkd::framework_needs_teacher(Framework::tfkd_self));
    CHECK(drkd::framework_needs_teacher(Framework::drkd));
    CHECK_FALSE(drkd::framework_needs_teacher(Framework::baseline));
    CHECK_FALSE(drkd::framework_needs_teacher(Framework::lsr));
}
