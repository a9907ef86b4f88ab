#include "drkd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace drkd {

namespace {

std::size_t checked_product(const std::vector<std::size_t>& shape) {
    if (shape.empty()) {
        throw std::invalid_argument("Tensor: shape must not be empty");
    }
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0) {
            throw std::invalid_argument("Tensor: shape dimensions must be positive");
        }
        n *= d;
    }
    return n;
}

// Interpret a rank-1 tensor as a single row, rank-2 as rows x cols.
void matrix_dims(const Tensor& t, std::size_t& rows, std::size_t& cols) {
    if (t.rank() == 1) {
        rows = 1;
        cols = t.shape()[0];
    } else if (t.rank() == 2) {
        rows = t.shape()[0];
        cols = t.shape()[1];
    } else {
        throw std::invalid_argument("expected a rank-1 or rank-2 tensor, got rank " +
                                    std::to_string(t.rank()));
    }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(checked_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_product(shape_) != data_.size()) {
        throw std::invalid_argument("Tensor: data length does not match shape product");
    }
}

Tensor Tensor::row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
}

std::size_t Tensor::rows() const {
    std::size_t r, c;
    matrix_dims(*this, r, c);
    return r;
}

std::size_t Tensor::cols() const {
    std::size_t r, c;
    matrix_dims(*this, r, c);
    return c;
}

double& Tensor::at(std::size_t r, std::size_t c) {
    return data_[r * cols() + c];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    return data_[r * cols() + c];
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
}

Temperature::Temperature(double tau) : tau_(tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) {
        throw std::invalid_argument("Temperature: tau must be positive and finite, got " +
                                    std::to_string(tau));
    }
}

LabelBatch::LabelBatch(std::vector<std::size_t> class_indices, std::size_t class_count)
    : indices_(std::move(class_indices)), class_count_(class_count) {
    if (class_count_ < 2) {
        throw std::invalid_argument("LabelBatch: class_count must be at least 2");
    }
    for (std::size_t idx : indices_) {
        if (idx >= class_count_) {
            throw std::invalid_argument("LabelBatch: label " + std::to_string(idx) +
                                        " out of range for " + std::to_string(class_count_) +
                                        " classes");
        }
    }
}

Tensor LabelBatch::one_hot() const {
    Tensor out({indices_.size(), class_count_});
    for (std::size_t i = 0; i < indices_.size(); ++i) {
        out[i * class_count_ + indices_[i]] = 1.0;
    }
    return out;
}

namespace {

void check_softmax_input(const Tensor& z, std::size_t cols) {
    if (cols < 2) {
        throw std::invalid_argument("softmax_tau: need at least 2 classes, got " +
                                    std::to_string(cols));
    }
    if (!z.all_finite()) {
        throw std::invalid_argument("softmax_tau: input contains non-finite entries");
    }
}

}  // namespace

Tensor softmax_tau(const Tensor& logits, Temperature tau) {
    std::size_t rows, cols;
    matrix_dims(logits, rows, cols);
    check_softmax_input(logits, cols);

    const double inv_tau = 1.0 / tau.value();
    Tensor out(logits.shape());
    const double* in = logits.data();
    double* p = out.data();
    for (std::size_t r = 0; r < rows; ++r, in += cols, p += cols) {
        const double m = *std::max_element(in, in + cols);
        double sum = 0.0;
        for (std::size_t k = 0; k < cols; ++k) {
            p[k] = std::exp((in[k] - m) * inv_tau);
            sum += p[k];
        }
        for (std::size_t k = 0; k < cols; ++k) {
            p[k] /= sum;
        }
    }
    return out;
}

Tensor log_softmax_tau(const Tensor& logits, Temperature tau) {
    std::size_t rows, cols;
    matrix_dims(logits, rows, cols);
    check_softmax_input(logits, cols);

    const double inv_tau = 1.0 / tau.value();
    Tensor out(logits.shape());
    const double* in = logits.data();
    double* lp = out.data();
    for (std::size_t r = 0; r < rows; ++r, in += cols, lp += cols) {
        const double m = *std::max_element(in, in + cols);
        double sum = 0.0;
        for (std::size_t k = 0; k < cols; ++k) {
            sum += std::exp((in[k] - m) * inv_tau);
        }
        // sum >= 1 because the max term contributes exp(0)
        const double log_sum = std::log(sum);
        for (std::size_t k = 0; k < cols; ++k) {
            lp[k] = (in[k] - m) * inv_tau - log_sum;
        }
    }
    return out;
}

std::vector<std::size_t> argmax_rows(const Tensor& t) {
    if (t.size() == 0) {
        throw std::invalid_argument("argmax_rows: empty tensor");
    }
    std::size_t rows, cols;
    matrix_dims(t, rows, cols);

    std::vector<std::size_t> out(rows);
    const double* v = t.data();
    for (std::size_t r = 0; r < rows; ++r, v += cols) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < cols; ++k) {
            if (v[k] > v[best]) {
                best = k;  // strict: ties keep the lowest index
            }
        }
        out[r] = best;
    }
    return out;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                        const Tensor& x, double eps) {
    if (!(eps > 0.0)) {
        throw std::invalid_argument("finite_diff_grad: eps must be positive");
    }
    Tensor grad(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double plus = f(probe);
        probe[i] = orig - eps;
        const double minus = f(probe);
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * eps);
    }
    return grad;
}

}  // namespace drkd
