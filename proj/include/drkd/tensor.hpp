#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace drkd {

// Dense row-major tensor of 64-bit reals. The data length always equals
// the product of the shape dimensions; public operations keep every
// element finite unless their contract says otherwise.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);  // zero-filled
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    // 1 x n convenience row, handy in tests and loss call sites
    static Tensor row(std::vector<double> values);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    // matrix accessors; valid for rank-1 (a single row) and rank-2 tensors
    std::size_t rows() const;
    std::size_t cols() const;
    double& at(std::size_t r, std::size_t c);
    double at(std::size_t r, std::size_t c) const;

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    const std::vector<double>& values() const { return data_; }

    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// Softmax temperature; strictly positive and finite.
class Temperature {
public:
    explicit Temperature(double tau);
    double value() const { return tau_; }

private:
    double tau_;
};

// Ground-truth class indices for one minibatch.
class LabelBatch {
public:
    LabelBatch(std::vector<std::size_t> class_indices, std::size_t class_count);

    std::size_t size() const { return indices_.size(); }
    std::size_t class_count() const { return class_count_; }
    std::size_t operator[](std::size_t i) const { return indices_[i]; }
    const std::vector<std::size_t>& indices() const { return indices_; }

    Tensor one_hot() const;  // batch x class_count, exactly one 1 per row

    friend bool operator==(const LabelBatch&, const LabelBatch&) = default;

private:
    std::vector<std::size_t> indices_;
    std::size_t class_count_ = 0;
};

// Temperature-scaled softmax over each row: exp(z_k/tau) / sum_m exp(z_m/tau),
// evaluated with per-row max subtraction so large logits stay finite.
// Requires at least 2 columns and finite entries.
Tensor softmax_tau(const Tensor& logits, Temperature tau);

// Elementwise log of softmax_tau, computed on the stable path (never
// evaluates log(0)).
Tensor log_softmax_tau(const Tensor& logits, Temperature tau);

// Row-wise index of the maximum value; ties break to the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor& t);

// Central-difference gradient estimate of a scalar function of a tensor;
// the oracle every analytic gradient in this library is checked against.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                        const Tensor& x, double eps = 1e-5);

}  // namespace drkd
