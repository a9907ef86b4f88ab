#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "drkd/tensor.hpp"

namespace drkd {

enum class ModelKind { mlp, tiny_conv };

std::string_view to_string(ModelKind k);
ModelKind model_kind_from_string(std::string_view name);  // config_error on unknown

// Architecture description.
//   mlp:       dense ReLU stack, layer_sizes = input, hidden..., classes
//   tiny_conv: conv3x3(c1)-ReLU-maxpool2, conv3x3(c2)-ReLU-maxpool2,
//              flatten, dense(classes); convolutions use padding 1.
struct ModelSpec {
    ModelKind kind = ModelKind::mlp;
    std::vector<std::size_t> layer_sizes;  // mlp only
    std::size_t conv1_channels = 8;        // tiny_conv only
    std::size_t conv2_channels = 16;
    std::vector<std::size_t> input_shape;  // {features} or {c, h, w}
    std::size_t class_count = 0;
    std::uint64_t init_seed = 0;

    std::size_t input_size() const;  // product of input_shape
    void validate() const;           // throws config_error

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Named parameter tensors in fixed layer order. The order is the layout
// order returned by parameter_layout() and is part of the checkpoint and
// optimizer contracts.
class Parameters {
public:
    void add(std::string name, Tensor value);
    std::size_t count() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    Tensor& at(std::string_view name);
    const Tensor& at(std::string_view name) const;

    std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

    bool all_finite() const;
    bool same_layout(const Parameters& other) const;  // names and shapes agree

    static Parameters zeros_like(const Parameters& other);

    friend bool operator==(const Parameters&, const Parameters&) = default;

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

// Ordered (name, shape) list for a spec; init_params and the checkpoint
// loader both derive their layout from this.
std::vector<std::pair<std::string, std::vector<std::size_t>>>
parameter_layout(const ModelSpec& spec);

// He initialization (zero-mean normals with variance 2/fan_in) for all
// weights, zero biases. Fully determined by the seed.
Parameters init_params(const ModelSpec& spec, std::uint64_t seed);

// Intermediates recorded by forward for use in backward.
struct ForwardCache {
    Tensor input;
    std::vector<Tensor> pre_act;                      // pre-activation per layer
    std::vector<Tensor> pooled;                       // tiny_conv pool outputs
    std::vector<std::vector<std::size_t>> pool_src;   // winner index per pooled cell
};

// Logits for a batch given as rows of flattened inputs (n x input_size).
// Pass a cache pointer when backward will be called.
Tensor forward(const ModelSpec& spec, const Parameters& params,
               const Tensor& batch, ForwardCache* cache = nullptr);

// Analytic gradients w.r.t. every parameter for the scalar loss whose
// logit gradient is supplied. The cache must come from a forward on the
// same spec/params with the same batch.
Parameters backward(const ModelSpec& spec, const Parameters& params,
                    const ForwardCache& cache, const Tensor& grad_logits);

}  // namespace drkd
