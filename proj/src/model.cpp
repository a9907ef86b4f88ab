#include "drkd/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "drkd/error.hpp"
#include "drkd/rng.hpp"

namespace drkd {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

[[noreturn]] void spec_fail(const std::string& what) {
    throw config_error("model: " + what);
}

}  // namespace

std::string_view to_string(ModelKind k) {
    switch (k) {
        case ModelKind::mlp: return "mlp";
        case ModelKind::tiny_conv: return "tiny_conv";
    }
    throw std::logic_error("unreachable model kind");
}

ModelKind model_kind_from_string(std::string_view name) {
    if (name == "mlp") return ModelKind::mlp;
    if (name == "tiny_conv") return ModelKind::tiny_conv;
    throw config_error("model.kind: unknown kind \"" + std::string(name) +
                       "\" (expected mlp or tiny_conv)");
}

std::size_t ModelSpec::input_size() const { return shape_product(input_shape); }

void ModelSpec::validate() const {
    if (class_count < 2) spec_fail("class_count must be at least 2");
    if (input_shape.empty()) spec_fail("input_shape must not be empty");
    for (std::size_t d : input_shape)
        if (d == 0) spec_fail("input_shape dimensions must be positive");

    if (kind == ModelKind::mlp) {
        if (layer_sizes.size() < 3)
            spec_fail("mlp needs layer_sizes with at least one hidden layer");
        for (std::size_t s : layer_sizes)
            if (s == 0) spec_fail("layer_sizes entries must be positive");
        if (layer_sizes.front() != input_size())
            spec_fail("layer_sizes front must equal the flattened input size");
        if (layer_sizes.back() != class_count)
            spec_fail("layer_sizes back must equal class_count");
    } else {
        if (input_shape.size() != 3)
            spec_fail("tiny_conv needs input_shape {channels, height, width}");
        if (conv1_channels == 0 || conv2_channels == 0)
            spec_fail("conv channel counts must be positive");
        if (input_shape[1] < 4 || input_shape[2] < 4)
            spec_fail("tiny_conv needs height and width of at least 4");
    }
}

void Parameters::add(std::string name, Tensor value) {
    for (const auto& [existing, _] : entries_)
        if (existing == name)
            throw std::invalid_argument("duplicate parameter name: " + name);
    entries_.emplace_back(std::move(name), std::move(value));
}

Tensor& Parameters::at(std::string_view name) {
    for (auto& [n, t] : entries_)
        if (n == name) return t;
    throw std::invalid_argument("unknown parameter: " + std::string(name));
}

const Tensor& Parameters::at(std::string_view name) const {
    for (const auto& [n, t] : entries_)
        if (n == name) return t;
    throw std::invalid_argument("unknown parameter: " + std::string(name));
}

bool Parameters::all_finite() const {
    for (const auto& [_, t] : entries_)
        if (!t.all_finite()) return false;
    return true;
}

bool Parameters::same_layout(const Parameters& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].first != other.entries_[i].first) return false;
        if (entries_[i].second.shape() != other.entries_[i].second.shape()) return false;
    }
    return true;
}

Parameters Parameters::zeros_like(const Parameters& other) {
    Parameters out;
    for (const auto& [name, t] : other.entries_)
        out.add(name, Tensor(t.shape()));
    return out;
}

std::vector<std::pair<std::string, std::vector<std::size_t>>>
parameter_layout(const ModelSpec& spec) {
    spec.validate();
    std::vector<std::pair<std::string, std::vector<std::size_t>>> layout;
    if (spec.kind == ModelKind::mlp) {
        for (std::size_t i = 1; i < spec.layer_sizes.size(); ++i) {
            std::ostringstream name;
            name << "fc" << i;
            layout.emplace_back(name.str() + ".weight",
                                std::vector<std::size_t>{spec.layer_sizes[i],
                                                         spec.layer_sizes[i - 1]});
            layout.emplace_back(name.str() + ".bias",
                                std::vector<std::size_t>{spec.layer_sizes[i]});
        }
    } else {
        const std::size_t cin = spec.input_shape[0];
        const std::size_t h = spec.input_shape[1];
        const std::size_t w = spec.input_shape[2];
        const std::size_t flat = spec.conv2_channels * (h / 2 / 2) * (w / 2 / 2);
        layout.emplace_back("conv1.weight",
                            std::vector<std::size_t>{spec.conv1_channels, cin, 3, 3});
        layout.emplace_back("conv1.bias", std::vector<std::size_t>{spec.conv1_channels});
        layout.emplace_back("conv2.weight",
                            std::vector<std::size_t>{spec.conv2_channels,
                                                     spec.conv1_channels, 3, 3});
        layout.emplace_back("conv2.bias", std::vector<std::size_t>{spec.conv2_channels});
        layout.emplace_back("fc.weight",
                            std::vector<std::size_t>{spec.class_count, flat});
        layout.emplace_back("fc.bias", std::vector<std::size_t>{spec.class_count});
    }
    return layout;
}

Parameters init_params(const ModelSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    Parameters params;
    for (const auto& [name, shape] : parameter_layout(spec)) {
        Tensor t(shape);
        const bool is_weight = name.ends_with(".weight");
        if (is_weight) {
            // fan_in is everything but the leading output dimension.
            std::size_t fan_in = 1;
            for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
            const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
            double* v = t.data();
            for (std::size_t i = 0; i < t.size(); ++i) v[i] = rng.normal() * scale;
        }
        // Biases stay zero.
        params.add(name, std::move(t));
    }
    return params;
}

namespace {

void check_batch(const ModelSpec& spec, const Tensor& batch) {
    if (batch.rank() != 2)
        throw std::invalid_argument("forward expects a rank-2 batch");
    if (batch.rows() == 0)
        throw std::invalid_argument("forward expects a non-empty batch");
    if (batch.cols() != spec.input_size()) {
        std::ostringstream msg;
        msg << "batch has " << batch.cols() << " features but the model expects "
            << spec.input_size();
        throw std::invalid_argument(msg.str());
    }
    if (!batch.all_finite())
        throw std::invalid_argument("batch contains non-finite values");
}

// z = a * W^T + b, with a [n x in], W [out x in], b [out].
Tensor dense_forward(const Tensor& a, const Tensor& weight, const Tensor& bias) {
    const std::size_t n = a.rows();
    const std::size_t in = a.cols();
    const std::size_t out = weight.rows();
    Tensor z({n, out});
    for (std::size_t r = 0; r < n; ++r) {
        const double* arow = &a.data()[r * in];
        double* zrow = &z.data()[r * out];
        for (std::size_t o = 0; o < out; ++o) {
            const double* wrow = &weight.data()[o * in];
            double acc = bias.data()[o];
            for (std::size_t i = 0; i < in; ++i) acc += arow[i] * wrow[i];
            zrow[o] = acc;
        }
    }
    return z;
}

// Accumulates dW = g^T * a and db = column sums of g; returns g_prev = g * W
// unless input_grad is false.
Tensor dense_backward(const Tensor& a, const Tensor& weight, const Tensor& g,
                      Tensor& dweight, Tensor& dbias, bool input_grad) {
    const std::size_t n = a.rows();
    const std::size_t in = a.cols();
    const std::size_t out = weight.rows();
    for (std::size_t r = 0; r < n; ++r) {
        const double* arow = &a.data()[r * in];
        const double* grow = &g.data()[r * out];
        for (std::size_t o = 0; o < out; ++o) {
            const double gv = grow[o];
            dbias.data()[o] += gv;
            double* dwrow = &dweight.data()[o * in];
            for (std::size_t i = 0; i < in; ++i) dwrow[i] += gv * arow[i];
        }
    }
    if (!input_grad) return Tensor({1});
    Tensor gp({n, in});
    for (std::size_t r = 0; r < n; ++r) {
        const double* grow = &g.data()[r * out];
        double* gprow = &gp.data()[r * in];
        for (std::size_t o = 0; o < out; ++o) {
            const double gv = grow[o];
            const double* wrow = &weight.data()[o * in];
            for (std::size_t i = 0; i < in; ++i) gprow[i] += gv * wrow[i];
        }
    }
    return gp;
}

Tensor relu(const Tensor& z) {
    Tensor a = z;
    double* v = a.data();
    for (std::size_t i = 0; i < a.size(); ++i) v[i] = v[i] > 0.0 ? v[i] : 0.0;
    return a;
}

// 3x3 convolution with padding 1 over an [n, cin*h*w] batch viewed as
// [n, cin, h, w]; weight [cout, cin, 3, 3], bias [cout].
Tensor conv3x3_forward(const Tensor& in, std::size_t cin, std::size_t h, std::size_t w,
                       const Tensor& weight, const Tensor& bias) {
    const std::size_t n = in.rows();
    const std::size_t cout = weight.shape()[0];
    Tensor out({n, cout * h * w});
    for (std::size_t s = 0; s < n; ++s) {
        const double* img = &in.data()[s * cin * h * w];
        double* dst = &out.data()[s * cout * h * w];
        for (std::size_t co = 0; co < cout; ++co) {
            const double* wbase = &weight.data()[co * cin * 9];
            double* plane = dst + co * h * w;
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    double acc = bias.data()[co];
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const double* src = img + ci * h * w;
                        const double* ker = wbase + ci * 9;
                        for (std::size_t ky = 0; ky < 3; ++ky) {
                            const std::size_t iy = y + ky;
                            if (iy < 1 || iy > h) continue;  // zero padding
                            const double* srow = src + (iy - 1) * w;
                            const double* krow = ker + ky * 3;
                            for (std::size_t kx = 0; kx < 3; ++kx) {
                                const std::size_t ix = x + kx;
                                if (ix < 1 || ix > w) continue;
                                acc += srow[ix - 1] * krow[kx];
                            }
                        }
                    }
                    plane[y * w + x] = acc;
                }
            }
        }
    }
    return out;
}

void conv3x3_backward(const Tensor& in, std::size_t cin, std::size_t h, std::size_t w,
                      const Tensor& weight, const Tensor& gout,
                      Tensor& dweight, Tensor& dbias, Tensor* gin) {
    const std::size_t n = in.rows();
    const std::size_t cout = weight.shape()[0];
    for (std::size_t s = 0; s < n; ++s) {
        const double* img = &in.data()[s * cin * h * w];
        const double* gsrc = &gout.data()[s * cout * h * w];
        double* gimg = gin ? &gin->data()[s * cin * h * w] : nullptr;
        for (std::size_t co = 0; co < cout; ++co) {
            const double* gplane = gsrc + co * h * w;
            const double* wbase = &weight.data()[co * cin * 9];
            double* dwbase = &dweight.data()[co * cin * 9];
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    const double gv = gplane[y * w + x];
                    if (gv == 0.0) continue;
                    dbias.data()[co] += gv;
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const double* src = img + ci * h * w;
                        double* dker = dwbase + ci * 9;
                        const double* ker = wbase + ci * 9;
                        double* gsrc_plane = gimg ? gimg + ci * h * w : nullptr;
                        for (std::size_t ky = 0; ky < 3; ++ky) {
                            const std::size_t iy = y + ky;
                            if (iy < 1 || iy > h) continue;
                            for (std::size_t kx = 0; kx < 3; ++kx) {
                                const std::size_t ix = x + kx;
                                if (ix < 1 || ix > w) continue;
                                const std::size_t si = (iy - 1) * w + (ix - 1);
                                dker[ky * 3 + kx] += gv * src[si];
                                if (gsrc_plane) gsrc_plane[si] += gv * ker[ky * 3 + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

// 2x2 max pool with stride 2 over [n, c*h*w]; records the winning source
// index (within the sample's c*h*w block) per output cell. Ties go to the
// first cell in scan order.
Tensor maxpool2_forward(const Tensor& in, std::size_t c, std::size_t h, std::size_t w,
                        std::vector<std::size_t>& src_index) {
    const std::size_t n = in.rows();
    const std::size_t ph = h / 2;
    const std::size_t pw = w / 2;
    Tensor out({n, c * ph * pw});
    src_index.assign(n * c * ph * pw, 0);
    for (std::size_t s = 0; s < n; ++s) {
        const double* img = &in.data()[s * c * h * w];
        double* dst = &out.data()[s * c * ph * pw];
        std::size_t* idx = &src_index[s * c * ph * pw];
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* plane = img + ch * h * w;
            for (std::size_t py = 0; py < ph; ++py) {
                for (std::size_t px = 0; px < pw; ++px) {
                    std::size_t best = (2 * py) * w + (2 * px);
                    double best_v = plane[best];
                    const std::size_t cand[3] = {(2 * py) * w + (2 * px + 1),
                                                 (2 * py + 1) * w + (2 * px),
                                                 (2 * py + 1) * w + (2 * px + 1)};
                    for (std::size_t ci : cand) {
                        if (plane[ci] > best_v) {
                            best_v = plane[ci];
                            best = ci;
                        }
                    }
                    const std::size_t o = py * pw + px;
                    dst[ch * ph * pw + o] = best_v;
                    idx[ch * ph * pw + o] = ch * h * w + best;
                }
            }
        }
    }
    return out;
}

Tensor maxpool2_backward(const Tensor& gout, std::size_t c, std::size_t h, std::size_t w,
                         const std::vector<std::size_t>& src_index) {
    const std::size_t n = gout.rows();
    const std::size_t per_sample = c * (h / 2) * (w / 2);
    Tensor gin({n, c * h * w});
    for (std::size_t s = 0; s < n; ++s) {
        const double* gsrc = &gout.data()[s * per_sample];
        double* gdst = &gin.data()[s * c * h * w];
        const std::size_t* idx = &src_index[s * per_sample];
        for (std::size_t i = 0; i < per_sample; ++i) gdst[idx[i]] += gsrc[i];
    }
    return gin;
}

void relu_mask_in_place(Tensor& grad, const Tensor& pre_act) {
    for (std::size_t i = 0; i < grad.size(); ++i)
        if (pre_act.data()[i] <= 0.0) grad.data()[i] = 0.0;
}

}  // namespace

Tensor forward(const ModelSpec& spec, const Parameters& params,
               const Tensor& batch, ForwardCache* cache) {
    spec.validate();
    check_batch(spec, batch);
    if (cache) {
        cache->input = batch;
        cache->pre_act.clear();
        cache->pooled.clear();
        cache->pool_src.clear();
    }

    if (spec.kind == ModelKind::mlp) {
        const std::size_t layers = spec.layer_sizes.size() - 1;
        Tensor a = batch;
        for (std::size_t i = 0; i < layers; ++i) {
            std::ostringstream name;
            name << "fc" << (i + 1);
            Tensor z = dense_forward(a, params.at(name.str() + ".weight"),
                                     params.at(name.str() + ".bias"));
            if (cache) cache->pre_act.push_back(z);
            if (i + 1 < layers)
                a = relu(z);
            else
                a = std::move(z);
        }
        return a;
    }

    const std::size_t cin = spec.input_shape[0];
    const std::size_t h = spec.input_shape[1];
    const std::size_t w = spec.input_shape[2];
    const std::size_t c1 = spec.conv1_channels;
    const std::size_t c2 = spec.conv2_channels;

    Tensor z1 = conv3x3_forward(batch, cin, h, w, params.at("conv1.weight"),
                                params.at("conv1.bias"));
    std::vector<std::size_t> idx1;
    Tensor p1 = maxpool2_forward(relu(z1), c1, h, w, idx1);
    const std::size_t h2 = h / 2, w2 = w / 2;

    Tensor z2 = conv3x3_forward(p1, c1, h2, w2, params.at("conv2.weight"),
                                params.at("conv2.bias"));
    std::vector<std::size_t> idx2;
    Tensor p2 = maxpool2_forward(relu(z2), c2, h2, w2, idx2);

    Tensor logits = dense_forward(p2, params.at("fc.weight"), params.at("fc.bias"));
    if (cache) {
        cache->pre_act = {std::move(z1), std::move(z2)};
        cache->pooled = {std::move(p1), std::move(p2)};
        cache->pool_src = {std::move(idx1), std::move(idx2)};
    }
    return logits;
}

Parameters backward(const ModelSpec& spec, const Parameters& params,
                    const ForwardCache& cache, const Tensor& grad_logits) {
    spec.validate();
    if (grad_logits.rank() != 2 || grad_logits.cols() != spec.class_count)
        throw std::invalid_argument("grad_logits must be [batch x class_count]");
    if (cache.input.rank() != 2 || cache.input.rows() != grad_logits.rows())
        throw std::invalid_argument("forward cache does not match grad_logits batch");

    Parameters grads = Parameters::zeros_like(params);

    if (spec.kind == ModelKind::mlp) {
        const std::size_t layers = spec.layer_sizes.size() - 1;
        if (cache.pre_act.size() != layers)
            throw std::invalid_argument("forward cache does not match the model");
        Tensor g = grad_logits;
        for (std::size_t i = layers; i-- > 0;) {
            std::ostringstream name;
            name << "fc" << (i + 1);
            const Tensor a = i == 0 ? cache.input : relu(cache.pre_act[i - 1]);
            Tensor gp = dense_backward(a, params.at(name.str() + ".weight"), g,
                                       grads.at(name.str() + ".weight"),
                                       grads.at(name.str() + ".bias"), i > 0);
            if (i > 0) {
                relu_mask_in_place(gp, cache.pre_act[i - 1]);
                g = std::move(gp);
            }
        }
        return grads;
    }

    if (cache.pre_act.size() != 2 || cache.pooled.size() != 2 || cache.pool_src.size() != 2)
        throw std::invalid_argument("forward cache does not match the model");

    const std::size_t cin = spec.input_shape[0];
    const std::size_t h = spec.input_shape[1];
    const std::size_t w = spec.input_shape[2];
    const std::size_t c1 = spec.conv1_channels;
    const std::size_t c2 = spec.conv2_channels;
    const std::size_t h2 = h / 2, w2 = w / 2;

    // Dense head.
    Tensor g_p2 = dense_backward(cache.pooled[1], params.at("fc.weight"), grad_logits,
                                 grads.at("fc.weight"), grads.at("fc.bias"), true);

    // Pool 2 and ReLU 2.
    Tensor g_r2 = maxpool2_backward(g_p2, c2, h2, w2, cache.pool_src[1]);
    relu_mask_in_place(g_r2, cache.pre_act[1]);

    // Conv 2 (input was pool-1 output).
    Tensor g_p1({cache.input.rows(), c1 * h2 * w2});
    conv3x3_backward(cache.pooled[0], c1, h2, w2, params.at("conv2.weight"), g_r2,
                     grads.at("conv2.weight"), grads.at("conv2.bias"), &g_p1);

    // Pool 1 and ReLU 1.
    Tensor g_r1 = maxpool2_backward(g_p1, c1, h, w, cache.pool_src[0]);
    relu_mask_in_place(g_r1, cache.pre_act[0]);

    // Conv 1; no gradient for the input itself.
    conv3x3_backward(cache.input, cin, h, w, params.at("conv1.weight"), g_r1,
                     grads.at("conv1.weight"), grads.at("conv1.bias"), nullptr);

    return grads;
}

}  // namespace drkd
