#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drkd/tensor.hpp"

namespace drkd {

// Per-channel affine preprocessing that has been applied to a dataset.
// Recorded so that a teacher and its students always see identically
// prepared inputs.
struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stdev;

    friend bool operator==(const ChannelStats&, const ChannelStats&) = default;
};

// A labeled corpus. Inputs are stored flattened, one sample per row;
// feature_shape records the logical layout ({features}, {h, w} or
// {c, h, w}) for models that care about geometry.
struct Dataset {
    Tensor inputs{std::vector<std::size_t>{1, 1}};
    std::vector<std::size_t> labels;
    std::size_t class_count = 0;
    std::string split = "train";
    std::vector<std::size_t> feature_shape;
    bool standardized = false;
    ChannelStats norm;  // populated when standardized

    std::size_t size() const { return labels.size(); }
    std::size_t feature_count() const;
    void validate() const;  // throws std::invalid_argument
};

// How to slice a dataset into minibatches. The permutation for an epoch is
// fully determined by (shuffle_seed, epoch).
struct BatchPlan {
    std::size_t batch_size = 32;
    std::uint64_t shuffle_seed = 0;
    bool drop_last = false;

    friend bool operator==(const BatchPlan&, const BatchPlan&) = default;
};

// One minibatch plus the dataset row each sample came from (used to gather
// precomputed teacher logits).
struct Batch {
    Tensor inputs{std::vector<std::size_t>{1, 1}};
    LabelBatch labels{std::vector<std::size_t>{0}, 2};
    std::vector<std::size_t> rows;
};

// MNIST-family IDX pair (big-endian magic 0x00000803 images / 0x00000801
// labels). Pixels map to [0,1] by dividing by 255. class_count 0 means
// "infer as max label + 1". Malformed input throws io_error naming the
// byte offset of the problem.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::size_t class_count = 0);

// CIFAR-10 binary batches: 3073-byte records (label byte then 3x32x32
// pixel bytes, planes in R, G, B order). Files are concatenated in the
// order given. Throws io_error on malformed files.
Dataset load_cifar10_bin(const std::vector<std::string>& paths);

// Synthetic Gaussian clusters: class k's mean sits on a circle of radius 3
// in dimensions 0 and 1 (zero elsewhere), samples scatter around it with
// the given spread. Fully determined by the seed.
Dataset synth_blobs(std::uint64_t seed, std::size_t classes, std::size_t dim,
                    std::size_t n_per_class, double spread);

// Per-channel mean and population standard deviation. A channel is the
// leading dimension of a {c, h, w} feature shape; flat datasets are one
// channel.
ChannelStats channel_stats(const Dataset& ds);

// In-place (x - mean) / stdev per channel; zero-variance channels are left
// unscaled. Records the stats on the dataset.
void standardize(Dataset& ds, const ChannelStats& stats);

// Deterministic shuffled minibatches for one epoch. With drop_last, a
// trailing short batch is dropped; batch_size larger than the dataset is
// then a config_error.
std::vector<Batch> batches(const Dataset& ds, const BatchPlan& plan,
                           std::uint64_t epoch);

// Unshuffled batches in dataset order, for evaluation.
std::vector<Batch> sequential_batches(const Dataset& ds, std::size_t batch_size);

}  // namespace drkd
