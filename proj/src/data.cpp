#include "drkd/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "drkd/error.hpp"
#include "drkd/rng.hpp"

namespace drkd {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::size_t kCifarRecordBytes = 3073;  // 1 label + 3*32*32 pixels

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error(path + ": cannot open file");
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    if (in.bad()) throw io_error(path + ": read failed");
    return bytes;
}

std::uint32_t get_u32_be(const std::string& bytes, std::size_t offset) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
    return v;
}

[[noreturn]] void parse_fail(const std::string& path, std::size_t offset,
                             const std::string& what) {
    std::ostringstream msg;
    msg << path << ": at byte " << offset << ": " << what;
    throw io_error(msg.str());
}

void expect_magic(const std::string& path, const std::string& bytes,
                  std::uint32_t want, const char* kind) {
    if (bytes.size() < 4) parse_fail(path, bytes.size(), "truncated before magic");
    const std::uint32_t got = get_u32_be(bytes, 0);
    if (got != want) {
        std::ostringstream msg;
        msg << "bad magic 0x" << std::hex << got << " (expected the IDX " << kind
            << " magic 0x" << want << ")";
        parse_fail(path, 0, msg.str());
    }
}

void expect_size(const std::string& path, const std::string& bytes,
                 std::size_t want) {
    if (bytes.size() < want) {
        std::ostringstream msg;
        msg << "truncated: file has " << bytes.size() << " bytes, expected " << want;
        parse_fail(path, bytes.size(), msg.str());
    }
    if (bytes.size() > want)
        parse_fail(path, want, "unexpected trailing bytes");
}

}  // namespace

std::size_t Dataset::feature_count() const {
    std::size_t n = 1;
    for (std::size_t d : feature_shape) n *= d;
    return n;
}

void Dataset::validate() const {
    if (inputs.rank() != 2)
        throw std::invalid_argument("dataset inputs must be rank 2");
    if (inputs.rows() != labels.size())
        throw std::invalid_argument("dataset inputs and labels disagree on length");
    if (class_count < 2)
        throw std::invalid_argument("dataset needs at least 2 classes");
    for (std::size_t y : labels)
        if (y >= class_count)
            throw std::invalid_argument("dataset label out of range");
    if (feature_shape.empty() || feature_count() != inputs.cols())
        throw std::invalid_argument("dataset feature_shape does not match inputs");
    if (!inputs.all_finite())
        throw std::invalid_argument("dataset inputs contain non-finite values");
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::size_t class_count) {
    const std::string img = read_file(images_path);
    expect_magic(images_path, img, kIdxImagesMagic, "images");
    if (img.size() < 16) parse_fail(images_path, img.size(), "truncated header");
    const std::size_t count = get_u32_be(img, 4);
    const std::size_t rows = get_u32_be(img, 8);
    const std::size_t cols = get_u32_be(img, 12);
    if (count == 0) parse_fail(images_path, 4, "image count is zero");
    if (rows == 0 || cols == 0) parse_fail(images_path, 8, "zero image dimensions");
    expect_size(images_path, img, 16 + count * rows * cols);

    const std::string lab = read_file(labels_path);
    expect_magic(labels_path, lab, kIdxLabelsMagic, "labels");
    if (lab.size() < 8) parse_fail(labels_path, lab.size(), "truncated header");
    const std::size_t lab_count = get_u32_be(lab, 4);
    expect_size(labels_path, lab, 8 + lab_count);

    if (count != lab_count) {
        std::ostringstream msg;
        msg << images_path << " has " << count << " images but " << labels_path
            << " has " << lab_count << " labels";
        throw io_error(msg.str());
    }

    Dataset ds;
    ds.inputs = Tensor({count, rows * cols});
    for (std::size_t i = 0; i < count * rows * cols; ++i)
        ds.inputs.data()[i] =
            static_cast<double>(static_cast<unsigned char>(img[16 + i])) / 255.0;
    ds.labels.resize(count);
    std::size_t max_label = 0;
    for (std::size_t i = 0; i < count; ++i) {
        ds.labels[i] = static_cast<unsigned char>(lab[8 + i]);
        max_label = std::max(max_label, ds.labels[i]);
    }
    if (class_count == 0) class_count = max_label + 1;
    if (max_label >= class_count) {
        std::ostringstream msg;
        msg << labels_path << ": label " << max_label << " exceeds class count "
            << class_count;
        throw io_error(msg.str());
    }
    ds.class_count = std::max<std::size_t>(class_count, 2);
    ds.feature_shape = {rows, cols};
    ds.validate();
    return ds;
}

Dataset load_cifar10_bin(const std::vector<std::string>& paths) {
    if (paths.empty()) throw io_error("cifar10: no input files given");
    std::vector<std::string> blobs;
    std::size_t total = 0;
    for (const auto& path : paths) {
        std::string bytes = read_file(path);
        if (bytes.size() % kCifarRecordBytes != 0) {
            std::ostringstream msg;
            msg << path << ": file size " << bytes.size()
                << " is not a multiple of the 3073-byte record size";
            throw io_error(msg.str());
        }
        if (bytes.empty()) throw io_error(path + ": empty file");
        total += bytes.size() / kCifarRecordBytes;
        blobs.push_back(std::move(bytes));
    }

    Dataset ds;
    ds.inputs = Tensor({total, std::size_t{3 * 32 * 32}});
    ds.labels.resize(total);
    std::size_t sample = 0;
    for (std::size_t f = 0; f < blobs.size(); ++f) {
        const std::string& bytes = blobs[f];
        const std::size_t records = bytes.size() / kCifarRecordBytes;
        for (std::size_t r = 0; r < records; ++r, ++sample) {
            const unsigned char* rec = reinterpret_cast<const unsigned char*>(
                bytes.data() + r * kCifarRecordBytes);
            if (rec[0] >= 10) {
                std::ostringstream msg;
                msg << paths[f] << ": record " << r << ": label byte "
                    << static_cast<unsigned>(rec[0]) << " is not a CIFAR-10 class";
                throw io_error(msg.str());
            }
            ds.labels[sample] = rec[0];
            double* dst = &ds.inputs.data()[sample * 3072];
            for (std::size_t i = 0; i < 3072; ++i)
                dst[i] = static_cast<double>(rec[1 + i]) / 255.0;
        }
    }
    ds.class_count = 10;
    ds.feature_shape = {3, 32, 32};
    ds.validate();
    return ds;
}

Dataset synth_blobs(std::uint64_t seed, std::size_t classes, std::size_t dim,
                    std::size_t n_per_class, double spread) {
    if (classes < 2) throw config_error("blobs: classes must be at least 2");
    if (dim < 2) throw config_error("blobs: dim must be at least 2");
    if (n_per_class == 0) throw config_error("blobs: n_per_class must be positive");
    if (!(spread > 0.0) || !std::isfinite(spread))
        throw config_error("blobs: spread must be positive and finite");

    constexpr double kRadius = 3.0;
    const std::size_t n = classes * n_per_class;
    Dataset ds;
    ds.inputs = Tensor({n, dim});
    ds.labels.resize(n);
    Rng rng(seed);
    std::size_t sample = 0;
    for (std::size_t k = 0; k < classes; ++k) {
        const double angle =
            2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(classes);
        const double cx = kRadius * std::cos(angle);
        const double cy = kRadius * std::sin(angle);
        for (std::size_t i = 0; i < n_per_class; ++i, ++sample) {
            double* row = &ds.inputs.data()[sample * dim];
            for (std::size_t d = 0; d < dim; ++d) {
                const double center = d == 0 ? cx : (d == 1 ? cy : 0.0);
                row[d] = center + spread * rng.normal();
            }
            ds.labels[sample] = k;
        }
    }
    ds.class_count = classes;
    ds.feature_shape = {dim};
    ds.validate();
    return ds;
}

ChannelStats channel_stats(const Dataset& ds) {
    ds.validate();
    const std::size_t channels = ds.feature_shape.size() == 3 ? ds.feature_shape[0] : 1;
    const std::size_t per_channel = ds.feature_count() / channels;
    ChannelStats stats;
    stats.mean.assign(channels, 0.0);
    stats.stdev.assign(channels, 0.0);
    const std::size_t n = ds.size();
    const double count = static_cast<double>(n * per_channel);
    for (std::size_t c = 0; c < channels; ++c) {
        double sum = 0.0;
        double lo = ds.inputs.data()[c * per_channel];
        double hi = lo;
        for (std::size_t s = 0; s < n; ++s) {
            const double* row = &ds.inputs.data()[s * ds.feature_count() + c * per_channel];
            for (std::size_t i = 0; i < per_channel; ++i) {
                sum += row[i];
                lo = std::min(lo, row[i]);
                hi = std::max(hi, row[i]);
            }
        }
        // A constant channel has exactly zero variance; computing it through
        // the mean would leave rounding residue that standardize() then
        // amplifies into garbage.
        if (lo == hi) {
            stats.mean[c] = lo;
            stats.stdev[c] = 0.0;
            continue;
        }
        const double mean = sum / count;
        double sq = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            const double* row = &ds.inputs.data()[s * ds.feature_count() + c * per_channel];
            for (std::size_t i = 0; i < per_channel; ++i) {
                const double d = row[i] - mean;
                sq += d * d;
            }
        }
        stats.mean[c] = mean;
        stats.stdev[c] = std::sqrt(sq / count);
    }
    return stats;
}

void standardize(Dataset& ds, const ChannelStats& stats) {
    ds.validate();
    const std::size_t channels = ds.feature_shape.size() == 3 ? ds.feature_shape[0] : 1;
    if (stats.mean.size() != channels || stats.stdev.size() != channels)
        throw std::invalid_argument("channel stats do not match the dataset layout");
    if (ds.standardized)
        throw std::invalid_argument("dataset is already standardized");
    const std::size_t per_channel = ds.feature_count() / channels;
    for (std::size_t s = 0; s < ds.size(); ++s) {
        for (std::size_t c = 0; c < channels; ++c) {
            const double scale = stats.stdev[c] > 0.0 ? 1.0 / stats.stdev[c] : 1.0;
            double* row = &ds.inputs.data()[s * ds.feature_count() + c * per_channel];
            for (std::size_t i = 0; i < per_channel; ++i)
                row[i] = (row[i] - stats.mean[c]) * scale;
        }
    }
    ds.standardized = true;
    ds.norm = stats;
}

namespace {

Batch gather_batch(const Dataset& ds, const std::vector<std::size_t>& order,
                   std::size_t begin, std::size_t end) {
    const std::size_t cols = ds.inputs.cols();
    Batch b;
    b.inputs = Tensor({end - begin, cols});
    b.rows.reserve(end - begin);
    std::vector<std::size_t> labels;
    labels.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        const std::size_t src = order[i];
        b.rows.push_back(src);
        labels.push_back(ds.labels[src]);
        const double* from = &ds.inputs.data()[src * cols];
        double* to = &b.inputs.data()[(i - begin) * cols];
        std::copy(from, from + cols, to);
    }
    b.labels = LabelBatch(std::move(labels), ds.class_count);
    return b;
}

}  // namespace

std::vector<Batch> batches(const Dataset& ds, const BatchPlan& plan,
                           std::uint64_t epoch) {
    ds.validate();
    if (plan.batch_size == 0) throw config_error("batch_size must be positive");
    const std::size_t n = ds.size();
    if (plan.drop_last && plan.batch_size > n)
        throw config_error("batch_size exceeds the dataset size with drop_last set");

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(plan.shuffle_seed, epoch));
    // Fisher-Yates, fixed visit order so the permutation is a pure function
    // of the derived seed.
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(order[i - 1], order[j]);
    }

    std::vector<Batch> out;
    for (std::size_t begin = 0; begin < n; begin += plan.batch_size) {
        const std::size_t end = std::min(begin + plan.batch_size, n);
        if (plan.drop_last && end - begin < plan.batch_size) break;
        out.push_back(gather_batch(ds, order, begin, end));
    }
    return out;
}

std::vector<Batch> sequential_batches(const Dataset& ds, std::size_t batch_size) {
    ds.validate();
    if (batch_size == 0) throw config_error("batch_size must be positive");
    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<Batch> out;
    for (std::size_t begin = 0; begin < ds.size(); begin += batch_size) {
        const std::size_t end = std::min(begin + batch_size, ds.size());
        out.push_back(gather_batch(ds, order, begin, end));
    }
    return out;
}

}  // namespace drkd
