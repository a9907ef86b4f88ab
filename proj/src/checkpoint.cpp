#include "drkd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "drkd/error.hpp"

namespace drkd {

namespace {

constexpr char kMagic[4] = {'D', 'R', 'K', 'D'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64_le(std::string& out, double d) {
    const auto bits = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

std::uint32_t get_u32_le(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

double get_f64_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

[[noreturn]] void load_fail(const std::string& path, const std::string& what) {
    throw io_error("checkpoint " + path + ": " + what);
}

template <typename T>
T require_field(const nlohmann::json& j, const std::string& key, const std::string& prefix) {
    if (!j.is_object() || !j.contains(key))
        throw config_error(prefix + "." + key + ": missing field");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw config_error(prefix + "." + key + ": wrong type");
    }
}

}  // namespace

nlohmann::json model_spec_to_json(const ModelSpec& spec) {
    nlohmann::json j;
    j["kind"] = std::string(to_string(spec.kind));
    if (spec.kind == ModelKind::mlp) {
        j["layer_sizes"] = spec.layer_sizes;
    } else {
        j["conv1_channels"] = spec.conv1_channels;
        j["conv2_channels"] = spec.conv2_channels;
    }
    j["input_shape"] = spec.input_shape;
    j["class_count"] = spec.class_count;
    j["init_seed"] = spec.init_seed;
    return j;
}

ModelSpec model_spec_from_json(const nlohmann::json& j, const std::string& prefix) {
    if (!j.is_object()) throw config_error(prefix + ": expected an object");
    ModelSpec spec;
    spec.kind = model_kind_from_string(require_field<std::string>(j, "kind", prefix));
    spec.input_shape = require_field<std::vector<std::size_t>>(j, "input_shape", prefix);
    spec.class_count = require_field<std::size_t>(j, "class_count", prefix);
    spec.init_seed =
        j.contains("init_seed") ? require_field<std::uint64_t>(j, "init_seed", prefix) : 0;
    if (spec.kind == ModelKind::mlp) {
        if (j.contains("layer_sizes")) {
            spec.layer_sizes =
                require_field<std::vector<std::size_t>>(j, "layer_sizes", prefix);
        } else {
            spec.layer_sizes = {spec.input_size(), 256, 128, spec.class_count};
        }
    } else {
        spec.conv1_channels = j.contains("conv1_channels")
                                  ? require_field<std::size_t>(j, "conv1_channels", prefix)
                                  : 8;
        spec.conv2_channels = j.contains("conv2_channels")
                                  ? require_field<std::size_t>(j, "conv2_channels", prefix)
                                  : 16;
    }
    static const char* known[] = {"kind",           "layer_sizes",  "conv1_channels",
                                  "conv2_channels", "input_shape",  "class_count",
                                  "init_seed"};
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw config_error(prefix + "." + key + ": unknown field");
    }
    spec.validate();
    return spec;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    ckpt.spec.validate();
    const auto layout = parameter_layout(ckpt.spec);
    if (ckpt.params.count() != layout.size())
        throw std::invalid_argument("checkpoint parameters do not match the model layout");
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const auto& [name, tensor] = ckpt.params.entries()[i];
        if (name != layout[i].first || tensor.shape() != layout[i].second)
            throw std::invalid_argument("checkpoint parameter " + name +
                                        " does not match the model layout");
        if (!tensor.all_finite())
            throw std::invalid_argument("checkpoint parameter " + name +
                                        " contains non-finite values");
    }

    nlohmann::json header;
    header["model"] = model_spec_to_json(ckpt.spec);
    header["metadata"] = {{"run_seed", ckpt.meta.run_seed},
                          {"epochs", ckpt.meta.epochs},
                          {"final_train_accuracy", ckpt.meta.final_train_accuracy},
                          {"final_test_accuracy", ckpt.meta.final_test_accuracy},
                          {"created_at", ckpt.meta.created_at}};
    nlohmann::json manifest = nlohmann::json::array();
    std::uint64_t offset = 0;  // bytes into the data section
    for (const auto& [name, tensor] : ckpt.params.entries()) {
        manifest.push_back(
            {{"name", name}, {"shape", tensor.shape()}, {"offset", offset}});
        offset += tensor.size() * sizeof(double);
    }
    header["tensors"] = std::move(manifest);
    const std::string header_bytes = header.dump();

    std::string blob;
    blob.reserve(12 + header_bytes.size() + offset);
    blob.append(kMagic, sizeof(kMagic));
    put_u32_le(blob, kFormatVersion);
    put_u32_le(blob, static_cast<std::uint32_t>(header_bytes.size()));
    blob += header_bytes;
    for (const auto& [_, tensor] : ckpt.params.entries())
        for (double v : tensor.values()) put_f64_le(blob, v);

    const std::filesystem::path target(path);
    const std::filesystem::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw io_error("checkpoint " + path + ": cannot open for writing");
        out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        if (!out) throw io_error("checkpoint " + path + ": write failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, target, ec);
    if (ec) throw io_error("checkpoint " + path + ": rename failed: " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) load_fail(path, "cannot open file");
    std::string blob((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    if (in.bad()) load_fail(path, "read failed");
    const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());

    if (blob.size() < 12) load_fail(path, "truncated before header");
    if (std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0)
        load_fail(path, "not a checkpoint file (bad magic)");
    const std::uint32_t version = get_u32_le(bytes + 4);
    if (version != kFormatVersion) {
        std::ostringstream msg;
        msg << "unsupported format version " << version;
        load_fail(path, msg.str());
    }
    const std::uint32_t header_len = get_u32_le(bytes + 8);
    if (blob.size() < 12 + static_cast<std::size_t>(header_len))
        load_fail(path, "truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(blob.data() + 12, blob.data() + 12 + header_len);
    } catch (const nlohmann::json::exception& e) {
        load_fail(path, std::string("corrupt header JSON: ") + e.what());
    }

    Checkpoint ckpt;
    try {
        ckpt.spec = model_spec_from_json(header.at("model"), "model");
        const auto& meta = header.at("metadata");
        ckpt.meta.run_seed = require_field<std::uint64_t>(meta, "run_seed", "metadata");
        ckpt.meta.epochs = require_field<std::uint64_t>(meta, "epochs", "metadata");
        ckpt.meta.final_train_accuracy =
            require_field<double>(meta, "final_train_accuracy", "metadata");
        ckpt.meta.final_test_accuracy =
            require_field<double>(meta, "final_test_accuracy", "metadata");
        ckpt.meta.created_at = require_field<std::string>(meta, "created_at", "metadata");
    } catch (const nlohmann::json::exception& e) {
        load_fail(path, std::string("corrupt header: ") + e.what());
    } catch (const config_error& e) {
        load_fail(path, std::string("corrupt header: ") + e.what());
    }

    const auto layout = parameter_layout(ckpt.spec);
    if (!header.contains("tensors") || !header["tensors"].is_array())
        load_fail(path, "corrupt header: missing tensor manifest");
    const auto& manifest = header["tensors"];
    if (manifest.size() != layout.size()) {
        std::ostringstream msg;
        msg << "tensor manifest has " << manifest.size() << " entries, model needs "
            << layout.size();
        load_fail(path, msg.str());
    }

    const std::size_t data_start = 12 + header_len;
    const std::size_t data_bytes = blob.size() - data_start;
    std::uint64_t expect_offset = 0;
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const auto& [want_name, want_shape] = layout[i];
        std::string name;
        std::vector<std::size_t> shape;
        std::uint64_t off = 0;
        try {
            name = manifest[i].at("name").get<std::string>();
            shape = manifest[i].at("shape").get<std::vector<std::size_t>>();
            off = manifest[i].at("offset").get<std::uint64_t>();
        } catch (const nlohmann::json::exception& e) {
            load_fail(path, std::string("corrupt tensor manifest: ") + e.what());
        }
        if (name != want_name)
            load_fail(path, "tensor " + name + ": expected " + want_name +
                                " at manifest position " + std::to_string(i));
        if (shape != want_shape)
            load_fail(path, "tensor " + name + ": shape does not match the model spec");
        if (off != expect_offset)
            load_fail(path, "tensor " + name + ": bad data offset");

        std::size_t count = 1;
        for (std::size_t d : shape) count *= d;
        const std::uint64_t end = off + count * sizeof(double);
        if (end > data_bytes)
            load_fail(path, "tensor " + name + ": truncated tensor data");

        Tensor t(shape);
        const unsigned char* p = bytes + data_start + off;
        for (std::size_t k = 0; k < count; ++k) t.data()[k] = get_f64_le(p + k * 8);
        if (!t.all_finite())
            load_fail(path, "tensor " + name + ": non-finite values");
        ckpt.params.add(name, std::move(t));
        expect_offset = end;
    }
    if (expect_offset != data_bytes)
        load_fail(path, "trailing bytes after tensor data");

    return ckpt;
}

}  // namespace drkd
