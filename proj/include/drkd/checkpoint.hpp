#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

#include "drkd/model.hpp"

namespace drkd {

// Training provenance stored alongside the weights. created_at stays empty
// when timing capture is disabled so that reruns are byte-identical.
struct CheckpointMeta {
    std::uint64_t run_seed = 0;
    std::uint64_t epochs = 0;
    double final_train_accuracy = 0.0;
    double final_test_accuracy = 0.0;
    std::string created_at;

    friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
    ModelSpec spec;
    Parameters params;
    CheckpointMeta meta;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// JSON form of a ModelSpec, shared by checkpoint headers and run configs.
// from_json reports problems as config_error with a dotted field path
// rooted at `prefix` (e.g. "model.layer_sizes").
nlohmann::json model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j, const std::string& prefix);

// Binary container: magic "DRKD", format version u32 LE, u32 LE byte length
// of a UTF-8 JSON header (model spec + metadata + ordered tensor manifest
// with byte offsets into the data section), then the tensor payloads as
// little-endian IEEE-754 float64 in manifest order.
//
// save writes to a temporary file and renames, so a crash never leaves a
// half-written checkpoint at the target path. load failures throw io_error
// naming the offending tensor or header field; round-trips are bit-exact.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace drkd
