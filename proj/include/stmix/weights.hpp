#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stmix/model.hpp"

namespace stmix {

// Binary weight-store failures, one kind per failure mode.
class WeightError : public std::runtime_error {
public:
    enum class Kind { Magic, Version, Truncated, Header };
    WeightError(Kind k, const std::string& what) : std::runtime_error(what), kind_(k) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

struct TensorInfo {
    std::string name;
    std::vector<int> shape;
    std::uint64_t byte_offset = 0;
    std::uint64_t count = 0;
};

struct StoreInfo {
    std::uint32_t version = 0;
    bool fused = false;
    std::uint64_t config_hash = 0;
    std::string config_text;
    std::vector<TensorInfo> tensors;
};

// File layout: magic "STMX", u32 version, u32 header length, header text
// (flags, config, tensor table), then raw little-endian float32 payload.
std::vector<std::uint8_t> save_model(const Model& m);
Model load_model(const std::vector<std::uint8_t>& bytes);
// Rejects a store whose fused flag does not match the requested mode.
Model load_model(const std::vector<std::uint8_t>& bytes, BlockMode expected);
StoreInfo inspect_store(const std::vector<std::uint8_t>& bytes);

void save_model_file(const Model& m, const std::string& path);
Model load_model_file(const std::string& path);
std::vector<std::uint8_t> read_file_bytes(const std::string& path);

}  // namespace stmix
