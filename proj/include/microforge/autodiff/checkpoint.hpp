#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "microforge/autodiff/tensor.hpp"

namespace mf::ad {

inline constexpr int kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'M', 'F', 'C', 'K', 'P', 'T', '0', '1'};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Self-describing parameter container.
///
/// Layout: 8-byte magic, u64 little-endian header length, UTF-8 JSON header
/// {version, config, params: [{name, shape, offset}], metadata}, then the raw
/// little-endian f64 blobs. Offsets are in bytes from the start of the blob
/// section.
struct Checkpoint {
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
    std::vector<NamedTensor> params;
    nlohmann::ordered_json metadata = nlohmann::ordered_json::object();

    /// Throws std::out_of_range for an unknown name.
    const Tensor& get(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);
Checkpoint parse_checkpoint(const std::string& bytes);

/// FNV-1a over names, shapes and values of the given parameters.
std::string parameter_hash(const std::vector<NamedTensor>& params);

}  // namespace mf::ad
