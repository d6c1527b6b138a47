#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prer/nn.hpp"

namespace prer {

inline constexpr const char* kCheckpointFormat = "prer-ckpt-v1";

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

/// In-memory form of a prer-ckpt-v1 checkpoint.
///
/// On disk a checkpoint is a JSON manifest plus a flat blob of
/// little-endian IEEE-754 doubles. The manifest lists
/// {name, shape, dtype, offset} per tensor (offset in bytes into the blob),
/// integer arrays inline, and a free-form `meta` object describing the
/// architecture.
struct Checkpoint {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<CheckpointEntry> tensors;
    std::map<std::string, std::vector<std::int64_t>> int_arrays;

    void add(const ParamRefs& refs);
    const CheckpointEntry& find(const std::string& name) const;
    /// Copies stored values into `refs`; shapes must match exactly.
    void restore(const ParamRefs& refs) const;
};

/// Writes `<manifest>` and its blob (same stem, `.bin`). Returns the blob path.
std::filesystem::path save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& manifest);
Checkpoint load_checkpoint(const std::filesystem::path& manifest);

}  // namespace prer
