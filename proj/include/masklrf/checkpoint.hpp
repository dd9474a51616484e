#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include "masklrf/r2pt.hpp"

namespace masklrf {

// Binary layout, all integers little-endian:
//   "MLRF" | u32 version | u64 config length | config (key=value lines)
//   | u32 tensor count | per tensor: u32 name length, name, u32 rank,
//     u64 dims[rank], f64 data[prod(dims)]
//   | u32 CRC32 of every preceding byte
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    enum class Kind { io, bad_magic, bad_version, crc_mismatch, shape_mismatch, malformed };

    CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

std::string serialize_checkpoint(const ModelState& state);
ModelState parse_checkpoint(std::string_view bytes);

void save_checkpoint(const ModelState& state, const std::string& path);
ModelState load_checkpoint(const std::string& path);

std::uint32_t crc32_of(std::string_view bytes);

}  // namespace masklrf
