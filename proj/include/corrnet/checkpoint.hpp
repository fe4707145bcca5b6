#pragma once

#include "corrnet/autograd.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace corrnet {

/// One named tensor record of a CNPK file.
///
/// Layout (little endian): "CNPK", u32 version, u32 record count, then per record a u16
/// name length, the UTF-8 name, a u8 rank, u32 extents[rank] and prod(extents) 32-bit floats.
struct Record {
  std::string name;
  std::vector<std::uint32_t> extents;
  std::vector<float> values;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_records(const std::filesystem::path& path, const std::vector<Record>& records);
std::vector<Record> read_records(const std::filesystem::path& path);

/// Parameters plus training state. Integer metadata is stored as "meta.<key>" records of two
/// floats carrying the low and high 32 bits of the value bit-for-bit; optimizer moments are
/// stored as "adam.m.<param>" / "adam.v.<param>".
struct Checkpoint {
  ParamStore<float> params;
  std::map<std::string, std::uint64_t> meta;
  ParamStore<float> adam_m;
  ParamStore<float> adam_v;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Single-tensor file, as used for corpus frames.
void save_tensor(const std::filesystem::path& path, const std::string& name, const Tensor<float>& t);
Tensor<float> load_tensor(const std::filesystem::path& path, const std::string& name);

}  // namespace corrnet
