#include "corrnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace corrnet {

namespace {

static_assert(std::endian::native == std::endian::little, "CNPK IO assumes a little-endian host");

constexpr char kMagic[4] = {'C', 'N', 'P', 'K'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw std::runtime_error("truncated CNPK file " + path.string());
  }
  return v;
}

Record to_record(const std::string& name, const Tensor<float>& t) {
  Record r;
  r.name = name;
  for (Index e : t.shape()) r.extents.push_back(static_cast<std::uint32_t>(e));
  r.values.assign(t.data(), t.data() + t.size());
  return r;
}

Tensor<float> to_tensor(const Record& r) {
  Shape shape(r.extents.begin(), r.extents.end());
  return Tensor<float>(shape, std::span<const float>(r.values));
}

Record meta_record(const std::string& key, std::uint64_t value) {
  const auto lo = static_cast<std::uint32_t>(value & 0xFFFFFFFFULL);
  const auto hi = static_cast<std::uint32_t>(value >> 32);
  return {"meta." + key, {2}, {std::bit_cast<float>(lo), std::bit_cast<float>(hi)}};
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

void write_records(const std::filesystem::path& path, const std::vector<Record>& records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.name.size() > std::numeric_limits<std::uint16_t>::max()) throw std::invalid_argument("record name too long");
    if (r.extents.size() > std::numeric_limits<std::uint8_t>::max()) throw std::invalid_argument("record rank too high");
    std::uint64_t count = 1;
    for (auto e : r.extents) count *= e;
    if (count != r.values.size()) throw std::invalid_argument("record '" + r.name + "' extents do not match values");
    put<std::uint16_t>(os, static_cast<std::uint16_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put<std::uint8_t>(os, static_cast<std::uint8_t>(r.extents.size()));
    for (auto e : r.extents) put<std::uint32_t>(os, e);
    os.write(reinterpret_cast<const char*>(r.values.data()), static_cast<std::streamsize>(r.values.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

std::vector<Record> read_records(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error(path.string() + " is not a CNPK file");
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported CNPK version " + std::to_string(version) + " in " + path.string());
  }
  const auto count = get<std::uint32_t>(is, path);
  std::vector<Record> records(count);
  for (auto& r : records) {
    const auto len = get<std::uint16_t>(is, path);
    r.name.resize(len);
    if (!is.read(r.name.data(), len)) throw std::runtime_error("truncated CNPK file " + path.string());
    const auto rank = get<std::uint8_t>(is, path);
    std::uint64_t n = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
      r.extents.push_back(get<std::uint32_t>(is, path));
      n *= r.extents.back();
    }
    r.values.resize(n);
    if (!is.read(reinterpret_cast<char*>(r.values.data()), static_cast<std::streamsize>(n * sizeof(float)))) {
      throw std::runtime_error("truncated CNPK file " + path.string());
    }
  }
  return records;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::vector<Record> records;
  for (const auto& [key, value] : ckpt.meta) records.push_back(meta_record(key, value));
  for (const auto& [name, t] : ckpt.params) records.push_back(to_record(name, t));
  for (const auto& [name, t] : ckpt.adam_m) records.push_back(to_record("adam.m." + name, t));
  for (const auto& [name, t] : ckpt.adam_v) records.push_back(to_record("adam.v." + name, t));
  write_records(path, records);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Checkpoint ckpt;
  for (auto& r : read_records(path)) {
    if (starts_with(r.name, "meta.")) {
      if (r.values.size() != 2) throw std::runtime_error("malformed metadata record " + r.name);
      const auto lo = std::bit_cast<std::uint32_t>(r.values[0]);
      const auto hi = std::bit_cast<std::uint32_t>(r.values[1]);
      ckpt.meta[r.name.substr(5)] = (static_cast<std::uint64_t>(hi) << 32) | lo;
    } else if (starts_with(r.name, "adam.m.")) {
      ckpt.adam_m.set(r.name.substr(7), to_tensor(r));
    } else if (starts_with(r.name, "adam.v.")) {
      ckpt.adam_v.set(r.name.substr(7), to_tensor(r));
    } else {
      ckpt.params.set(r.name, to_tensor(r));
    }
  }
  return ckpt;
}

void save_tensor(const std::filesystem::path& path, const std::string& name, const Tensor<float>& t) {
  write_records(path, {to_record(name, t)});
}

Tensor<float> load_tensor(const std::filesystem::path& path, const std::string& name) {
  for (const auto& r : read_records(path))
    if (r.name == name) return to_tensor(r);
  throw std::runtime_error("record '" + name + "' missing from " + path.string());
}

}  // namespace corrnet
