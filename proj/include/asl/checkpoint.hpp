#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "asl/layers.hpp"

namespace asl {

// Checkpoint layout, all integers little-endian:
//   bytes 0..7   magic "ASLCKPT1"
//   u32          entry count
//   per entry    u16 name length, name bytes, u8 dtype, u8 ndim, u32 dims[ndim]
//   then         raw element data per entry, in manifest order
inline constexpr char kCheckpointMagic[8] = {'A', 'S', 'L', 'C', 'K', 'P', 'T', '1'};

struct CheckpointEntry {
  std::string name;
  DType dtype = DType::Float32;
  std::vector<std::uint32_t> dims;
  std::vector<std::byte> bytes;

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

namespace detail {

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::Float32: return 4;
    case DType::Float64: return 8;
    case DType::Int64: return 8;
  }
  return 0;
}

template <typename T>
void write_le(std::ostream& os, T v) {
  // Build is little-endian x86; byte copy is the wire format.
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, std::uint64_t& offset) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is)
    throw FormatError("checkpoint truncated at byte offset " + std::to_string(offset));
  offset += sizeof(T);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path,
                            const std::vector<CheckpointEntry>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_le<std::uint32_t>(os, std::uint32_t(entries.size()));
  for (const auto& e : entries) {
    detail::write_le<std::uint16_t>(os, std::uint16_t(e.name.size()));
    os.write(e.name.data(), std::streamsize(e.name.size()));
    detail::write_le<std::uint8_t>(os, std::uint8_t(e.dtype));
    detail::write_le<std::uint8_t>(os, std::uint8_t(e.dims.size()));
    for (auto d : e.dims) detail::write_le<std::uint32_t>(os, d);
  }
  for (const auto& e : entries)
    os.write(reinterpret_cast<const char*>(e.bytes.data()), std::streamsize(e.bytes.size()));
  if (!os) throw FormatError("short write while saving checkpoint: " + path);
}

inline std::vector<CheckpointEntry> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint: " + path);
  std::uint64_t offset = 0;

  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw FormatError("not an ASLCKPT1 checkpoint: " + path);
  offset = 8;

  const auto count = detail::read_le<std::uint32_t>(is, offset);
  std::vector<CheckpointEntry> entries(count);
  for (auto& e : entries) {
    const auto name_len = detail::read_le<std::uint16_t>(is, offset);
    e.name.resize(name_len);
    is.read(e.name.data(), name_len);
    if (!is) throw FormatError("checkpoint truncated at byte offset " + std::to_string(offset));
    offset += name_len;
    const auto dtype = detail::read_le<std::uint8_t>(is, offset);
    if (dtype > 2)
      throw FormatError("unknown dtype tag " + std::to_string(dtype) + " at byte offset " +
                        std::to_string(offset - 1));
    e.dtype = DType(dtype);
    const auto ndim = detail::read_le<std::uint8_t>(is, offset);
    e.dims.resize(ndim);
    for (auto& d : e.dims) d = detail::read_le<std::uint32_t>(is, offset);
  }
  for (auto& e : entries) {
    e.bytes.resize(e.element_count() * detail::dtype_size(e.dtype));
    is.read(reinterpret_cast<char*>(e.bytes.data()), std::streamsize(e.bytes.size()));
    if (!is) throw FormatError("checkpoint data truncated at byte offset " +
                               std::to_string(offset));
    offset += e.bytes.size();
  }
  return entries;
}

template <typename Scalar>
CheckpointEntry to_entry(const ParamRef<Scalar>& p) {
  CheckpointEntry e;
  e.name = p.name;
  e.dtype = dtype_of<Scalar>();
  for (Index d : p.dims) e.dims.push_back(std::uint32_t(d));
  e.bytes.resize(std::size_t(p.size) * sizeof(Scalar));
  std::memcpy(e.bytes.data(), p.value, e.bytes.size());
  return e;
}

inline CheckpointEntry scalar_entry(const std::string& name, std::int64_t v) {
  CheckpointEntry e;
  e.name = name;
  e.dtype = DType::Int64;
  e.dims = {1};
  e.bytes.resize(8);
  std::memcpy(e.bytes.data(), &v, 8);
  return e;
}

/// Copies a stored entry into a live parameter; shapes and dtype must match.
template <typename Scalar>
void restore_into(const CheckpointEntry& e, const ParamRef<Scalar>& p) {
  if (e.dtype != dtype_of<Scalar>())
    throw FormatError("checkpoint entry '" + e.name + "' has dtype " +
                      dtype_name(e.dtype) + ", expected " +
                      dtype_name(dtype_of<Scalar>()));
  if (std::int64_t(e.element_count()) != p.size)
    throw ShapeError("checkpoint entry '" + e.name + "' holds " +
                     std::to_string(e.element_count()) + " elements, parameter expects " +
                     std::to_string(p.size));
  std::memcpy(p.value, e.bytes.data(), e.bytes.size());
}

}  // namespace asl
