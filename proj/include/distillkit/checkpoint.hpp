// Copyright (c) 2026 distillkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "distillkit/errors.hpp"
#include "distillkit/tensor.hpp"

namespace distillkit {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

// Checkpoint container format "DKD1", version 1. Little-endian throughout:
//
//   magic   4 bytes "DKD1"
//   u32     format version (1)
//   u64     config length, then that many bytes of JSON
//   u64     tensor count
//   per tensor:
//     u64   name length, then name bytes
//     u8    dtype tag (0 = f64)
//     u64   rank, then u64 extents[rank]
//     f64   values[numel]
//   u64     completed steps
//   u64     rng key, u64 rng counter
//
// Optimizer state travels in the same tensor table under the names
// "adam.m.<param>" and "adam.v.<param>".
inline constexpr char kCheckpointMagic[4] = {'D', 'K', 'D', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::string config_json;
  std::vector<TensorEntry> tensors;
  std::uint64_t step = 0;
  std::uint64_t rng_key = 0;
  std::uint64_t rng_counter = 0;

  const TensorEntry* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
};

namespace detail {

inline void put_bytes(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void put_u32(std::ofstream& out, std::uint32_t v) {
  put_bytes(out, &v, 4);
}

inline void put_u64(std::ofstream& out, std::uint64_t v) {
  put_bytes(out, &v, 8);
}

inline void put_str(std::ofstream& out, const std::string& s) {
  put_u64(out, s.size());
  put_bytes(out, s.data(), s.size());
}

struct CkptReader {
  std::ifstream in;
  std::string where;

  void take(void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
      throw ParseError("checkpoint " + where + ": truncated");
    }
  }

  std::uint32_t u32() {
    std::uint32_t v;
    take(&v, 4);
    return v;
  }

  std::uint64_t u64() {
    std::uint64_t v;
    take(&v, 8);
    return v;
  }

  std::string str(std::uint64_t cap) {
    std::uint64_t n = u64();
    if (n > cap) throw ParseError("checkpoint " + where + ": string overruns");
    std::string s(n, '\0');
    take(s.data(), n);
    return s;
  }
};

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path,
                            const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  detail::put_bytes(out, kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_str(out, ckpt.config_json);
  detail::put_u64(out, ckpt.tensors.size());
  for (const auto& t : ckpt.tensors) {
    detail::put_str(out, t.name);
    unsigned char dtype = 0;
    detail::put_bytes(out, &dtype, 1);
    detail::put_u64(out, t.shape.size());
    for (std::size_t e : t.shape) detail::put_u64(out, e);
    if (t.values.size() != shape_numel(t.shape)) {
      throw ContractError("checkpoint tensor '" + t.name +
                          "': value count does not match shape");
    }
    detail::put_bytes(out, t.values.data(), t.values.size() * sizeof(double));
  }
  detail::put_u64(out, ckpt.step);
  detail::put_u64(out, ckpt.rng_key);
  detail::put_u64(out, ckpt.rng_counter);
  out.flush();
  if (!out) throw IoError("short write to checkpoint '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  detail::CkptReader r{std::ifstream(path, std::ios::binary),
                       "'" + path.string() + "'"};
  if (!r.in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::uintmax_t file_size = std::filesystem::file_size(path);
  char magic[4];
  r.take(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw ParseError("checkpoint " + r.where + ": bad magic");
  }
  std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw ParseError("checkpoint " + r.where + ": unsupported version " +
                     std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.config_json = r.str(file_size);
  std::uint64_t count = r.u64();
  ckpt.tensors.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    TensorEntry t;
    t.name = r.str(file_size);
    unsigned char dtype;
    r.take(&dtype, 1);
    if (dtype != 0) {
      throw ParseError("checkpoint " + r.where + ": tensor '" + t.name +
                       "' has unknown dtype tag " + std::to_string(dtype));
    }
    std::uint64_t rank = r.u64();
    if (rank > 8) {
      throw ParseError("checkpoint " + r.where + ": tensor '" + t.name +
                       "' has implausible rank");
    }
    t.shape.resize(rank);
    for (auto& e : t.shape) e = r.u64();
    std::size_t numel = shape_numel(t.shape);
    if (numel * sizeof(double) > file_size) {
      throw ParseError("checkpoint " + r.where + ": tensor '" + t.name +
                       "' overruns file");
    }
    t.values.resize(numel);
    r.take(t.values.data(), numel * sizeof(double));
    ckpt.tensors.push_back(std::move(t));
  }
  ckpt.step = r.u64();
  ckpt.rng_key = r.u64();
  ckpt.rng_counter = r.u64();
  return ckpt;
}

}  // namespace distillkit
