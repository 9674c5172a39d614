// Copyright 2026 The tensorpose Authors
// SPDX-License-Identifier: Apache-2.0

// Binary tensor checkpoints.
//
// Layout (all integers unsigned 32-bit little-endian, all reals IEEE-754
// float64 little-endian):
//
//   offset  size  field
//   0       4     magic "TPCK"
//   4       4     version (1)
//   8       4     kind: 1 = VMTensor3D, 2 = FeatureTensor3D, 3 = Tensor2DFactorized
//   12      12    dims[3]   (2D: width, height, 1)
//   24      4     rank
//   28      4     extra     (feature dim G for kind 2, channels for kind 3, else 0)
//   32      ...   payload
//
// Payload order follows in-memory storage (rank index innermost):
//   kind 1: vec[0], vec[1], vec[2], mat[0], mat[1], mat[2]
//   kind 2: the kind-1 payload, then basis[0], basis[1], basis[2] (R x G each)
//   kind 3: vx (C x W x R), vy (C x H x R)

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensorpose/tensorfield.hpp"

namespace tensorpose {

namespace detail {

inline constexpr std::uint32_t kCheckpointVersion = 1;
enum class CheckpointKind : std::uint32_t { kVM = 1, kFeature = 2, k2D = 3 };

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline void put_reals(std::ostream& os, const std::vector<double>& v) {
  std::vector<unsigned char> buf(v.size() * 8);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(v[i]);
    for (int k = 0; k < 8; ++k) buf[i * 8 + k] = static_cast<unsigned char>(bits >> (8 * k));
  }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline void get_reals(std::istream& is, std::vector<double>& v) {
  std::vector<unsigned char> buf(v.size() * 8);
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw std::runtime_error("checkpoint truncated");
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(buf[i * 8 + k]) << (8 * k);
    v[i] = std::bit_cast<double>(bits);
  }
}

struct CheckpointHeader {
  CheckpointKind kind{};
  std::array<std::uint32_t, 3> dims{};
  std::uint32_t rank = 0;
  std::uint32_t extra = 0;
};

inline void write_header(std::ostream& os, const CheckpointHeader& h) {
  os.write("TPCK", 4);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(h.kind));
  for (auto d : h.dims) put_u32(os, d);
  put_u32(os, h.rank);
  put_u32(os, h.extra);
}

inline CheckpointHeader read_header(std::istream& is, CheckpointKind expected) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "TPCK", 4) != 0)
    throw std::runtime_error("not a tensorpose checkpoint");
  if (get_u32(is) != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version");
  CheckpointHeader h;
  h.kind = static_cast<CheckpointKind>(get_u32(is));
  if (h.kind != expected) throw std::runtime_error("checkpoint holds a different tensor kind");
  for (auto& d : h.dims) d = get_u32(is);
  h.rank = get_u32(is);
  h.extra = get_u32(is);
  return h;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  return os;
}
inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  return is;
}

inline void write_vm_payload(std::ostream& os, const VMTensor3D& t) {
  for (const auto& v : t.vec) put_reals(os, v);
  for (const auto& m : t.mat) put_reals(os, m);
}
inline void read_vm_payload(std::istream& is, VMTensor3D& t) {
  for (auto& v : t.vec) get_reals(is, v);
  for (auto& m : t.mat) get_reals(is, m);
}

inline CheckpointHeader vm_header(CheckpointKind kind, const VMTensor3D& t, std::uint32_t extra) {
  return {kind,
          {static_cast<std::uint32_t>(t.dims[0]), static_cast<std::uint32_t>(t.dims[1]),
           static_cast<std::uint32_t>(t.dims[2])},
          static_cast<std::uint32_t>(t.rank),
          extra};
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const VMTensor3D& t) {
  auto os = detail::open_out(path);
  detail::write_header(os, detail::vm_header(detail::CheckpointKind::kVM, t, 0));
  detail::write_vm_payload(os, t);
}

inline void save_checkpoint(const std::string& path, const FeatureTensor3D& t) {
  auto os = detail::open_out(path);
  detail::write_header(os, detail::vm_header(detail::CheckpointKind::kFeature, t.comps,
                                             static_cast<std::uint32_t>(t.features)));
  detail::write_vm_payload(os, t.comps);
  for (const auto& b : t.basis) detail::put_reals(os, b);
}

inline void save_checkpoint(const std::string& path, const Tensor2DFactorized& t) {
  auto os = detail::open_out(path);
  detail::write_header(os, {detail::CheckpointKind::k2D,
                            {static_cast<std::uint32_t>(t.width),
                             static_cast<std::uint32_t>(t.height), 1},
                            static_cast<std::uint32_t>(t.rank),
                            static_cast<std::uint32_t>(t.channels)});
  detail::put_reals(os, t.vx);
  detail::put_reals(os, t.vy);
}

inline VMTensor3D load_vm_checkpoint(const std::string& path) {
  auto is = detail::open_in(path);
  const auto h = detail::read_header(is, detail::CheckpointKind::kVM);
  VMTensor3D t({h.dims[0], h.dims[1], h.dims[2]}, h.rank);
  detail::read_vm_payload(is, t);
  return t;
}

inline FeatureTensor3D load_feature_checkpoint(const std::string& path) {
  auto is = detail::open_in(path);
  const auto h = detail::read_header(is, detail::CheckpointKind::kFeature);
  FeatureTensor3D t({h.dims[0], h.dims[1], h.dims[2]}, h.rank, h.extra);
  detail::read_vm_payload(is, t.comps);
  for (auto& b : t.basis) detail::get_reals(is, b);
  return t;
}

inline Tensor2DFactorized load_2d_checkpoint(const std::string& path) {
  auto is = detail::open_in(path);
  const auto h = detail::read_header(is, detail::CheckpointKind::k2D);
  Tensor2DFactorized t(h.dims[0], h.dims[1], h.rank, h.extra);
  detail::get_reals(is, t.vx);
  detail::get_reals(is, t.vy);
  return t;
}

}  // namespace tensorpose
