// SPDX-License-Identifier: Apache-2.0
//
// Model checkpoint container.
//
//   magic        4 bytes   "RBAY"
//   version      u32       kCheckpointVersion
//   config       u64 depth, base_channels, head_features, num_classes,
//                input_channels; f64 dropout_rate; u32 site count, then
//                per site u32 length + bytes
//   tensors      u32 count, then per tensor:
//                u32 name length, name bytes, u32 rank, u64 extents...,
//                f64 values
//
// All integers and floats are little-endian. Values are stored bit-exactly.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "raterbayes/unet.hpp"

namespace raterbayes {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  UNetConfig config;
  std::vector<NamedTensor> tensors;

  const Tensor* find(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace raterbayes
