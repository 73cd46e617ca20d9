// SPDX-License-Identifier: Apache-2.0
//
// Binary netpbm images: 8-bit graymaps (P5) and bitmaps (P4).
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "raterbayes/mask.hpp"

namespace raterbayes {

struct GrayImage {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::uint8_t> px;  // row-major
};

std::string encode_pgm(const GrayImage& img);
GrayImage decode_pgm(const std::string& bytes);

/// P4 with foreground as 1 (black), rows padded to whole bytes.
std::string encode_pbm(const Mask& mask);

/// Accepts P4, or P5 whose values are all 0 or maxval. Any other value is a
/// DataError.
Mask decode_mask(const std::string& bytes);

void write_pgm(const std::filesystem::path& path, const GrayImage& img);
GrayImage read_pgm(const std::filesystem::path& path);
void write_pbm(const std::filesystem::path& path, const Mask& mask);
Mask read_mask(const std::filesystem::path& path);

} // namespace raterbayes
