// SPDX-License-Identifier: Apache-2.0
#include "raterbayes/netpbm.hpp"

#include <cctype>

#include "raterbayes/error.hpp"
#include "raterbayes/io.hpp"

namespace raterbayes {

namespace {

class HeaderReader {
public:
  explicit HeaderReader(const std::string& b) : b_(b) {}

  std::string magic() {
    if (b_.size() < 2 || b_[0] != 'P') throw DataError("netpbm: missing magic number");
    pos_ = 2;
    return b_.substr(0, 2);
  }

  std::size_t number() {
    skip_space_and_comments();
    std::size_t v = 0;
    bool any = false;
    while (pos_ < b_.size() && std::isdigit(static_cast<unsigned char>(b_[pos_]))) {
      v = v * 10 + static_cast<std::size_t>(b_[pos_] - '0');
      if (v > (std::size_t{1} << 32)) throw DataError("netpbm: header value too large");
      ++pos_;
      any = true;
    }
    if (!any) throw DataError("netpbm: malformed header");
    return v;
  }

  // Exactly one whitespace byte separates the header from the raster.
  std::size_t raster_start() {
    if (pos_ >= b_.size() || !std::isspace(static_cast<unsigned char>(b_[pos_]))) {
      throw DataError("netpbm: malformed header");
    }
    return pos_ + 1;
  }

private:
  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(b_[pos_]))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& b_;
  std::size_t pos_ = 0;
};

void require_bytes(const std::string& b, std::size_t start, std::size_t n) {
  if (b.size() < start + n) throw DataError("netpbm: truncated raster");
}

} // namespace

std::string encode_pgm(const GrayImage& img) {
  if (img.px.size() != img.h * img.w) throw DataError("pgm: pixel count does not match extents");
  std::string out = "P5\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
  out.append(img.px.begin(), img.px.end());
  return out;
}

GrayImage decode_pgm(const std::string& bytes) {
  HeaderReader r(bytes);
  if (r.magic() != "P5") throw DataError("pgm: expected binary graymap (P5)");
  GrayImage img;
  img.w = r.number();
  img.h = r.number();
  const auto maxval = r.number();
  if (maxval == 0 || maxval > 255) throw DataError("pgm: only 8-bit graymaps are supported");
  const auto start = r.raster_start();
  require_bytes(bytes, start, img.h * img.w);
  img.px.assign(bytes.begin() + static_cast<long>(start),
                bytes.begin() + static_cast<long>(start + img.h * img.w));
  if (maxval != 255) {
    for (auto& v : img.px) {
      if (v > maxval) throw DataError("pgm: value exceeds maxval");
      v = static_cast<std::uint8_t>((v * 255 + maxval / 2) / maxval);
    }
  }
  return img;
}

std::string encode_pbm(const Mask& mask) {
  std::string out = "P4\n" + std::to_string(mask.w) + " " + std::to_string(mask.h) + "\n";
  const std::size_t row_bytes = (mask.w + 7) / 8;
  for (std::size_t y = 0; y < mask.h; ++y) {
    std::string row(row_bytes, '\0');
    for (std::size_t x = 0; x < mask.w; ++x) {
      if (mask.at(y, x)) row[x / 8] = static_cast<char>(row[x / 8] | (0x80 >> (x % 8)));
    }
    out += row;
  }
  return out;
}

Mask decode_mask(const std::string& bytes) {
  HeaderReader r(bytes);
  const auto magic = r.magic();
  if (magic == "P4") {
    const auto w = r.number();
    const auto h = r.number();
    const auto start = r.raster_start();
    const std::size_t row_bytes = (w + 7) / 8;
    require_bytes(bytes, start, row_bytes * h);
    Mask m(h, w);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const auto byte = static_cast<unsigned char>(bytes[start + y * row_bytes + x / 8]);
        m.px[y * w + x] = (byte >> (7 - x % 8)) & 1;
      }
    }
    return m;
  }
  if (magic == "P5") {
    const auto w = r.number();
    const auto h = r.number();
    const auto maxval = r.number();
    if (maxval == 0 || maxval > 255) throw DataError("mask: unsupported maxval");
    const auto start = r.raster_start();
    require_bytes(bytes, start, w * h);
    Mask m(h, w);
    for (std::size_t i = 0; i < w * h; ++i) {
      const auto v = static_cast<unsigned char>(bytes[start + i]);
      if (v != 0 && v != maxval) {
        throw DataError("mask: non-binary value " + std::to_string(v));
      }
      m.px[i] = v == 0 ? 0 : 1;
    }
    return m;
  }
  throw DataError("mask: expected P4 bitmap or P5 graymap, got " + magic);
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  write_file_atomic(path, encode_pgm(img));
}

GrayImage read_pgm(const std::filesystem::path& path) {
  try {
    return decode_pgm(read_file(path));
  } catch (const IoError&) {
    throw;
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_pbm(const std::filesystem::path& path, const Mask& mask) {
  write_file_atomic(path, encode_pbm(mask));
}

Mask read_mask(const std::filesystem::path& path) {
  try {
    return decode_mask(read_file(path));
  } catch (const IoError&) {
    throw;
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

} // namespace raterbayes
