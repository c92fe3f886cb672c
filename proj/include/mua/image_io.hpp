#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mua::io {

// 8-bit row-major interleaved pixel buffer; channels is 1 (gray) or 3 (RGB).
struct Image8 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

void write_png(const std::string& path, const Image8& img);
Image8 read_png(const std::string& path);  // throws ArtifactError / CorruptDataError

std::vector<std::uint8_t> encode_jpeg(const Image8& img, int quality);
Image8 decode_jpeg(const std::vector<std::uint8_t>& bytes);

}  // namespace mua::io
