#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace coco {

// 8-bit RGB image, row-major, interleaved channels.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // height*width*3

  ImageU8() = default;
  ImageU8(int w, int h) : width(w), height(h), pixels(size_t(w) * h * 3, 0) {}

  uint8_t* at(int row, int col) { return &pixels[(size_t(row) * width + col) * 3]; }
  const uint8_t* at(int row, int col) const {
    return &pixels[(size_t(row) * width + col) * 3];
  }

  void set(int row, int col, const Eigen::Vector3d& rgb01);
  Eigen::Vector3d get(int row, int col) const;  // in [0,1]

  bool operator==(const ImageU8& o) const = default;
};

// Single-channel 8-bit mask (0 = background, 255 = foreground).
struct MaskU8 {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // height*width

  MaskU8() = default;
  MaskU8(int w, int h) : width(w), height(h), pixels(size_t(w) * h, 0) {}

  bool at(int row, int col) const { return pixels[size_t(row) * width + col] >= 128; }
  void set(int row, int col, bool fg) { pixels[size_t(row) * width + col] = fg ? 255 : 0; }

  bool operator==(const MaskU8& o) const = default;
};

ImageU8 read_png(const std::string& path);
void write_png(const ImageU8& img, const std::string& path);
MaskU8 read_png_mask(const std::string& path);
void write_png_mask(const MaskU8& mask, const std::string& path);

// Float buffer (e.g. depth or normals) stored as a raw little-endian float32
// file plus a JSON sidecar "<path>.json" holding width/height/channels.
struct FloatBuffer {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;  // height*width*channels, row-major

  float& at(int row, int col, int c) {
    return data[(size_t(row) * width + col) * channels + c];
  }
  float at(int row, int col, int c) const {
    return data[(size_t(row) * width + col) * channels + c];
  }
};

void write_float_buffer(const FloatBuffer& buf, const std::string& path);
FloatBuffer read_float_buffer(const std::string& path);

}  // namespace coco
