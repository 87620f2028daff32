#include "coco/image.hpp"

#include <png.h>

#include <cstdio>
#include <fstream>
#include <memory>

#include "coco/errors.hpp"

#include "json.hpp"

namespace coco {

void ImageU8::set(int row, int col, const Eigen::Vector3d& rgb01) {
  uint8_t* px = at(row, col);
  for (int c = 0; c < 3; ++c) {
    const double v = std::min(1.0, std::max(0.0, rgb01[c]));
    px[c] = uint8_t(std::lround(v * 255.0));
  }
}

Eigen::Vector3d ImageU8::get(int row, int col) const {
  const uint8_t* px = at(row, col);
  return {px[0] / 255.0, px[1] / 255.0, px[2] / 255.0};
}

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

// Reads any PNG as 8-bit; gray/palette/alpha inputs are expanded or stripped.
std::vector<uint8_t> read_png_rows(const std::string& path, int* width, int* height,
                                   bool want_rgb) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw io_error("read_png: cannot open '" + path + "'");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw io_error("read_png: libpng init failed");
  }
  std::vector<uint8_t> data;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw format_error("read_png: corrupt PNG '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_strip_16(png);
  png_set_packing(png);
  const png_byte color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (want_rgb && (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)) {
    png_set_gray_to_rgb(png);
  }
  if (!want_rgb && (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
                    color == PNG_COLOR_TYPE_PALETTE)) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);

  *width = int(png_get_image_width(png, info));
  *height = int(png_get_image_height(png, info));
  const int channels = want_rgb ? 3 : 1;
  data.resize(size_t(*width) * *height * channels);
  rows.resize(*height);
  for (int r = 0; r < *height; ++r) rows[r] = data.data() + size_t(r) * *width * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return data;
}

void write_png_rows(const std::string& path, const uint8_t* data, int width, int height,
                    int channels) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw io_error("write_png: cannot open '" + path + "' for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw io_error("write_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw io_error("write_png: write failed for '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(height);
  for (int r = 0; r < height; ++r) {
    rows[r] = const_cast<png_bytep>(data + size_t(r) * width * channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

ImageU8 read_png(const std::string& path) {
  ImageU8 img;
  img.pixels = read_png_rows(path, &img.width, &img.height, true);
  return img;
}

void write_png(const ImageU8& img, const std::string& path) {
  write_png_rows(path, img.pixels.data(), img.width, img.height, 3);
}

MaskU8 read_png_mask(const std::string& path) {
  MaskU8 mask;
  mask.pixels = read_png_rows(path, &mask.width, &mask.height, false);
  return mask;
}

void write_png_mask(const MaskU8& mask, const std::string& path) {
  write_png_rows(path, mask.pixels.data(), mask.width, mask.height, 1);
}

void write_float_buffer(const FloatBuffer& buf, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("write_float_buffer: cannot open '" + path + "'");
  out.write(reinterpret_cast<const char*>(buf.data.data()),
            std::streamsize(buf.data.size() * sizeof(float)));
  if (!out) throw io_error("write_float_buffer: write failed for '" + path + "'");

  nlohmann::json sidecar{{"width", buf.width}, {"height", buf.height}, {"channels", buf.channels}};
  std::ofstream js(path + ".json", std::ios::trunc);
  if (!js) throw io_error("write_float_buffer: cannot open '" + path + ".json'");
  js << sidecar.dump(2) << "\n";
}

FloatBuffer read_float_buffer(const std::string& path) {
  std::ifstream js(path + ".json");
  if (!js) throw io_error("read_float_buffer: missing sidecar '" + path + ".json'");
  nlohmann::json sidecar;
  try {
    js >> sidecar;
  } catch (const nlohmann::json::exception& e) {
    throw format_error("read_float_buffer: bad sidecar: " + std::string(e.what()));
  }
  FloatBuffer buf;
  buf.width = sidecar.at("width").get<int>();
  buf.height = sidecar.at("height").get<int>();
  buf.channels = sidecar.at("channels").get<int>();
  buf.data.resize(size_t(buf.width) * buf.height * buf.channels);

  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("read_float_buffer: cannot open '" + path + "'");
  in.read(reinterpret_cast<char*>(buf.data.data()),
          std::streamsize(buf.data.size() * sizeof(float)));
  if (in.gcount() != std::streamsize(buf.data.size() * sizeof(float))) {
    throw format_error("read_float_buffer: truncated payload in '" + path + "'");
  }
  return buf;
}

}  // namespace coco
