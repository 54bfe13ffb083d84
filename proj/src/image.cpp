#include "vlur/image/image.hpp"

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

#include <jpeglib.h>

namespace vlur::img {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

bool has_suffix(const std::string& s, const char* suf) {
  const size_t n = std::strlen(suf);
  if (s.size() < n) return false;
  for (size_t i = 0; i < n; ++i) {
    char a = s[s.size() - n + i];
    if (a >= 'A' && a <= 'Z') a = static_cast<char>(a - 'A' + 'a');
    if (a != suf[i]) return false;
  }
  return true;
}

Tensorf from_rgb8(const std::vector<unsigned char>& buf, int64_t h, int64_t w) {
  Tensorf out(Shape{h, w, 3});
  const float inv = 1.0f / 255.0f;
  for (int64_t i = 0; i < h * w * 3; ++i) out[i] = static_cast<float>(buf[static_cast<size_t>(i)]) * inv;
  return out;
}

Tensorf read_png_file(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png read init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png info init failed");
  }
  std::vector<unsigned char> buf;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("failed to decode PNG " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  buf.resize(static_cast<size_t>(w) * h * 3);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = buf.data() + static_cast<size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return from_rgb8(buf, h, w);
}

struct JpegErrorMgr {
  jpeg_error_mgr mgr;
  jmp_buf jmp;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  JpegErrorMgr* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  longjmp(err->jmp, 1);
}

Tensorf read_jpeg_file(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path);
  jpeg_decompress_struct cinfo;
  JpegErrorMgr jerr;
  cinfo.err = jpeg_std_error(&jerr.mgr);
  jerr.mgr.error_exit = jpeg_error_exit;
  if (setjmp(jerr.jmp)) {
    jpeg_destroy_decompress(&cinfo);
    throw DataError("failed to decode JPEG " + path);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, fp.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const int64_t w = cinfo.output_width;
  const int64_t h = cinfo.output_height;
  std::vector<unsigned char> buf(static_cast<size_t>(w) * h * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    unsigned char* rowp = buf.data() + static_cast<size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &rowp, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_rgb8(buf, h, w);
}

}  // namespace

Tensorf read_image(const std::string& path) {
  if (has_suffix(path, ".jpg") || has_suffix(path, ".jpeg")) return read_jpeg_file(path);
  return read_png_file(path);
}

void write_png(const std::string& path, const Tensorf& image) {
  check_image(image, "write_png");
  const int64_t h = image.dim(0), w = image.dim(1);
  std::vector<unsigned char> buf(static_cast<size_t>(h) * w * 3);
  for (int64_t i = 0; i < h * w * 3; ++i) {
    const float v = clampf(image[i], 0.0f, 1.0f);
    buf[static_cast<size_t>(i)] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png write init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png write info init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed to encode PNG " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int64_t y = 0; y < h; ++y) rows[static_cast<size_t>(y)] = buf.data() + y * w * 3;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

float clampf(float v, float lo, float hi) { return v < lo ? lo : (v > hi ? hi : v); }

Tensorf clamp01(const Tensorf& image) {
  Tensorf out = image;
  for (auto& v : out.data) v = clampf(v, 0.0f, 1.0f);
  return out;
}

Tensorf quantize8(const Tensorf& image) {
  Tensorf out = image;
  for (auto& v : out.data)
    v = static_cast<float>(std::lround(clampf(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
  return out;
}

Tensorf resize_bilinear(const Tensorf& image, int64_t oh, int64_t ow) {
  check_image(image, "resize_bilinear");
  const int64_t h = image.dim(0), w = image.dim(1);
  Tensorf out(Shape{oh, ow, 3});
  for (int64_t y = 0; y < oh; ++y) {
    const double fy = oh > 1 ? static_cast<double>(y) * (h - 1) / (oh - 1) : 0.0;
    const int64_t y0 = static_cast<int64_t>(fy);
    const int64_t y1 = y0 + 1 < h ? y0 + 1 : y0;
    const float ty = static_cast<float>(fy - static_cast<double>(y0));
    for (int64_t x = 0; x < ow; ++x) {
      const double fx = ow > 1 ? static_cast<double>(x) * (w - 1) / (ow - 1) : 0.0;
      const int64_t x0 = static_cast<int64_t>(fx);
      const int64_t x1 = x0 + 1 < w ? x0 + 1 : x0;
      const float tx = static_cast<float>(fx - static_cast<double>(x0));
      for (int64_t c = 0; c < 3; ++c) {
        const float a = image.at(y0, x0, c) * (1 - tx) + image.at(y0, x1, c) * tx;
        const float b = image.at(y1, x0, c) * (1 - tx) + image.at(y1, x1, c) * tx;
        out.at(y, x, c) = a * (1 - ty) + b * ty;
      }
    }
  }
  return out;
}

Tensorf pad_to_multiple_reflect(const Tensorf& image, int64_t multiple) {
  check_image(image, "pad_to_multiple_reflect");
  const int64_t h = image.dim(0), w = image.dim(1);
  const int64_t ph = (multiple - h % multiple) % multiple;
  const int64_t pw = (multiple - w % multiple) % multiple;
  if (ph == 0 && pw == 0) return image;
  const int64_t oh = h + ph, ow = w + pw;
  Tensorf out(Shape{oh, ow, 3});
  auto reflect = [](int64_t i, int64_t n) {
    // reflect without repeating the border pixel; degenerate sizes clamp
    if (n == 1) return int64_t{0};
    while (i < 0 || i >= n) {
      if (i >= n) i = 2 * n - 2 - i;
      if (i < 0) i = -i;
    }
    return i;
  };
  for (int64_t y = 0; y < oh; ++y) {
    const int64_t sy = reflect(y, h);
    for (int64_t x = 0; x < ow; ++x) {
      const int64_t sx = reflect(x, w);
      for (int64_t c = 0; c < 3; ++c) out.at(y, x, c) = image.at(sy, sx, c);
    }
  }
  return out;
}

Tensorf crop(const Tensorf& image, int64_t y0, int64_t x0, int64_t h, int64_t w) {
  check_image(image, "crop");
  if (y0 < 0 || x0 < 0 || y0 + h > image.dim(0) || x0 + w > image.dim(1))
    throw ShapeError("crop: window out of bounds");
  Tensorf out(Shape{h, w, 3});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) out.at(y, x, c) = image.at(y0 + y, x0 + x, c);
  return out;
}

double mean_value(const Tensorf& image) {
  double s = 0;
  for (float v : image.data) s += v;
  return s / static_cast<double>(image.numel());
}

}  // namespace vlur::img
