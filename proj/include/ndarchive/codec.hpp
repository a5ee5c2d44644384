#pragma once

#include <algorithm>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "ndarchive/error.hpp"
#include "ndarchive/image.hpp"

namespace ndarchive {

enum class ImageFormat { unknown, png, jpeg };

inline ImageFormat sniff_format(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t png_magic[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (bytes.size() >= 8 && std::equal(png_magic, png_magic + 8, bytes.begin())) return ImageFormat::png;
  if (bytes.size() >= 3 && bytes[0] == 0xff && bytes[1] == 0xd8 && bytes[2] == 0xff) return ImageFormat::jpeg;
  return ImageFormat::unknown;
}

/// Decoded 8-bit RGB raster.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> data;
};

namespace detail {

inline RgbImage decode_png(std::span<const std::uint8_t> bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    fail(ErrorKind::invalid_input, std::string("png: ") + image.message);
  image.format = PNG_FORMAT_RGB;
  RgbImage out{image.width, image.height, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(image))};
  if (!png_image_finish_read(&image, nullptr, out.data.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(ErrorKind::invalid_input, std::string("png: ") + image.message);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

inline void jpeg_silence(j_common_ptr, int) {}

// The setjmp frames below hold no objects with non-trivial destructors
// between setjmp and a possible longjmp.
inline bool decode_jpeg_raw(std::span<const std::uint8_t> bytes, RgbImage& out, std::string& message) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  err.base.emit_message = jpeg_silence;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    message = err.message;
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = cinfo.output_width;
  out.height = cinfo.output_height;
  out.data.resize(out.width * out.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.data.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

inline bool encode_jpeg_raw(const std::uint8_t* gray, std::size_t width, std::size_t height, int quality,
                            unsigned char** buffer, unsigned long* size, std::string& message) {
  jpeg_compress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  err.base.emit_message = jpeg_silence;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    message = err.message;
    return false;
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, buffer, size);
  cinfo.image_width = static_cast<JDIMENSION>(width);
  cinfo.image_height = static_cast<JDIMENSION>(height);
  cinfo.input_components = 1;
  cinfo.in_color_space = JCS_GRAYSCALE;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    auto row = const_cast<JSAMPROW>(gray + static_cast<std::size_t>(cinfo.next_scanline) * width);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  return true;
}

inline std::vector<std::uint8_t> quantize(const ImageGray& img) {
  std::vector<std::uint8_t> out(img.pixels().size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.pixels()[i], 0.0, 1.0) * 255.0));
  return out;
}

}  // namespace detail

inline RgbImage decode_rgb(std::span<const std::uint8_t> bytes) {
  switch (sniff_format(bytes)) {
    case ImageFormat::png:
      return detail::decode_png(bytes);
    case ImageFormat::jpeg: {
      RgbImage out;
      std::string message;
      if (!detail::decode_jpeg_raw(bytes, out, message)) fail(ErrorKind::invalid_input, "jpeg: " + message);
      return out;
    }
    case ImageFormat::unknown:
      break;
  }
  fail(ErrorKind::invalid_input, "not a PNG or JPEG stream");
}

inline ImageGray decode_gray(std::span<const std::uint8_t> bytes) {
  const RgbImage rgb = decode_rgb(bytes);
  return to_grayscale(rgb.data, rgb.width, rgb.height);
}

/// 8-bit grayscale PNG.
inline std::vector<std::uint8_t> encode_png(const ImageGray& img) {
  const auto gray = detail::quantize(img);
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, gray.data(), 0, nullptr))
    fail(ErrorKind::io, std::string("png: ") + image.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, gray.data(), 0, nullptr))
    fail(ErrorKind::io, std::string("png: ") + image.message);
  out.resize(size);
  return out;
}

inline std::vector<std::uint8_t> encode_jpeg(const ImageGray& img, int quality = 85) {
  const auto gray = detail::quantize(img);
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  std::string message;
  const bool ok = detail::encode_jpeg_raw(gray.data(), img.width(), img.height(), quality, &buffer, &size, message);
  std::vector<std::uint8_t> out;
  if (ok) out.assign(buffer, buffer + size);
  std::free(buffer);
  if (!ok) fail(ErrorKind::io, "jpeg: " + message);
  return out;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline ImageGray load_gray(const std::filesystem::path& path) { return decode_gray(read_file(path)); }

}  // namespace ndarchive
