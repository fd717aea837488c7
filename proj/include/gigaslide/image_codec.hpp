#pragma once

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "gigaslide/error.hpp"
#include "gigaslide/raster.hpp"

namespace gigaslide::codec {

enum class TileFormat { png, jpeg };

inline TileFormat parse_format(const std::string& name) {
  if (name == "png") return TileFormat::png;
  if (name == "jpeg" || name == "jpg") return TileFormat::jpeg;
  fail(ErrorCode::validation, "unsupported tile format '" + name + "' (expected png or jpeg)");
}

inline std::string extension(TileFormat f) { return f == TileFormat::png ? "png" : "jpeg"; }

inline std::string content_type(TileFormat f) {
  return f == TileFormat::png ? "image/png" : "image/jpeg";
}

// ---- PNG -------------------------------------------------------------------

inline std::vector<std::uint8_t> encode_png(const Raster& img) {
  if (img.channels != 1 && img.channels != 3)
    fail(ErrorCode::validation, "png encoder supports 1 or 3 channels");
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  // One pass into a worst-case buffer; asking libpng for the exact size first
  // would compress the image twice.
  png_alloc_size_t size = PNG_IMAGE_PNG_SIZE_MAX(image);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
    fail(ErrorCode::io, std::string("png encode failed: ") + image.message);
  out.resize(size);
  return out;
}

/// Decodes any PNG into 8-bit RGB (or gray when `channels` is 1).
inline Raster decode_png(const std::vector<std::uint8_t>& bytes, int channels = 3) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    fail(ErrorCode::io, std::string("png decode failed: ") + image.message);
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Raster out(static_cast<int>(image.width), static_cast<int>(image.height), channels);
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(ErrorCode::io, std::string("png decode failed: ") + image.message);
  }
  return out;
}

// ---- JPEG ------------------------------------------------------------------

namespace detail {

struct JpegErrorMgr {
  jpeg_error_mgr base;
  char message[JMSG_LENGTH_MAX];
};

[[noreturn]] inline void jpeg_throw(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  throw Error(ErrorCode::io, std::string("jpeg: ") + err->message);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_jpeg(const Raster& img, int quality = 90) {
  jpeg_compress_struct cinfo{};
  detail::JpegErrorMgr jerr{};
  cinfo.err = jpeg_std_error(&jerr.base);
  jerr.base.error_exit = detail::jpeg_throw;
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  std::vector<std::uint8_t> out;
  try {
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &buffer, &size);
    cinfo.image_width = static_cast<JDIMENSION>(img.width);
    cinfo.image_height = static_cast<JDIMENSION>(img.height);
    cinfo.input_components = img.channels;
    cinfo.in_color_space = img.channels == 3 ? JCS_RGB : JCS_GRAYSCALE;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    while (cinfo.next_scanline < cinfo.image_height) {
      auto* row = const_cast<std::uint8_t*>(img.pixels.data() + img.index(0, static_cast<int>(cinfo.next_scanline)));
      jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    out.assign(buffer, buffer + size);
  } catch (...) {
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    throw;
  }
  jpeg_destroy_compress(&cinfo);
  std::free(buffer);
  return out;
}

inline Raster decode_jpeg(const std::vector<std::uint8_t>& bytes) {
  jpeg_decompress_struct cinfo{};
  detail::JpegErrorMgr jerr{};
  cinfo.err = jpeg_std_error(&jerr.base);
  jerr.base.error_exit = detail::jpeg_throw;
  Raster out;
  try {
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    out = Raster(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height), 3);
    while (cinfo.output_scanline < cinfo.output_height) {
      auto* row = out.pixels.data() + out.index(0, static_cast<int>(cinfo.output_scanline));
      jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
  } catch (...) {
    jpeg_destroy_decompress(&cinfo);
    throw;
  }
  jpeg_destroy_decompress(&cinfo);
  return out;
}

// ---- PPM/PGM (binary) --------------------------------------------------------

inline std::vector<std::uint8_t> encode_pnm(const Raster& img) {
  const std::string header = std::string(img.channels == 3 ? "P6" : "P5") + "\n" +
                             std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline Raster decode_pnm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space();
    long value = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      value = value * 10 + (bytes[pos++] - '0');
      any = true;
      if (value > (1L << 30)) break;
    }
    if (!any) fail(ErrorCode::io, "malformed pnm header");
    return static_cast<int>(value);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5'))
    fail(ErrorCode::io, "not a binary pnm file");
  const int channels = bytes[1] == '6' ? 3 : 1;
  pos = 2;
  const int w = read_int();
  const int h = read_int();
  const int maxval = read_int();
  if (maxval != 255) fail(ErrorCode::io, "only 8-bit pnm is supported");
  ++pos;  // single whitespace after maxval
  Raster out(w, h, channels);
  if (bytes.size() < pos + out.pixels.size()) fail(ErrorCode::io, "truncated pnm data");
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), out.pixels.size(), out.pixels.begin());
  if (channels == 1) {
    Raster rgb(w, h, 3);
    for (std::size_t i = 0; i < out.pixels.size(); ++i)
      rgb.pixels[3 * i] = rgb.pixels[3 * i + 1] = rgb.pixels[3 * i + 2] = out.pixels[i];
    return rgb;
  }
  return out;
}

// ---- files -----------------------------------------------------------------

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot read " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::io, "short write to " + path.string());
}

inline std::vector<std::uint8_t> encode(const Raster& img, TileFormat format) {
  return format == TileFormat::png ? encode_png(img) : encode_jpeg(img);
}

/// Sniffs the container from magic bytes; always returns 3-channel RGB.
inline Raster decode(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return decode_png(bytes);
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) return decode_jpeg(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P') return decode_pnm(bytes);
  fail(ErrorCode::io, "unrecognized image encoding");
}

inline Raster read_image(const std::filesystem::path& path) { return decode(read_file(path)); }

/// Writes by extension: .png, .jpg/.jpeg, .ppm/.pnm.
inline void write_image(const std::filesystem::path& path, const Raster& img) {
  const auto ext = path.extension().string();
  if (ext == ".png") return write_file(path, encode_png(img));
  if (ext == ".jpg" || ext == ".jpeg") return write_file(path, encode_jpeg(img));
  if (ext == ".ppm" || ext == ".pnm" || ext == ".pgm") return write_file(path, encode_pnm(img));
  fail(ErrorCode::validation, "unsupported image extension '" + ext + "'");
}

}  // namespace gigaslide::codec
