#include "diffpad/io.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

#include "diffpad/error.hpp"

namespace diffpad {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::kIoError, "read failed: " + path.string());
  return std::move(ss).str();
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::kIoError, "write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::kIoError, "cannot rename onto " + path.string());
  }
}

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kIoError, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 15]);
  }
  return out;
}

namespace {

struct PngImage {
  png_image img{};
  PngImage() { img.version = PNG_IMAGE_VERSION; }
  ~PngImage() { png_image_free(&img); }
};

}  // namespace

Image decode_png(std::string_view bytes, const std::string& name) {
  PngImage p;
  if (!png_image_begin_read_from_memory(&p.img, bytes.data(), bytes.size())) {
    throw Error(ErrorCode::kDecodeError, name + ": " + p.img.message);
  }
  const bool color = (p.img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  p.img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int channels = color ? 3 : 1;
  const auto h = static_cast<int>(p.img.height);
  const auto w = static_cast<int>(p.img.width);
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(p.img));
  if (!png_image_finish_read(&p.img, nullptr, buf.data(), 0, nullptr)) {
    throw Error(ErrorCode::kDecodeError, name + ": " + p.img.message);
  }
  Image out(Shape{channels, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        out.at(c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * channels + c] / 255.0;
  return out;
}

std::string encode_png(const Image& image) {
  const int channels = image.channels();
  if (channels != 1 && channels != 3) {
    throw Error(ErrorCode::kShapeMismatch,
                "PNG needs 1 or 3 channels, got " + std::to_string(channels));
  }
  const int h = image.height();
  const int w = image.width();
  std::vector<png_byte> buf(static_cast<std::size_t>(h) * w * channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) {
        const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
        buf[(static_cast<std::size_t>(y) * w + x) * channels + c] =
            static_cast<png_byte>(std::lround(v * 255.0));
      }
  PngImage p;
  p.img.width = static_cast<png_uint_32>(w);
  p.img.height = static_cast<png_uint_32>(h);
  p.img.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&p.img, nullptr, &size, 0, buf.data(), 0, nullptr)) {
    throw Error(ErrorCode::kIoError, std::string("png encode: ") + p.img.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&p.img, out.data(), &size, 0, buf.data(), 0, nullptr)) {
    throw Error(ErrorCode::kIoError, std::string("png encode: ") + p.img.message);
  }
  out.resize(size);
  return out;
}

Image load_image(const fs::path& path) { return decode_png(read_file(path), path.string()); }

void save_image(const Image& image, const fs::path& path) {
  write_file_atomic(path, encode_png(image));
}

}  // namespace diffpad
