#include "tinyode/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <vector>

namespace tinyode {

namespace {

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open image " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

FloatTensor decode_png(const std::vector<unsigned char>& bytes, const std::string& what) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw ImageError(what + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> pixels(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw ImageError(what + ": " + msg);
  }
  const std::size_t h = img.height, w = img.width;
  FloatTensor out({3, h, w});
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t c = 0; c < 3; ++c) out[c * h * w + i] = pixels[i * 3 + c] / 255.0;
  return out;
}

class PpmReader {
 public:
  PpmReader(const std::vector<unsigned char>& b, std::string what) : b_(b), what_(std::move(what)) {}

  FloatTensor decode() {
    const bool binary = b_[1] == '6';
    pos_ = 2;
    const long w = number(), h = number(), maxval = number();
    if (w <= 0 || h <= 0) fail("non-positive dimensions");
    if (maxval <= 0 || maxval > 65535) fail("maxval must be in 1..65535");
    const std::size_t hw = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    FloatTensor out({3, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
    if (binary) {
      ++pos_;  // single whitespace after maxval
      const std::size_t width = maxval < 256 ? 1 : 2;
      if (b_.size() < pos_ + hw * 3 * width) fail("truncated pixel data");
      for (std::size_t i = 0; i < hw * 3; ++i) {
        const std::size_t at = pos_ + i * width;
        const long v = width == 1 ? b_[at] : (b_[at] << 8) | b_[at + 1];
        put(out, hw, i, v, maxval);
      }
    } else {
      for (std::size_t i = 0; i < hw * 3; ++i) put(out, hw, i, number(), maxval);
    }
    return out;
  }

 private:
  void put(FloatTensor& out, std::size_t hw, std::size_t i, long v, long maxval) {
    if (v > maxval) fail("sample exceeds maxval");
    out[(i % 3) * hw + i / 3] = static_cast<double>(v) / static_cast<double>(maxval);
  }

  long number() {
    for (;;) {
      while (pos_ < b_.size() && std::isspace(b_[pos_])) ++pos_;
      if (pos_ < b_.size() && b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
        continue;
      }
      break;
    }
    if (pos_ >= b_.size() || !std::isdigit(b_[pos_])) fail("malformed header or sample");
    long v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_++] - '0');
      if (v > 1'000'000) fail("number too large");
    }
    return v;
  }

  [[noreturn]] void fail(const std::string& msg) const { throw ImageError(what_ + ": " + msg); }

  const std::vector<unsigned char>& b_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace

FloatTensor load_image(const std::filesystem::path& path) {
  const std::vector<unsigned char> bytes = read_bytes(path);
  const std::string what = path.string();
  static constexpr unsigned char kPngSig[] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(std::begin(kPngSig), std::end(kPngSig), bytes.begin())) {
    return decode_png(bytes, what);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '6' || bytes[1] == '3')) {
    return PpmReader(bytes, what).decode();
  }
  throw ImageError(what + ": not a PNG or PPM (P3/P6) file");
}

FloatTensor load_image(const std::filesystem::path& path, std::size_t expected_size) {
  FloatTensor img = load_image(path);
  if (img.dim(1) != expected_size || img.dim(2) != expected_size) {
    throw ImageError(path.string() + ": image is " + std::to_string(img.dim(2)) + "x" + std::to_string(img.dim(1)) +
                     ", expected " + std::to_string(expected_size) + "x" + std::to_string(expected_size));
  }
  return img;
}

void save_ppm(const std::filesystem::path& path, const FloatTensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw ShapeError("save_ppm expects [3, H, W]");
  const std::size_t h = rgb.dim(1), w = rgb.dim(2), hw = h * w;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError("cannot write " + path.string());
  out << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<char> px(hw * 3);
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      px[i * 3 + c] = static_cast<char>(std::lround(std::clamp(rgb[c * hw + i], 0.0, 1.0) * 255.0));
  out.write(px.data(), static_cast<std::streamsize>(px.size()));
}

}  // namespace tinyode
