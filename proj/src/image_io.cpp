#include "edcnn/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace edcnn {

namespace {

class HeaderParser {
 public:
  HeaderParser(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) : bytes_(bytes), path_(path) {}

  long next_number(const char* what) {
    skip_space_and_comments();
    long v = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > 1'000'000'000) fail(std::string("implausible ") + what);
      ++digits;
    }
    if (digits == 0) fail(std::string("missing ") + what);
    return v;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail("missing separator before raster");
    return pos_ + 1;
  }

  [[noreturn]] void fail(const std::string& msg) const { throw ImageError(path_.string() + ": " + msg); }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<unsigned char>& bytes_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 2;
};

}  // namespace

Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  HeaderParser hp(bytes, path);
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') hp.fail("not a binary PGM (P5) file");
  const long width = hp.next_number("width");
  const long height = hp.next_number("height");
  const long maxval = hp.next_number("maxval");
  if (width <= 0 || height <= 0) hp.fail("empty image");
  if (maxval <= 0 || maxval > 65535) hp.fail("maxval " + std::to_string(maxval) + " outside 1..65535");
  const std::size_t start = hp.raster_start();
  const std::size_t bytes_per_sample = maxval > 255 ? 2 : 1;
  const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (bytes.size() < start + count * bytes_per_sample) hp.fail("raster truncated");

  Tensor img(Shape{1, 1, static_cast<int>(height), static_cast<int>(width)});
  float* p = img.ptr();
  const double denom = static_cast<double>(maxval);
  for (std::size_t i = 0; i < count; ++i) {
    unsigned v = bytes_per_sample == 2 ? (unsigned{bytes[start + 2 * i]} << 8) | bytes[start + 2 * i + 1] : bytes[start + i];
    if (v > static_cast<unsigned>(maxval)) hp.fail("sample exceeds maxval");
    p[i] = static_cast<float>(v / denom);
  }
  return img;
}

namespace {

std::uint16_t quantize16(float v) {
  const double clamped = std::clamp(static_cast<double>(v), 0.0, 1.0);
  // nearbyint honours the default round-to-nearest-even mode.
  return static_cast<std::uint16_t>(std::nearbyint(clamped * 65535.0));
}

}  // namespace

float quantize_unit(float v) { return static_cast<float>(quantize16(v) / 65535.0); }

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  if (image.n() != 1 || image.c() != 1) throw ImageError("write_pgm: expected a (1,1,h,w) image, got " + to_string(image.shape()));
  std::string header = "P5\n" + std::to_string(image.w()) + " " + std::to_string(image.h()) + "\n65535\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(out.size() + 2 * image.size());
  for (float v : image.data()) {
    const std::uint16_t q = quantize16(v);
    out.push_back(static_cast<unsigned char>(q >> 8));
    out.push_back(static_cast<unsigned char>(q & 0xff));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ImageError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw ImageError("write failed for " + path.string());
}

}  // namespace edcnn
