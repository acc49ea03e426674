#include "cpabaug/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

#include "cpabaug/errors.hpp"

namespace cpabaug {

namespace {

void check_size(int width, int height) {
  if (width < 0 || height < 0) throw ValidationError("image dimensions must be non-negative");
}

struct RawPgm {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bytes;
};

void write_raw(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

// Reads the next header token, skipping whitespace and '#' comments.
int header_int(std::istream& in, const std::filesystem::path& path) {
  int c = in.get();
  while (in) {
    if (c == '#') {
      while (in && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  std::string digits;
  while (in && std::isdigit(c)) {
    digits.push_back(static_cast<char>(c));
    c = in.get();
  }
  if (digits.empty() || digits.size() > 9) throw SchemaError("malformed PGM header in " + path.string());
  // `c` is the single whitespace byte that terminates the token.
  return std::stoi(digits);
}

RawPgm read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[2] = {};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '5') throw SchemaError(path.string() + " is not a binary PGM (P5)");
  RawPgm raw;
  raw.width = header_int(in, path);
  raw.height = header_int(in, path);
  const int maxval = header_int(in, path);
  if (maxval != 255) throw SchemaError(path.string() + ": only 8-bit PGM (maxval 255) is supported");
  raw.bytes.resize(static_cast<std::size_t>(raw.width) * raw.height);
  in.read(reinterpret_cast<char*>(raw.bytes.data()), static_cast<std::streamsize>(raw.bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.bytes.size())) {
    throw SchemaError(path.string() + ": truncated pixel data");
  }
  return raw;
}

}  // namespace

Image::Image(int width, int height, double fill) : width_(width), height_(height) {
  check_size(width, height);
  pixels_.assign(static_cast<std::size_t>(width) * height, std::clamp(fill, 0.0, 1.0));
}

Image::Image(int width, int height, std::vector<double> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  check_size(width, height);
  if (pixels_.size() != static_cast<std::size_t>(width) * height) {
    throw ShapeMismatch("pixel buffer does not match " + std::to_string(width) + "x" + std::to_string(height));
  }
  for (double& v : pixels_) {
    if (!std::isfinite(v)) throw ValidationError("image intensities must be finite");
    v = std::clamp(v, 0.0, 1.0);
  }
}

Mask::Mask(int width, int height, int fill) : width_(width), height_(height) {
  check_size(width, height);
  labels_.assign(static_cast<std::size_t>(width) * height, fill);
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

Image quantize8(const Image& img) {
  std::vector<double> px(img.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = to_byte(img.pixels()[i]) / 255.0;
  return Image(img.width(), img.height(), std::move(px));
}

void write_pgm(const std::filesystem::path& path, const Image& img) {
  std::vector<std::uint8_t> bytes(img.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(img.pixels()[i]);
  write_raw(path, img.width(), img.height(), bytes);
}

void write_pgm(const std::filesystem::path& path, const Mask& mask) {
  std::vector<std::uint8_t> bytes(mask.labels().size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const int v = mask.labels()[i];
    if (v < 0 || v > 255) throw ValidationError("mask label " + std::to_string(v) + " does not fit in 8 bits");
    bytes[i] = static_cast<std::uint8_t>(v);
  }
  write_raw(path, mask.width(), mask.height(), bytes);
}

void write_binary_pgm(const std::filesystem::path& path, const Mask& mask) {
  std::vector<std::uint8_t> bytes(mask.labels().size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.labels()[i] != 0 ? 255 : 0;
  write_raw(path, mask.width(), mask.height(), bytes);
}

Image read_pgm_image(const std::filesystem::path& path) {
  const RawPgm raw = read_raw(path);
  std::vector<double> px(raw.bytes.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = raw.bytes[i] / 255.0;
  return Image(raw.width, raw.height, std::move(px));
}

Mask read_pgm_mask(const std::filesystem::path& path) {
  const RawPgm raw = read_raw(path);
  Mask m(raw.width, raw.height);
  for (int r = 0; r < raw.height; ++r) {
    for (int c = 0; c < raw.width; ++c) m.set(r, c, raw.bytes[static_cast<std::size_t>(r) * raw.width + c]);
  }
  return m;
}

Mask read_binary_pgm(const std::filesystem::path& path) {
  Mask m = read_pgm_mask(path);
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) m.set(r, c, m.at(r, c) != 0 ? 1 : 0);
  }
  return m;
}

}  // namespace cpabaug
