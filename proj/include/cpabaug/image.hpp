#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace cpabaug {

/// Grayscale image, row-major, intensities clamped to [0, 1].
class Image {
 public:
  Image() = default;
  Image(int width, int height, double fill = 0.0);
  Image(int width, int height, std::vector<double> pixels);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return pixels_.size(); }

  double at(int row, int col) const { return pixels_[static_cast<std::size_t>(row) * width_ + col]; }
  /// Unclamped write; callers keep values in [0, 1].
  void set(int row, int col, double v) { pixels_[static_cast<std::size_t>(row) * width_ + col] = v; }

  const std::vector<double>& pixels() const { return pixels_; }

  bool operator==(const Image&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> pixels_;
};

/// Integer label map, row-major; 0 is background.
class Mask {
 public:
  Mask() = default;
  Mask(int width, int height, int fill = 0);

  int width() const { return width_; }
  int height() const { return height_; }
  int at(int row, int col) const { return labels_[static_cast<std::size_t>(row) * width_ + col]; }
  void set(int row, int col, int v) { labels_[static_cast<std::size_t>(row) * width_ + col] = v; }
  const std::vector<int>& labels() const { return labels_; }

  bool operator==(const Mask&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<int> labels_;
};

/// 8-bit quantization used by the PGM writer: round(v * 255).
std::uint8_t to_byte(double v);

/// Image whose intensities are snapped to the 8-bit grid, i.e. equal to
/// what a PGM write followed by a read returns.
Image quantize8(const Image& img);

// Binary P5 PGM, maxval 255. Intensities map linearly [0,1] <-> [0,255];
// label masks store the label value directly (0..255).
void write_pgm(const std::filesystem::path& path, const Image& img);
void write_pgm(const std::filesystem::path& path, const Mask& mask);
/// Binary mask written as 0/255.
void write_binary_pgm(const std::filesystem::path& path, const Mask& mask);

Image read_pgm_image(const std::filesystem::path& path);
Mask read_pgm_mask(const std::filesystem::path& path);
/// Reads a 0/255 mask as 0/1.
Mask read_binary_pgm(const std::filesystem::path& path);

}  // namespace cpabaug
