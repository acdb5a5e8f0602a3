#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace depthlab::numgrid {

// Dense height x width x channels raster of doubles, row-major with the
// channel index fastest (pixel-interleaved).
class ImageGrid {
 public:
  ImageGrid() = default;
  ImageGrid(int height, int width, int channels, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  int pixels() const { return height_ * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int y, int x, int c = 0) {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  double at(int y, int x, int c = 0) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  double* pixel(int y, int x) {
    return data_.data() + (static_cast<std::size_t>(y) * width_ + x) * channels_;
  }
  const double* pixel(int y, int x) const {
    return data_.data() + (static_cast<std::size_t>(y) * width_ + x) * channels_;
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  bool same_shape(const ImageGrid& other) const {
    return height_ == other.height_ && width_ == other.width_ &&
           channels_ == other.channels_;
  }
  bool same_extent(int height, int width) const {
    return height_ == height && width_ == width;
  }
  bool all_finite() const;

  void fill(double value);
  bool operator==(const ImageGrid& other) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

inline constexpr int kIgnoreLabel = 255;

// Per-pixel integer class ids; kIgnoreLabel marks unlabeled pixels.
class LabelRaster {
 public:
  LabelRaster() = default;
  LabelRaster(int height, int width, int fill = 0);

  int height() const { return height_; }
  int width() const { return width_; }
  int pixels() const { return height_ * width_; }

  int& at(int y, int x) { return labels_[static_cast<std::size_t>(y) * width_ + x]; }
  int at(int y, int x) const { return labels_[static_cast<std::size_t>(y) * width_ + x]; }
  std::span<int> values() { return labels_; }
  std::span<const int> values() const { return labels_; }

  bool operator==(const LabelRaster& other) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<int> labels_;
};

// Binary per-pixel mask.
class Mask {
 public:
  Mask() = default;
  Mask(int height, int width, bool fill = false);

  int height() const { return height_; }
  int width() const { return width_; }
  int pixels() const { return height_ * width_; }

  bool at(int y, int x) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int y, int x, bool v) { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  void set(std::size_t i, bool v) { bits_[i] = v ? 1 : 0; }
  std::size_t count() const;
  Mask complement() const;

  bool operator==(const Mask& other) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

// Throws ConfigError naming `what` when the grids differ in shape.
void require_same_shape(const ImageGrid& a, const ImageGrid& b, const std::string& what);

// 2x nearest-neighbour upsampling and its adjoint (2x2 block sum).
ImageGrid upsample_nearest2(const ImageGrid& in);
ImageGrid downsum2(const ImageGrid& in);
// 2x2 box average; odd trailing rows/columns are dropped.
ImageGrid average_pool2(const ImageGrid& in);

}  // namespace depthlab::numgrid
