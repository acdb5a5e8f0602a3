#include "depthlab/numgrid/image_grid.hpp"

#include <algorithm>
#include <cmath>

#include "depthlab/errors.hpp"

namespace depthlab::numgrid {

ImageGrid::ImageGrid(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 0 || width < 0 || channels < 0) {
    throw ConfigError("ImageGrid: negative dimension");
  }
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

bool ImageGrid::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void ImageGrid::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

LabelRaster::LabelRaster(int height, int width, int fill) : height_(height), width_(width) {
  if (height < 0 || width < 0) throw ConfigError("LabelRaster: negative dimension");
  labels_.assign(static_cast<std::size_t>(height) * width, fill);
}

Mask::Mask(int height, int width, bool fill) : height_(height), width_(width) {
  if (height < 0 || width < 0) throw ConfigError("Mask: negative dimension");
  bits_.assign(static_cast<std::size_t>(height) * width, fill ? 1 : 0);
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

Mask Mask::complement() const {
  Mask out = *this;
  for (auto& b : out.bits_) b = b ? 0 : 1;
  return out;
}

void require_same_shape(const ImageGrid& a, const ImageGrid& b, const std::string& what) {
  if (!a.same_shape(b)) {
    throw ConfigError(what + ": shape mismatch (" + std::to_string(a.height()) + "x" +
                      std::to_string(a.width()) + "x" + std::to_string(a.channels()) + " vs " +
                      std::to_string(b.height()) + "x" + std::to_string(b.width()) + "x" +
                      std::to_string(b.channels()) + ")");
  }
}

ImageGrid upsample_nearest2(const ImageGrid& in) {
  const int c = in.channels();
  ImageGrid out(in.height() * 2, in.width() * 2, c);
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      std::copy_n(in.pixel(y / 2, x / 2), c, out.pixel(y, x));
    }
  }
  return out;
}

ImageGrid downsum2(const ImageGrid& in) {
  const int c = in.channels();
  ImageGrid out(in.height() / 2, in.width() / 2, c);
  for (int y = 0; y < in.height(); ++y) {
    for (int x = 0; x < in.width(); ++x) {
      const double* src = in.pixel(y, x);
      double* dst = out.pixel(y / 2, x / 2);
      for (int k = 0; k < c; ++k) dst[k] += src[k];
    }
  }
  return out;
}

ImageGrid average_pool2(const ImageGrid& in) {
  const int c = in.channels();
  ImageGrid out(in.height() / 2, in.width() / 2, c);
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      double* dst = out.pixel(y, x);
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const double* src = in.pixel(2 * y + dy, 2 * x + dx);
          for (int k = 0; k < c; ++k) dst[k] += 0.25 * src[k];
        }
      }
    }
  }
  return out;
}

}  // namespace depthlab::numgrid
