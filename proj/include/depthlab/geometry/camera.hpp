#pragma once

#include <array>
#include <vector>

#include <nlohmann/json.hpp>

#include "depthlab/numgrid/image_grid.hpp"

namespace depthlab::geometry {

using numgrid::ImageGrid;
using numgrid::Mask;

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

struct Intrinsics {
  double fx = 32.0;
  double fy = 32.0;
  double cx = 31.5;
  double cy = 15.5;

  void validate() const;
  // Intrinsics of the same camera at 1/factor resolution (pixel centres kept
  // consistent: c' = (c + 0.5) / factor - 0.5).
  Intrinsics scaled(double factor) const;
};

// Rigid transform p' = R p + t.
struct Pose {
  Mat3 rotation{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  Vec3 translation{0, 0, 0};

  static Pose identity() { return {}; }
  static Pose from_yaw_translation(double yaw, const Vec3& t);

  Vec3 apply(const Vec3& p) const;
  Pose inverse() const;
  // (this * other)(p) = this(other(p)).
  Pose compose(const Pose& other) const;
  // Throws ConfigError unless R^T R = I and det R = +1 within tol.
  void validate(double tol = 1e-9) const;

  // Row-major 3x4 [R | t].
  std::array<double, 12> to_row_major() const;
  static Pose from_row_major(const std::array<double, 12>& m);
};

enum class DepthKind { kDepth, kDisparity };

// Per-pixel depth (scene units) or normalized disparity in (0,1), with a
// validity flag. Which one is authoritative is carried in `kind`; conversion
// is explicit through disparity_to_depth / depth_to_disparity.
struct DepthRaster {
  int height = 0;
  int width = 0;
  DepthKind kind = DepthKind::kDepth;
  std::vector<double> values;
  std::vector<std::uint8_t> valid;

  DepthRaster() = default;
  DepthRaster(int h, int w, DepthKind k, double fill = 0.0);

  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  bool is_valid(int y, int x) const { return valid[static_cast<std::size_t>(y) * width + x] != 0; }
  int pixels() const { return height * width; }

  static DepthRaster from_grid(const ImageGrid& grid, DepthKind kind);
  ImageGrid to_grid() const;

  bool operator==(const DepthRaster&) const = default;
};

// depth = 1 / (1/d_max + disp * (1/d_min - 1/d_max)).
DepthRaster disparity_to_depth(const DepthRaster& disp, double d_min, double d_max);
// Inverse of the above; depths are clamped into [d_min, d_max] first.
DepthRaster depth_to_disparity(const DepthRaster& depth, double d_min, double d_max);
double disparity_to_depth(double disp, double d_min, double d_max);
// d depth / d disp at a given depth value.
double depth_derivative(double depth, double d_min, double d_max);

struct SampleCoords {
  int height = 0;
  int width = 0;
  std::vector<double> x;
  std::vector<double> y;
};

struct SampleResult {
  ImageGrid values;
  Mask in_bounds;
};

// Bilinear interpolation with pixel centres at integer coordinates. A
// coordinate is in bounds when 0 <= x <= W-1 and 0 <= y <= H-1; elsewhere the
// value is 0 and in_bounds is false.
SampleResult bilinear_sample(const ImageGrid& image, const SampleCoords& coords);

struct SampleGrads {
  ImageGrid image;  // dL/d image
  std::vector<double> dx;  // dL/d x per output pixel
  std::vector<double> dy;
};

SampleGrads bilinear_sample_backward(const ImageGrid& image, const SampleCoords& coords,
                                     const Mask& in_bounds, const ImageGrid& upstream);

struct WarpResult {
  ImageGrid warped;
  Mask valid;
  SampleCoords coords;
  // d(x, y)/d(target depth) per target pixel.
  std::vector<double> dx_ddepth;
  std::vector<double> dy_ddepth;
};

// Inverse warp: each target pixel is back-projected with its depth, moved by
// pose_target_to_source, projected into the source and sampled bilinearly.
// Pixels with invalid depth, non-positive projected depth or out-of-bounds
// projections are invalid and hold zeros.
WarpResult warp(const ImageGrid& source, const DepthRaster& target_depth,
                const Pose& pose_target_to_source, const Intrinsics& K);

// dL/d(target depth) given dL/d(warped). Zero at invalid pixels.
std::vector<double> warp_backward_depth(const ImageGrid& source, const WarpResult& forward,
                                        const ImageGrid& upstream);

nlohmann::json to_json(const Intrinsics& K);
Intrinsics intrinsics_from_json(const nlohmann::json& j);

}  // namespace depthlab::geometry
