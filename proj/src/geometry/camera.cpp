#include "depthlab/geometry/camera.hpp"

#include <algorithm>
#include <cmath>

#include "depthlab/errors.hpp"

namespace depthlab::geometry {
namespace {

struct Corner {
  int x0, y0;
  double fx, fy;
};

// Left/top neighbour index and fractional offsets. The index is capped at
// extent-2 so that the right/bottom border is interpolated with weight 1.
Corner corner_of(double x, double y, int width, int height) {
  Corner c;
  c.x0 = width > 1 ? std::clamp(static_cast<int>(std::floor(x)), 0, width - 2) : 0;
  c.y0 = height > 1 ? std::clamp(static_cast<int>(std::floor(y)), 0, height - 2) : 0;
  c.fx = width > 1 ? x - c.x0 : 0.0;
  c.fy = height > 1 ? y - c.y0 : 0.0;
  return c;
}

bool inside(double x, double y, int width, int height) {
  return x >= 0.0 && y >= 0.0 && x <= width - 1 && y <= height - 1;
}

}  // namespace

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("intrinsics: focal lengths must be positive");
}

Intrinsics Intrinsics::scaled(double factor) const {
  return {fx / factor, fy / factor, (cx + 0.5) / factor - 0.5, (cy + 0.5) / factor - 0.5};
}

Pose Pose::from_yaw_translation(double yaw, const Vec3& t) {
  Pose p;
  const double c = std::cos(yaw), s = std::sin(yaw);
  p.rotation = {{{c, 0, s}, {0, 1, 0}, {-s, 0, c}}};
  p.translation = t;
  return p;
}

Vec3 Pose::apply(const Vec3& p) const {
  Vec3 out;
  for (int r = 0; r < 3; ++r) {
    out[r] = rotation[r][0] * p[0] + rotation[r][1] * p[1] + rotation[r][2] * p[2] + translation[r];
  }
  return out;
}

Pose Pose::inverse() const {
  Pose inv;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) inv.rotation[r][c] = rotation[c][r];
  }
  for (int r = 0; r < 3; ++r) {
    inv.translation[r] = -(inv.rotation[r][0] * translation[0] + inv.rotation[r][1] * translation[1] +
                           inv.rotation[r][2] * translation[2]);
  }
  return inv;
}

Pose Pose::compose(const Pose& other) const {
  Pose out;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      out.rotation[r][c] = rotation[r][0] * other.rotation[0][c] +
                           rotation[r][1] * other.rotation[1][c] +
                           rotation[r][2] * other.rotation[2][c];
    }
  }
  out.translation = apply(other.translation);
  return out;
}

void Pose::validate(double tol) const {
  const auto& R = rotation;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += R[k][i] * R[k][j];
      if (std::abs(s - (i == j ? 1.0 : 0.0)) > tol) throw ConfigError("pose: rotation not orthonormal");
    }
  }
  const double det = R[0][0] * (R[1][1] * R[2][2] - R[1][2] * R[2][1]) -
                     R[0][1] * (R[1][0] * R[2][2] - R[1][2] * R[2][0]) +
                     R[0][2] * (R[1][0] * R[2][1] - R[1][1] * R[2][0]);
  if (std::abs(det - 1.0) > tol) throw ConfigError("pose: rotation determinant is not +1");
}

std::array<double, 12> Pose::to_row_major() const {
  std::array<double, 12> m{};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m[r * 4 + c] = rotation[r][c];
    m[r * 4 + 3] = translation[r];
  }
  return m;
}

Pose Pose::from_row_major(const std::array<double, 12>& m) {
  Pose p;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) p.rotation[r][c] = m[r * 4 + c];
    p.translation[r] = m[r * 4 + 3];
  }
  return p;
}

DepthRaster::DepthRaster(int h, int w, DepthKind k, double fill)
    : height(h), width(w), kind(k),
      values(static_cast<std::size_t>(h) * w, fill),
      valid(static_cast<std::size_t>(h) * w, 1) {}

DepthRaster DepthRaster::from_grid(const ImageGrid& grid, DepthKind kind) {
  if (grid.channels() != 1) throw ConfigError("DepthRaster::from_grid: expected 1 channel");
  DepthRaster r(grid.height(), grid.width(), kind);
  std::copy(grid.values().begin(), grid.values().end(), r.values.begin());
  return r;
}

ImageGrid DepthRaster::to_grid() const {
  ImageGrid g(height, width, 1);
  std::copy(values.begin(), values.end(), g.values().begin());
  return g;
}

double disparity_to_depth(double disp, double d_min, double d_max) {
  return 1.0 / (1.0 / d_max + disp * (1.0 / d_min - 1.0 / d_max));
}

double depth_derivative(double depth, double d_min, double d_max) {
  return -depth * depth * (1.0 / d_min - 1.0 / d_max);
}

DepthRaster disparity_to_depth(const DepthRaster& disp, double d_min, double d_max) {
  if (!(d_min > 0.0) || !(d_min < d_max)) throw ConfigError("disparity_to_depth: need 0 < d_min < d_max");
  if (disp.kind != DepthKind::kDisparity) throw ConfigError("disparity_to_depth: input is not disparity");
  DepthRaster out = disp;
  out.kind = DepthKind::kDepth;
  for (double& v : out.values) v = disparity_to_depth(v, d_min, d_max);
  return out;
}

DepthRaster depth_to_disparity(const DepthRaster& depth, double d_min, double d_max) {
  if (!(d_min > 0.0) || !(d_min < d_max)) throw ConfigError("depth_to_disparity: need 0 < d_min < d_max");
  if (depth.kind != DepthKind::kDepth) throw ConfigError("depth_to_disparity: input is not depth");
  DepthRaster out = depth;
  out.kind = DepthKind::kDisparity;
  for (double& v : out.values) {
    const double z = std::clamp(v, d_min, d_max);
    v = (1.0 / z - 1.0 / d_max) / (1.0 / d_min - 1.0 / d_max);
  }
  return out;
}

SampleResult bilinear_sample(const ImageGrid& image, const SampleCoords& coords) {
  const int c = image.channels();
  SampleResult r{ImageGrid(coords.height, coords.width, c), Mask(coords.height, coords.width)};
  const std::size_t n = static_cast<std::size_t>(coords.height) * coords.width;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = coords.x[i], y = coords.y[i];
    if (!inside(x, y, image.width(), image.height())) continue;
    r.in_bounds.set(i, true);
    const Corner k = corner_of(x, y, image.width(), image.height());
    const int x1 = std::min(k.x0 + 1, image.width() - 1);
    const int y1 = std::min(k.y0 + 1, image.height() - 1);
    const double w00 = (1 - k.fx) * (1 - k.fy), w01 = k.fx * (1 - k.fy);
    const double w10 = (1 - k.fx) * k.fy, w11 = k.fx * k.fy;
    const double* p00 = image.pixel(k.y0, k.x0);
    const double* p01 = image.pixel(k.y0, x1);
    const double* p10 = image.pixel(y1, k.x0);
    const double* p11 = image.pixel(y1, x1);
    double* out = r.values.storage().data() + i * c;
    for (int ch = 0; ch < c; ++ch) {
      out[ch] = w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch];
    }
  }
  return r;
}

SampleGrads bilinear_sample_backward(const ImageGrid& image, const SampleCoords& coords,
                                     const Mask& in_bounds, const ImageGrid& upstream) {
  const int c = image.channels();
  const std::size_t n = static_cast<std::size_t>(coords.height) * coords.width;
  SampleGrads g{ImageGrid(image.height(), image.width(), c), std::vector<double>(n, 0.0),
                std::vector<double>(n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    if (!in_bounds[i]) continue;
    const Corner k = corner_of(coords.x[i], coords.y[i], image.width(), image.height());
    const int x1 = std::min(k.x0 + 1, image.width() - 1);
    const int y1 = std::min(k.y0 + 1, image.height() - 1);
    const double* p00 = image.pixel(k.y0, k.x0);
    const double* p01 = image.pixel(k.y0, x1);
    const double* p10 = image.pixel(y1, k.x0);
    const double* p11 = image.pixel(y1, x1);
    const double* up = upstream.storage().data() + i * c;
    double* g00 = g.image.pixel(k.y0, k.x0);
    double* g01 = g.image.pixel(k.y0, x1);
    double* g10 = g.image.pixel(y1, k.x0);
    double* g11 = g.image.pixel(y1, x1);
    for (int ch = 0; ch < c; ++ch) {
      const double u = up[ch];
      g00[ch] += u * (1 - k.fx) * (1 - k.fy);
      g01[ch] += u * k.fx * (1 - k.fy);
      g10[ch] += u * (1 - k.fx) * k.fy;
      g11[ch] += u * k.fx * k.fy;
      if (image.width() > 1) g.dx[i] += u * ((1 - k.fy) * (p01[ch] - p00[ch]) + k.fy * (p11[ch] - p10[ch]));
      if (image.height() > 1) g.dy[i] += u * ((1 - k.fx) * (p10[ch] - p00[ch]) + k.fx * (p11[ch] - p01[ch]));
    }
  }
  return g;
}

WarpResult warp(const ImageGrid& source, const DepthRaster& target_depth,
                const Pose& pose_target_to_source, const Intrinsics& K) {
  K.validate();
  if (target_depth.kind != DepthKind::kDepth) throw ConfigError("warp: target raster must hold depth");
  const int h = target_depth.height, w = target_depth.width;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  WarpResult r;
  r.coords = {h, w, std::vector<double>(n, -1.0), std::vector<double>(n, -1.0)};
  r.dx_ddepth.assign(n, 0.0);
  r.dy_ddepth.assign(n, 0.0);
  const auto& R = pose_target_to_source.rotation;
  const auto& t = pose_target_to_source.translation;
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * w + u;
      const double z = target_depth.values[i];
      if (!target_depth.valid[i] || !(z > 0.0)) continue;
      const Vec3 ray{(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0};
      Vec3 a;  // R * ray
      for (int k = 0; k < 3; ++k) a[k] = R[k][0] * ray[0] + R[k][1] * ray[1] + R[k][2] * ray[2];
      const double px = z * a[0] + t[0], py = z * a[1] + t[1], pz = z * a[2] + t[2];
      if (!(pz > 1e-9)) continue;
      // Normalised by z so the identity pose returns the pixel grid exactly.
      const double qz = a[2] + t[2] / z;
      r.coords.x[i] = K.fx * ((a[0] + t[0] / z) / qz) + K.cx;
      r.coords.y[i] = K.fy * ((a[1] + t[1] / z) / qz) + K.cy;
      r.dx_ddepth[i] = K.fx * (a[0] * pz - px * a[2]) / (pz * pz);
      r.dy_ddepth[i] = K.fy * (a[1] * pz - py * a[2]) / (pz * pz);
    }
  }
  SampleResult s = bilinear_sample(source, r.coords);
  r.warped = std::move(s.values);
  r.valid = std::move(s.in_bounds);
  return r;
}

std::vector<double> warp_backward_depth(const ImageGrid& source, const WarpResult& forward,
                                        const ImageGrid& upstream) {
  const SampleGrads g = bilinear_sample_backward(source, forward.coords, forward.valid, upstream);
  std::vector<double> dz(g.dx.size(), 0.0);
  for (std::size_t i = 0; i < dz.size(); ++i) {
    if (!forward.valid[i]) continue;
    dz[i] = g.dx[i] * forward.dx_ddepth[i] + g.dy[i] * forward.dy_ddepth[i];
  }
  return dz;
}

nlohmann::json to_json(const Intrinsics& K) {
  return {{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy}};
}

Intrinsics intrinsics_from_json(const nlohmann::json& j) {
  Intrinsics K{j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
               j.at("cy").get<double>()};
  K.validate();
  return K;
}

}  // namespace depthlab::geometry
