#include "depthlab/depthmix/depthmix.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "depthlab/errors.hpp"

namespace depthlab::depthmix {
namespace {

void require_extent(int h, int w, int h2, int w2, const char* what) {
  if (h != h2 || w != w2) throw ConfigError(std::string(what) + ": size mismatch");
}

void require_pair(const DepthRaster& a, const DepthRaster& b, const char* what) {
  require_extent(a.height, a.width, b.height, b.width, what);
  if (a.kind != b.kind) throw ConfigError(std::string(what) + ": depth kinds differ");
}

// Mirror index into [0, n) without repeating the edge sample (d c b | a b c d).
int mirror(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

MixMask depthmix_mask(const DepthRaster& d_i, const DepthRaster& d_j, double epsilon) {
  require_pair(d_i, d_j, "depthmix_mask");
  if (!(epsilon >= 0.0)) throw ConfigError("depthmix_mask: epsilon must be >= 0");
  const NearOrder order{d_i.kind, epsilon};
  MixMask m(d_i.height, d_i.width);
  for (std::size_t p = 0; p < d_i.values.size(); ++p)
    m.set(p, order.in_front_or_level(d_i.values[p], d_j.values[p]));
  return m;
}

ImageGrid composite(const ImageGrid& x_i, const ImageGrid& x_j, const MixMask& mask) {
  numgrid::require_same_shape(x_i, x_j, "composite");
  require_extent(x_i.height(), x_i.width(), mask.height(), mask.width(), "composite");
  ImageGrid out = x_j;
  const int c = x_i.channels();
  for (std::size_t p = 0; p < static_cast<std::size_t>(mask.pixels()); ++p) {
    if (!mask[p]) continue;
    std::copy_n(x_i.storage().data() + p * c, c, out.storage().data() + p * c);
  }
  return out;
}

LabelRaster composite(const LabelRaster& x_i, const LabelRaster& x_j, const MixMask& mask) {
  require_extent(x_i.height(), x_i.width(), x_j.height(), x_j.width(), "composite");
  require_extent(x_i.height(), x_i.width(), mask.height(), mask.width(), "composite");
  LabelRaster out = x_j;
  for (std::size_t p = 0; p < static_cast<std::size_t>(mask.pixels()); ++p)
    if (mask[p]) out.values()[p] = x_i.values()[p];
  return out;
}

DepthRaster composite(const DepthRaster& x_i, const DepthRaster& x_j, const MixMask& mask) {
  require_pair(x_i, x_j, "composite");
  require_extent(x_i.height, x_i.width, mask.height(), mask.width(), "composite");
  DepthRaster out = x_j;
  for (std::size_t p = 0; p < out.values.size(); ++p) {
    if (!mask[p]) continue;
    out.values[p] = x_i.values[p];
    out.valid[p] = x_i.valid[p];
  }
  return out;
}

MixMask classmix_mask(const LabelRaster& s_i, numgrid::Rng& rng) {
  std::set<int> present;
  for (int l : s_i.values())
    if (l != numgrid::kIgnoreLabel) present.insert(l);
  MixMask m(s_i.height(), s_i.width());
  if (present.empty()) return m;
  const std::vector<int> classes(present.begin(), present.end());
  const int k = static_cast<int>(classes.size());
  const std::vector<int> order = numgrid::permutation(k, rng);
  std::set<int> chosen;
  for (int i = 0; i < (k + 1) / 2; ++i) chosen.insert(classes[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
  for (std::size_t p = 0; p < static_cast<std::size_t>(s_i.pixels()); ++p)
    m.set(p, chosen.count(s_i.values()[p]) > 0);
  return m;
}

double violation_score(const MixMask& mask, const DepthRaster& d_i, const DepthRaster& d_j,
                       double epsilon) {
  require_pair(d_i, d_j, "violation_score");
  require_extent(d_i.height, d_i.width, mask.height(), mask.width(), "violation_score");
  if (d_i.values.empty()) return 0.0;
  const NearOrder order{d_i.kind, epsilon};
  std::size_t bad = 0;
  for (std::size_t p = 0; p < d_i.values.size(); ++p) {
    const double a = d_i.values[p], b = d_j.values[p];
    const bool v = mask[p] ? !order.in_front_or_level(a, b)
                           : !order.in_front_or_level(b, a) && order.strictly_nearer(a, b);
    bad += v ? 1 : 0;
  }
  return static_cast<double>(bad) / static_cast<double>(d_i.values.size());
}

MixedSample mix(const MixInput& i, const MixInput& j, const MixMask& mask) {
  return {composite(i.image, j.image, mask), composite(i.labels, j.labels, mask),
          composite(i.depth, j.depth, mask), mask, {i.id, j.id}};
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma >= 0.0)) throw ConfigError("gaussian_kernel: sigma must be >= 0");
  if (sigma == 0.0) return {1.0};
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    k[static_cast<std::size_t>(i + r)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

ImageGrid gaussian_blur(const ImageGrid& image, double sigma) {
  const std::vector<double> k = gaussian_kernel(sigma);
  if (k.size() == 1) return image;
  const int r = static_cast<int>(k.size() / 2);
  const int H = image.height(), W = image.width(), C = image.channels();
  ImageGrid tmp(H, W, C), out(H, W, C);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int t = -r; t <= r; ++t) s += k[static_cast<std::size_t>(t + r)] * image.at(y, mirror(x + t, W), c);
        tmp.at(y, x, c) = s;
      }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int t = -r; t <= r; ++t) s += k[static_cast<std::size_t>(t + r)] * tmp.at(mirror(y + t, H), x, c);
        out.at(y, x, c) = s;
      }
  return out;
}

ImageGrid photometric_augment(const ImageGrid& image, const Jitter& jitter, double blur_sigma,
                              numgrid::Rng& rng) {
  for (double m : {jitter.brightness, jitter.contrast, jitter.saturation})
    if (!(m >= 0.0 && m < 1.0)) throw ConfigError("photometric_augment: jitter must be in [0, 1)");
  if (!(blur_sigma >= 0.0)) throw ConfigError("photometric_augment: sigma must be >= 0");
  if (image.empty()) return image;
  const auto [lo_it, hi_it] = std::minmax_element(image.values().begin(), image.values().end());
  const double lo = *lo_it, hi = *hi_it;

  // Factors are always drawn so the stream position does not depend on which
  // jitters are enabled.
  const double b = 1.0 + jitter.brightness * rng.uniform(-1.0, 1.0);
  const double c = 1.0 + jitter.contrast * rng.uniform(-1.0, 1.0);
  const double s = 1.0 + jitter.saturation * rng.uniform(-1.0, 1.0);

  ImageGrid out = image;
  const int C = image.channels();
  auto gray_of = [&](const double* px) {
    if (C != 3) {
      double g = 0.0;
      for (int k = 0; k < C; ++k) g += px[k];
      return g / C;
    }
    return 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
  };
  if (b != 1.0)
    for (double& v : out.values()) v *= b;
  if (c != 1.0) {
    double mean = 0.0;
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) mean += gray_of(out.pixel(y, x));
    mean /= out.pixels();
    for (double& v : out.values()) v = (v - mean) * c + mean;
  }
  if (s != 1.0 && C > 1) {
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) {
        double* px = out.pixel(y, x);
        const double g = gray_of(px);
        for (int k = 0; k < C; ++k) px[k] = g + (px[k] - g) * s;
      }
  }
  out = gaussian_blur(out, blur_sigma);
  for (double& v : out.values()) v = std::clamp(v, lo, hi);
  return out;
}

std::vector<int> derangement(int n, numgrid::Rng& rng) {
  if (n < 2) throw ConfigError("derangement needs n >= 2");
  for (;;) {
    std::vector<int> p = numgrid::permutation(n, rng);
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) ok = p[static_cast<std::size_t>(i)] != i;
    if (ok) return p;
  }
}

MixMask mask_boundary(const MixMask& mask) {
  const int H = mask.height(), W = mask.width();
  MixMask out(H, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const bool v = mask.at(y, x);
      const bool edge = (x > 0 && mask.at(y, x - 1) != v) || (x + 1 < W && mask.at(y, x + 1) != v) ||
                        (y > 0 && mask.at(y - 1, x) != v) || (y + 1 < H && mask.at(y + 1, x) != v);
      out.set(y, x, edge);
    }
  return out;
}

}  // namespace depthlab::depthmix
