#pragma once

#include <string>
#include <utility>
#include <vector>

#include "depthlab/geometry/camera.hpp"
#include "depthlab/numgrid/image_grid.hpp"
#include "depthlab/numgrid/rng.hpp"

namespace depthlab::depthmix {

using geometry::DepthKind;
using geometry::DepthRaster;
using numgrid::ImageGrid;
using numgrid::LabelRaster;
using MixMask = numgrid::Mask;

inline constexpr double kDefaultEpsilon = 0.03;

// Near-order comparator over either depth (smaller is nearer) or normalized
// disparity (larger is nearer). Both rasters passed to the functions below
// must carry the same kind; epsilon is on that raster's scale.
struct NearOrder {
  DepthKind kind = DepthKind::kDisparity;
  double epsilon = kDefaultEpsilon;

  // a is in front of b, or level with it within epsilon.
  bool in_front_or_level(double a, double b) const {
    return kind == DepthKind::kDepth ? a < b + epsilon : a > b - epsilon;
  }
  bool strictly_nearer(double a, double b) const {
    return kind == DepthKind::kDepth ? a < b : a > b;
  }
};

// M = 1 where pixel i is in front of (or level with) pixel j.
MixMask depthmix_mask(const DepthRaster& d_i, const DepthRaster& d_j, double epsilon = kDefaultEpsilon);

// M * x_i + (1 - M) * x_j. Labels and depth are selected per pixel, never blended.
ImageGrid composite(const ImageGrid& x_i, const ImageGrid& x_j, const MixMask& mask);
LabelRaster composite(const LabelRaster& x_i, const LabelRaster& x_j, const MixMask& mask);
DepthRaster composite(const DepthRaster& x_i, const DepthRaster& x_j, const MixMask& mask);

// ClassMix baseline: ceil(k/2) of the k classes present in s_i (ignore label
// excluded) drawn uniformly without replacement.
MixMask classmix_mask(const LabelRaster& s_i, numgrid::Rng& rng);

// Fraction of pixels where shown content is hidden behind strictly nearer
// content of the other source: (M=1 and i is behind j by epsilon) or (M=0 and
// j is behind i by epsilon).
double violation_score(const MixMask& mask, const DepthRaster& d_i, const DepthRaster& d_j,
                       double epsilon = kDefaultEpsilon);

struct MixInput {
  std::string id;
  ImageGrid image;
  LabelRaster labels;
  DepthRaster depth;
};

struct MixedSample {
  ImageGrid image;
  LabelRaster labels;
  DepthRaster depth;
  MixMask mask;
  std::pair<std::string, std::string> provenance;
};

MixedSample mix(const MixInput& i, const MixInput& j, const MixMask& mask);

struct Jitter {
  double brightness = 0.0;
  double contrast = 0.0;
  double saturation = 0.0;
};

// Seeded colour jitter (brightness, contrast, saturation; each factor drawn
// from [1 - m, 1 + m]) followed by a truncated Gaussian blur with radius
// ceil(3 sigma) and mirrored borders. The result is clamped to the input's
// value range.
ImageGrid photometric_augment(const ImageGrid& image, const Jitter& jitter, double blur_sigma,
                              numgrid::Rng& rng);

// Normalized 1-D Gaussian taps for the blur above (length 2r + 1).
std::vector<double> gaussian_kernel(double sigma);
ImageGrid gaussian_blur(const ImageGrid& image, double sigma);

// Uniformly random permutation without fixed points (n >= 2).
std::vector<int> derangement(int n, numgrid::Rng& rng);

// Pixels of the mask with a 4-neighbour of the other value.
MixMask mask_boundary(const MixMask& mask);

}  // namespace depthlab::depthmix
