#pragma once

#include <span>
#include <vector>

#include "depthlab/geometry/camera.hpp"
#include "depthlab/numgrid/image_grid.hpp"

namespace depthlab::learner {

using geometry::DepthRaster;
using numgrid::ImageGrid;
using numgrid::LabelRaster;
using numgrid::Mask;

// Scalar loss with its gradient w.r.t. the loss's differentiable input.
struct GridLoss {
  double value = 0.0;
  ImageGrid grad;
  bool degenerate = false;  // nothing contributed; value is 0
  std::size_t count = 0;  // contributing elements
};

struct PhotometricWeights {
  double ssim = 0.85;
  double l1 = 0.15;
};

// Per-pixel ssim_w * (1 - SSIM) / 2 + l1_w * |target - warped|, both averaged
// over channels. SSIM uses 3x3 windows with mirrored borders. Output has one
// channel. Pixels outside `valid` get error 0; an empty mask means all valid.
ImageGrid photometric_error(const ImageGrid& target, const ImageGrid& warped, const Mask& valid = {},
                            PhotometricWeights w = {});

// dL/d warped given dL/d error (one channel), for the error above.
ImageGrid photometric_error_backward(const ImageGrid& target, const ImageGrid& warped,
                                     const ImageGrid& upstream, const Mask& valid = {},
                                     PhotometricWeights w = {});

struct Reprojection {
  double value = 0.0;
  bool degenerate = false;
  std::size_t count = 0;
  // Per pixel: index of the source whose error was taken, or -1 when the
  // pixel is invalid or auto-masked.
  std::vector<int> choice;
};

// Pixel-wise minimum over sources of the warped error (valid sources only);
// a pixel is auto-masked when the minimum identity error is <= that minimum.
// Mean over surviving pixels. Empty identity_errors disables auto-masking.
// d value / d errors[s](p) = 1 / count where choice[p] == s.
Reprojection min_reprojection_loss(const std::vector<ImageGrid>& errors,
                                   const std::vector<ImageGrid>& identity_errors,
                                   const std::vector<Mask>& valids);

// mean_x(|dx d*| exp(-|dx I|)) + mean_y(|dy d*| exp(-|dy I|)) with
// d* = disp / (mean(disp) + 1e-7), forward differences and channel-averaged
// image gradients. grad is w.r.t. disp.
GridLoss edge_aware_smoothness(const ImageGrid& disp, const ImageGrid& image);
GridLoss edge_aware_smoothness(const DepthRaster& disp, const ImageGrid& image);

// Mean over non-ignored pixels of -log softmax(logits)[label].
GridLoss cross_entropy(const ImageGrid& logits, const LabelRaster& labels,
                       int ignore_id = numgrid::kIgnoreLabel);

// Cross-entropy pooled over a batch: one mean over every non-ignored pixel of
// every item. grads[i] is w.r.t. logits[i].
struct BatchLoss {
  double value = 0.0;
  std::vector<ImageGrid> grads;
  bool degenerate = false;
  std::size_t count = 0;
};
BatchLoss batch_cross_entropy(std::span<const ImageGrid> logits, std::span<const LabelRaster> labels,
                              int ignore_id = numgrid::kIgnoreLabel);

// Reverse Huber over pixels valid in both rasters; c = 0.2 * max |r| over the
// whole batch. The gradient includes c's dependence on the arg-max residual.
BatchLoss berhu(std::span<const ImageGrid> pred, std::span<const ImageGrid> target,
                std::span<const Mask> valid = {});
GridLoss berhu(const DepthRaster& pred, const DepthRaster& target);

// ||b - ref||_2 / n over the n bottleneck elements.
GridLoss feature_distance(const ImageGrid& bottleneck, const ImageGrid& reference);

struct PseudoLabels {
  LabelRaster labels;
  ImageGrid confidence;  // one channel, max softmax probability
};

// Per-pixel arg-max of softmax(logits); ties go to the lowest class id.
PseudoLabels pseudo_label(const ImageGrid& logits);

// Fraction of pixels with confidence strictly above tau.
double confidence_weight(const ImageGrid& confidence, double tau);

// Numerically stable softmax over the channel axis.
ImageGrid softmax(const ImageGrid& logits);

}  // namespace depthlab::learner
