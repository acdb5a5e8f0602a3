#pragma once

#include <span>
#include <vector>

#include "depthlab/geometry/camera.hpp"
#include "depthlab/learner/losses.hpp"
#include "depthlab/numgrid/model.hpp"

namespace depthlab::learner {

using geometry::Intrinsics;
using geometry::Pose;
using numgrid::GradBundle;
using numgrid::ModelParams;

struct SdeConfig {
  double d_min = 1.0;
  double d_max = 60.0;
  double smoothness_weight = 1e-3;
  int scales = 2;  // 1: full resolution only; 2: adds the half-resolution side output
  bool auto_mask = true;
  PhotometricWeights photometric{};
};

// A target frame with its source frames and target-to-source poses.
struct SdeExample {
  ImageGrid target;
  std::vector<ImageGrid> sources;
  std::vector<Pose> poses;
};

struct SdeTerms {
  double value = 0.0;
  double photometric = 0.0;  // summed min-reprojection terms
  double smoothness = 0.0;  // summed smoothness terms (unweighted)
  bool degenerate = false;  // every scale fully masked
  ImageGrid grad_disparity;  // d value / d full-resolution disparity
  ImageGrid grad_disparity_half;  // empty unless scales == 2
};

// Self-supervised depth loss for given disparity maps. The half-resolution
// disparity is upsampled to full resolution before warping; smoothness is
// evaluated at each scale's own resolution against the pooled image.
SdeTerms sde_terms(const ImageGrid& disparity, const ImageGrid& disparity_half, const SdeExample& ex,
                   const Intrinsics& K, const SdeConfig& config);

struct ModelLoss {
  double value = 0.0;
  GradBundle grads;
  bool degenerate = false;
};

ModelLoss sde_loss(const ModelParams& params, const SdeExample& ex, const Intrinsics& K,
                   const SdeConfig& config);

// Frozen encoder snapshot standing in for externally pretrained features.
struct ReferenceFeatures {
  ModelParams params;

  static ReferenceFeatures snapshot(const ModelParams& params) { return {params}; }
  ImageGrid bottleneck(const ImageGrid& image) const;
};

ModelLoss feature_distance(const ModelParams& params, const ReferenceFeatures& reference,
                           const ImageGrid& image);

struct PretrainLoss {
  double value = 0.0;
  double sde = 0.0;
  double feature = 0.0;
  GradBundle grads;
  bool degenerate = false;
};

// L_P = L_D + lambda_F * L_F; a null reference or lambda_F == 0 drops L_F.
PretrainLoss pretrain_loss(const ModelParams& params, const SdeExample& ex, const Intrinsics& K,
                           const SdeConfig& config, const ReferenceFeatures* reference,
                           double lambda_f);

struct SslLoss {
  double value = 0.0;
  double supervised = 0.0;
  double unsupervised = 0.0;  // before weighting by lambda_P
  GradBundle grads;
};

// CE(labeled) + lambda_p * CE(mixed), each pooled over its batch. Passing raw
// pseudo-labelled images as the second batch gives the unmixed objective.
SslLoss ssl_loss(const ModelParams& params, std::span<const ImageGrid> labeled_images,
                 std::span<const LabelRaster> labeled_labels, std::span<const ImageGrid> mixed_images,
                 std::span<const LabelRaster> mixed_labels, double lambda_p);

// Supervised CE on one batch.
ModelLoss supervised_loss(const ModelParams& params, std::span<const ImageGrid> images,
                          std::span<const LabelRaster> labels);

struct TeacherState {
  ModelParams params;
  double alpha = 0.99;
};

// theta_T <- alpha * theta_T + (1 - alpha) * theta over every tensor.
TeacherState ema_update(const TeacherState& teacher, const ModelParams& student);
void ema_update_inplace(TeacherState& teacher, const ModelParams& student);

PseudoLabels pseudo_label(const TeacherState& teacher, const ImageGrid& image);

}  // namespace depthlab::learner
