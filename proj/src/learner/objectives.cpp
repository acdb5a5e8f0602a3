#include "depthlab/learner/objectives.hpp"

#include "depthlab/errors.hpp"
#include "depthlab/numgrid/parallel.hpp"

namespace depthlab::learner {
namespace {

using geometry::DepthKind;
using numgrid::HeadSelection;
using numgrid::OutputGrads;

constexpr HeadSelection kDepthOnly{false, true};
constexpr HeadSelection kSegOnly{true, false};

struct ScaleResult {
  double photometric = 0.0;
  bool degenerate = false;
  ImageGrid grad;  // w.r.t. the full-resolution disparity used for warping
};

ScaleResult reprojection_scale(const ImageGrid& disp, const SdeExample& ex,
                               const std::vector<ImageGrid>& identity, const Intrinsics& K,
                               const SdeConfig& cfg) {
  const int H = disp.height(), W = disp.width();
  DepthRaster depth(H, W, DepthKind::kDepth);
  for (std::size_t p = 0; p < depth.values.size(); ++p)
    depth.values[p] = geometry::disparity_to_depth(disp.values()[p], cfg.d_min, cfg.d_max);

  std::vector<geometry::WarpResult> warps;
  std::vector<ImageGrid> errors;
  std::vector<Mask> valids;
  for (std::size_t s = 0; s < ex.sources.size(); ++s) {
    warps.push_back(geometry::warp(ex.sources[s], depth, ex.poses[s], K));
    errors.push_back(photometric_error(ex.target, warps.back().warped, warps.back().valid, cfg.photometric));
    valids.push_back(warps.back().valid);
  }
  static const std::vector<ImageGrid> kNoIdentity;
  const Reprojection rep = min_reprojection_loss(errors, cfg.auto_mask ? identity : kNoIdentity, valids);

  ScaleResult r;
  r.photometric = rep.value;
  r.degenerate = rep.degenerate;
  r.grad = ImageGrid(H, W, 1);
  if (rep.degenerate) return r;
  const double inv = 1.0 / static_cast<double>(rep.count);
  for (std::size_t s = 0; s < ex.sources.size(); ++s) {
    ImageGrid up(H, W, 1);
    bool any = false;
    for (std::size_t p = 0; p < rep.choice.size(); ++p)
      if (rep.choice[p] == static_cast<int>(s)) {
        up.values()[p] = inv;
        any = true;
      }
    if (!any) continue;
    const ImageGrid dwarped =
        photometric_error_backward(ex.target, warps[s].warped, up, warps[s].valid, cfg.photometric);
    const std::vector<double> dz = geometry::warp_backward_depth(ex.sources[s], warps[s], dwarped);
    for (std::size_t p = 0; p < dz.size(); ++p)
      r.grad.values()[p] += dz[p] * geometry::depth_derivative(depth.values[p], cfg.d_min, cfg.d_max);
  }
  return r;
}

void require_example(const SdeExample& ex) {
  if (ex.sources.empty()) throw ConfigError("sde_loss: need at least one source frame");
  if (ex.sources.size() != ex.poses.size()) throw ConfigError("sde_loss: one pose per source");
  for (const auto& s : ex.sources) numgrid::require_same_shape(ex.target, s, "sde_loss");
}

GradBundle sum_in_order(std::vector<GradBundle>& parts, const ModelParams& params) {
  GradBundle total = GradBundle::zeros_like(params);
  for (const auto& g : parts) total.add(g);
  return total;
}

}  // namespace

SdeTerms sde_terms(const ImageGrid& disparity, const ImageGrid& disparity_half, const SdeExample& ex,
                   const Intrinsics& K, const SdeConfig& cfg) {
  require_example(ex);
  if (cfg.scales < 1 || cfg.scales > 2) throw ConfigError("sde_loss: scales must be 1 or 2");
  if (disparity.channels() != 1 || !disparity.same_extent(ex.target.height(), ex.target.width()))
    throw ConfigError("sde_loss: disparity size mismatch");

  std::vector<ImageGrid> identity;
  if (cfg.auto_mask)
    for (const auto& s : ex.sources) identity.push_back(photometric_error(ex.target, s, {}, cfg.photometric));

  SdeTerms t;
  const ScaleResult full = reprojection_scale(disparity, ex, identity, K, cfg);
  const GridLoss smooth_full = edge_aware_smoothness(disparity, ex.target);
  t.photometric = full.photometric;
  t.smoothness = smooth_full.value;
  t.degenerate = full.degenerate;
  t.grad_disparity = full.grad;
  for (std::size_t p = 0; p < t.grad_disparity.size(); ++p)
    t.grad_disparity.values()[p] += cfg.smoothness_weight * smooth_full.grad.values()[p];

  if (cfg.scales == 2) {
    if (disparity_half.channels() != 1 ||
        !disparity_half.same_extent(ex.target.height() / 2, ex.target.width() / 2))
      throw ConfigError("sde_loss: half-resolution disparity size mismatch");
    const ScaleResult half = reprojection_scale(numgrid::upsample_nearest2(disparity_half), ex, identity, K, cfg);
    const GridLoss smooth_half = edge_aware_smoothness(disparity_half, numgrid::average_pool2(ex.target));
    t.photometric += half.photometric;
    t.smoothness += smooth_half.value;
    t.degenerate = t.degenerate && half.degenerate;
    t.grad_disparity_half = numgrid::downsum2(half.grad);
    for (std::size_t p = 0; p < t.grad_disparity_half.size(); ++p)
      t.grad_disparity_half.values()[p] += cfg.smoothness_weight * smooth_half.grad.values()[p];
  }
  t.value = t.photometric + cfg.smoothness_weight * t.smoothness;
  return t;
}

ModelLoss sde_loss(const ModelParams& params, const SdeExample& ex, const Intrinsics& K,
                   const SdeConfig& config) {
  const PretrainLoss p = pretrain_loss(params, ex, K, config, nullptr, 0.0);
  return {p.value, p.grads, p.degenerate};
}

ImageGrid ReferenceFeatures::bottleneck(const ImageGrid& image) const {
  return numgrid::encode(params, image);
}

ModelLoss feature_distance(const ModelParams& params, const ReferenceFeatures& reference,
                           const ImageGrid& image) {
  const auto fwd = numgrid::forward(params, image, {false, false});
  const GridLoss f = feature_distance(fwd.outputs.bottleneck, reference.bottleneck(image));
  OutputGrads og;
  og.bottleneck = f.grad;
  return {f.value, numgrid::backward(params, fwd.cache, og), f.degenerate};
}

PretrainLoss pretrain_loss(const ModelParams& params, const SdeExample& ex, const Intrinsics& K,
                           const SdeConfig& config, const ReferenceFeatures* reference,
                           double lambda_f) {
  if (lambda_f < 0.0) throw ConfigError("pretrain_loss: lambda_F must be >= 0");
  const auto fwd = numgrid::forward(params, ex.target, kDepthOnly);
  const SdeTerms t = sde_terms(fwd.outputs.disparity, fwd.outputs.disparity_half, ex, K, config);
  PretrainLoss r;
  r.sde = t.value;
  r.degenerate = t.degenerate;
  OutputGrads og;
  og.disparity = t.grad_disparity;
  og.disparity_half = t.grad_disparity_half;
  if (reference != nullptr && lambda_f > 0.0) {
    const GridLoss f = feature_distance(fwd.outputs.bottleneck, reference->bottleneck(ex.target));
    r.feature = f.value;
    og.bottleneck = f.grad;
    for (double& v : og.bottleneck.values()) v *= lambda_f;
  }
  r.value = r.sde + lambda_f * r.feature;
  numgrid::require_finite(r.value, "pretrain_loss");
  r.grads = numgrid::backward(params, fwd.cache, og);
  return r;
}

namespace {

// Pooled CE over one batch, accumulated into `total` with weight `scale`.
double ce_into(const ModelParams& params, std::span<const ImageGrid> images,
               std::span<const LabelRaster> labels, double scale, GradBundle& total) {
  const std::size_t n = images.size();
  if (n == 0) throw ConfigError("cross-entropy batch is empty");
  if (labels.size() != n) throw ConfigError("cross-entropy batch size mismatch");
  std::vector<numgrid::ForwardResult> fwd(n);
  numgrid::parallel_for(static_cast<int>(n), [&](int i) {
    fwd[static_cast<std::size_t>(i)] = numgrid::forward(params, images[static_cast<std::size_t>(i)], kSegOnly);
  });
  std::vector<ImageGrid> logits;
  for (auto& f : fwd) logits.push_back(f.outputs.seg_logits);
  const BatchLoss ce = batch_cross_entropy(logits, labels);
  numgrid::require_finite(ce.value, "cross_entropy");
  if (scale != 0.0 && !ce.degenerate) {
    std::vector<GradBundle> parts(n);
    numgrid::parallel_for(static_cast<int>(n), [&](int i) {
      OutputGrads og;
      og.seg_logits = ce.grads[static_cast<std::size_t>(i)];
      if (scale != 1.0)
        for (double& v : og.seg_logits.values()) v *= scale;
      parts[static_cast<std::size_t>(i)] = numgrid::backward(params, fwd[static_cast<std::size_t>(i)].cache, og);
    });
    total.add(sum_in_order(parts, params));
  }
  return ce.value;
}

}  // namespace

SslLoss ssl_loss(const ModelParams& params, std::span<const ImageGrid> labeled_images,
                 std::span<const LabelRaster> labeled_labels, std::span<const ImageGrid> mixed_images,
                 std::span<const LabelRaster> mixed_labels, double lambda_p) {
  if (!(lambda_p >= 0.0 && lambda_p <= 1.0)) throw ConfigError("ssl_loss: lambda_P must be in [0, 1]");
  SslLoss r;
  r.grads = GradBundle::zeros_like(params);
  r.supervised = ce_into(params, labeled_images, labeled_labels, 1.0, r.grads);
  r.unsupervised = ce_into(params, mixed_images, mixed_labels, lambda_p, r.grads);
  r.value = r.supervised + lambda_p * r.unsupervised;
  return r;
}

ModelLoss supervised_loss(const ModelParams& params, std::span<const ImageGrid> images,
                          std::span<const LabelRaster> labels) {
  ModelLoss r;
  r.grads = GradBundle::zeros_like(params);
  r.value = ce_into(params, images, labels, 1.0, r.grads);
  return r;
}

void ema_update_inplace(TeacherState& teacher, const ModelParams& student) {
  if (!(teacher.alpha >= 0.0 && teacher.alpha <= 1.0)) throw ConfigError("ema_update: alpha must be in [0, 1]");
  if (!(teacher.params.config == student.config)) throw ConfigError("ema_update: model configs differ");
  const double a = teacher.alpha;
  for (auto g : {numgrid::ParamGroup::kEncoder, numgrid::ParamGroup::kDepthHead, numgrid::ParamGroup::kSegHead}) {
    auto& tt = teacher.params.group(g);
    const auto& ss = student.group(g);
    if (tt.size() != ss.size()) throw ConfigError("ema_update: tensor count mismatch");
    for (std::size_t k = 0; k < tt.size(); ++k) {
      if (tt[k].shape != ss[k].shape) throw ConfigError("ema_update: shape mismatch in " + tt[k].name);
      for (std::size_t i = 0; i < tt[k].values.size(); ++i)
        tt[k].values[i] = a * tt[k].values[i] + (1.0 - a) * ss[k].values[i];
    }
  }
}

TeacherState ema_update(const TeacherState& teacher, const ModelParams& student) {
  TeacherState t = teacher;
  ema_update_inplace(t, student);
  return t;
}

PseudoLabels pseudo_label(const TeacherState& teacher, const ImageGrid& image) {
  return pseudo_label(numgrid::tiny_net_forward(teacher.params, image, kSegOnly).seg_logits);
}

}  // namespace depthlab::learner
