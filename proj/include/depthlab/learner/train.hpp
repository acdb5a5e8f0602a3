#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "depthlab/depthmix/depthmix.hpp"
#include "depthlab/learner/objectives.hpp"
#include "depthlab/numgrid/optim.hpp"

namespace depthlab::learner {

enum class TrainMode { kSupervised, kSsl, kSdePretrain, kMultitask };
// kNone trains on raw pseudo-labelled unlabeled images (no mixing).
enum class MixKind { kDepthMix, kClassMix, kNone };

std::string to_string(TrainMode mode);
std::string to_string(MixKind kind);
TrainMode train_mode_from_string(const std::string& s);
MixKind mix_kind_from_string(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::kSupervised;
  MixKind mix = MixKind::kDepthMix;
  int iterations = 1000;
  int labeled_batch = 2;
  int mixed_batch = 2;
  int sde_batch = 2;

  // Base rate; each parameter group (encoder, depth head, seg head) scales it.
  double lr = 1e-2;
  std::array<double, 3> group_lr_scale{0.1, 0.1, 1.0};
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double clip_norm = 10.0;
  int decay_step = 0;  // 0 disables the single step decay
  double decay_factor = 0.1;

  double tau = 0.97;
  double alpha = 0.99;
  double epsilon = depthmix::kDefaultEpsilon;
  bool augment = true;
  depthmix::Jitter jitter{0.2, 0.2, 0.2};
  double blur_sigma = 0.5;

  double lambda_f = 1e-2;
  SdeConfig sde{};

  std::uint64_t seed = 0;

  void validate() const;
  double learning_rate(int step) const;
};

nlohmann::json to_json(const TrainConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct LabeledItem {
  ImageGrid image;
  LabelRaster labels;
};

struct UnlabeledItem {
  ImageGrid image;
  DepthRaster disparity;  // depth estimate used for DepthMix
};

struct TrainData {
  std::vector<LabeledItem> labeled;
  std::vector<UnlabeledItem> unlabeled;
  std::vector<SdeExample> sequences;
  Intrinsics intrinsics{};
  // Frozen features for L_F; required when sde_pretrain runs with lambda_f > 0.
  const ReferenceFeatures* reference = nullptr;
};

struct MetricRow {
  int step = 0;
  double loss = 0.0;
  double ce_labeled = 0.0;
  double ce_mixed = 0.0;
  double lambda_p = 0.0;
  double sde = 0.0;
  double feature = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  ModelParams params;
  TeacherState teacher;
  std::vector<MetricRow> log;
};

// Runs `config.iterations` optimisation steps from `init`. Every draw comes
// from Rng(config.seed) split per step, so results are reproducible and do
// not depend on the thread count.
TrainResult train(const TrainConfig& config, const ModelParams& init, const TrainData& data);

std::string metrics_csv(const std::vector<MetricRow>& log);

// One mixed sample as the ssl loop builds it, exposed for previews.
struct MixedTrainingSample {
  ImageGrid image;
  LabelRaster labels;
  ImageGrid confidence;
  Mask mask;
  int i = 0;
  int j = 0;
  double lambda_p = 0.0;
};

MixedTrainingSample make_mixed_sample(const TeacherState& teacher, const std::vector<UnlabeledItem>& pool,
                                      const TrainConfig& config, numgrid::Rng rng);

// -------------------------------------------------------------- evaluation

struct EvalReport {
  int num_classes = 0;
  std::vector<std::int64_t> confusion;  // row = ground truth, column = prediction
  std::int64_t pixels = 0;
  double pixel_accuracy = 0.0;
  // NaN for classes absent from both ground truth and prediction.
  std::vector<double> iou;
  // Mean over classes with a non-empty union.
  double miou = 0.0;
};

EvalReport evaluate_predictions(const std::vector<LabelRaster>& predictions,
                                const std::vector<LabelRaster>& truth, int num_classes);
EvalReport evaluate(const ModelParams& params, const std::vector<LabeledItem>& samples);
LabelRaster predict(const ModelParams& params, const ImageGrid& image);

nlohmann::json to_json(const EvalReport& r);

}  // namespace depthlab::learner
