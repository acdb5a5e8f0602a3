#include "depthlab/learner/train.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

#include "depthlab/errors.hpp"
#include "depthlab/numgrid/parallel.hpp"

namespace depthlab::learner {

using numgrid::Rng;

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kSupervised: return "supervised";
    case TrainMode::kSsl: return "ssl";
    case TrainMode::kSdePretrain: return "sde_pretrain";
    case TrainMode::kMultitask: return "multitask";
  }
  return "?";
}

std::string to_string(MixKind kind) {
  switch (kind) {
    case MixKind::kDepthMix: return "depthmix";
    case MixKind::kClassMix: return "classmix";
    case MixKind::kNone: return "none";
  }
  return "?";
}

TrainMode train_mode_from_string(const std::string& s) {
  for (auto m : {TrainMode::kSupervised, TrainMode::kSsl, TrainMode::kSdePretrain, TrainMode::kMultitask})
    if (to_string(m) == s) return m;
  throw ConfigError("train.mode: unknown mode '" + s + "'");
}

MixKind mix_kind_from_string(const std::string& s) {
  for (auto m : {MixKind::kDepthMix, MixKind::kClassMix, MixKind::kNone})
    if (to_string(m) == s) return m;
  throw ConfigError("train.mix: unknown mix '" + s + "'");
}

void TrainConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("train." + msg);
  };
  need(iterations >= 0, "iterations must be >= 0");
  need(labeled_batch >= 1 && mixed_batch >= 1 && sde_batch >= 1, "batch sizes must be >= 1");
  need(lr > 0.0, "lr must be > 0");
  for (double s : group_lr_scale) need(s >= 0.0, "group_lr_scale entries must be >= 0");
  need(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
  need(weight_decay >= 0.0, "weight_decay must be >= 0");
  need(decay_step >= 0, "decay_step must be >= 0");
  need(decay_factor > 0.0, "decay_factor must be > 0");
  need(tau > 0.0 && tau < 1.0, "tau must be in (0, 1)");
  need(alpha >= 0.0 && alpha <= 1.0, "alpha must be in [0, 1]");
  need(epsilon >= 0.0, "epsilon must be >= 0");
  need(jitter.brightness >= 0.0 && jitter.contrast >= 0.0 && jitter.saturation >= 0.0, "jitter must be >= 0");
  need(blur_sigma >= 0.0, "blur_sigma must be >= 0");
  need(lambda_f >= 0.0, "lambda_f must be >= 0");
  need(sde.scales == 1 || sde.scales == 2, "sde.scales must be 1 or 2");
  need(sde.d_min > 0.0 && sde.d_max > sde.d_min, "sde depth range must satisfy 0 < d_min < d_max");
  need(sde.smoothness_weight >= 0.0, "sde.smoothness_weight must be >= 0");
}

double TrainConfig::learning_rate(int step) const {
  return decay_step > 0 && step >= decay_step ? lr * decay_factor : lr;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"mode", to_string(c.mode)},
          {"mix", to_string(c.mix)},
          {"iterations", c.iterations},
          {"labeled_batch", c.labeled_batch},
          {"mixed_batch", c.mixed_batch},
          {"sde_batch", c.sde_batch},
          {"lr", c.lr},
          {"group_lr_scale", c.group_lr_scale},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"clip_norm", c.clip_norm},
          {"decay_step", c.decay_step},
          {"decay_factor", c.decay_factor},
          {"tau", c.tau},
          {"alpha", c.alpha},
          {"epsilon", c.epsilon},
          {"augment", c.augment},
          {"jitter", {c.jitter.brightness, c.jitter.contrast, c.jitter.saturation}},
          {"blur_sigma", c.blur_sigma},
          {"lambda_f", c.lambda_f},
          {"sde",
           {{"d_min", c.sde.d_min},
            {"d_max", c.sde.d_max},
            {"smoothness_weight", c.sde.smoothness_weight},
            {"scales", c.sde.scales},
            {"auto_mask", c.sde.auto_mask},
            {"ssim_weight", c.sde.photometric.ssim},
            {"l1_weight", c.sde.photometric.l1}}},
          {"seed", c.seed}};
}

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError(where + "." + it.key() + ": unknown field");
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

}  // namespace

TrainConfig train_config_from_json(const nlohmann::json& j) {
  const std::string w = "train";
  reject_unknown(j, {"mode", "mix", "iterations", "labeled_batch", "mixed_batch", "sde_batch", "lr",
                     "group_lr_scale", "momentum", "weight_decay", "clip_norm", "decay_step", "decay_factor",
                     "tau", "alpha", "epsilon", "augment", "jitter", "blur_sigma", "lambda_f", "sde", "seed"},
                 w);
  TrainConfig c;
  std::string s;
  if (j.contains("mode")) {
    read(j, "mode", s, w);
    c.mode = train_mode_from_string(s);
  }
  if (j.contains("mix")) {
    read(j, "mix", s, w);
    c.mix = mix_kind_from_string(s);
  }
  read(j, "iterations", c.iterations, w);
  read(j, "labeled_batch", c.labeled_batch, w);
  read(j, "mixed_batch", c.mixed_batch, w);
  read(j, "sde_batch", c.sde_batch, w);
  read(j, "lr", c.lr, w);
  read(j, "group_lr_scale", c.group_lr_scale, w);
  read(j, "momentum", c.momentum, w);
  read(j, "weight_decay", c.weight_decay, w);
  read(j, "clip_norm", c.clip_norm, w);
  read(j, "decay_step", c.decay_step, w);
  read(j, "decay_factor", c.decay_factor, w);
  read(j, "tau", c.tau, w);
  read(j, "alpha", c.alpha, w);
  read(j, "epsilon", c.epsilon, w);
  read(j, "augment", c.augment, w);
  if (j.contains("jitter")) {
    std::array<double, 3> jt{};
    read(j, "jitter", jt, w);
    c.jitter = {jt[0], jt[1], jt[2]};
  }
  read(j, "blur_sigma", c.blur_sigma, w);
  read(j, "lambda_f", c.lambda_f, w);
  read(j, "seed", c.seed, w);
  if (j.contains("sde")) {
    const auto& d = j.at("sde");
    const std::string ws = w + ".sde";
    reject_unknown(d, {"d_min", "d_max", "smoothness_weight", "scales", "auto_mask", "ssim_weight", "l1_weight"}, ws);
    read(d, "d_min", c.sde.d_min, ws);
    read(d, "d_max", c.sde.d_max, ws);
    read(d, "smoothness_weight", c.sde.smoothness_weight, ws);
    read(d, "scales", c.sde.scales, ws);
    read(d, "auto_mask", c.sde.auto_mask, ws);
    read(d, "ssim_weight", c.sde.photometric.ssim, ws);
    read(d, "l1_weight", c.sde.photometric.l1, ws);
  }
  c.validate();
  return c;
}

MixedTrainingSample make_mixed_sample(const TeacherState& teacher, const std::vector<UnlabeledItem>& pool,
                                      const TrainConfig& config, Rng rng) {
  const int n = static_cast<int>(pool.size());
  if (n < 2) throw ConfigError("train: mixing needs at least 2 unlabeled images");
  MixedTrainingSample out;
  out.i = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
  out.j = static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 1)));
  if (out.j >= out.i) ++out.j;
  const UnlabeledItem& a = pool[static_cast<std::size_t>(out.i)];
  const UnlabeledItem& b = pool[static_cast<std::size_t>(out.j)];
  const PseudoLabels pa = pseudo_label(teacher, a.image);

  if (config.mix == MixKind::kNone) {
    out.mask = Mask(a.image.height(), a.image.width(), true);
    out.image = a.image;
    out.labels = pa.labels;
    out.confidence = pa.confidence;
  } else {
    const PseudoLabels pb = pseudo_label(teacher, b.image);
    out.mask = config.mix == MixKind::kDepthMix ? depthmix::depthmix_mask(a.disparity, b.disparity, config.epsilon)
                                                : depthmix::classmix_mask(pa.labels, rng);
    out.image = depthmix::composite(a.image, b.image, out.mask);
    out.labels = depthmix::composite(pa.labels, pb.labels, out.mask);
    out.confidence = depthmix::composite(pa.confidence, pb.confidence, out.mask);
  }
  out.lambda_p = confidence_weight(out.confidence, config.tau);
  if (config.augment) out.image = depthmix::photometric_augment(out.image, config.jitter, config.blur_sigma, rng);
  return out;
}

namespace {

struct StepLoss {
  MetricRow row;
  GradBundle grads;
};

template <typename T>
std::vector<T> draw(const std::vector<T>& pool, int k, Rng& rng, const char* what) {
  if (pool.empty()) throw ConfigError(std::string("train: no ") + what + " data for this mode");
  std::vector<T> out;
  for (int b = 0; b < k; ++b) out.push_back(pool[rng.below(pool.size())]);
  return out;
}

// Mean of L_D (+ lambda_F L_F) over a batch of sequence examples.
void add_depth_terms(const TrainConfig& cfg, const ModelParams& params, const TrainData& data, Rng rng,
                     StepLoss& s) {
  const auto batch = draw(data.sequences, cfg.sde_batch, rng, "sequence");
  const ReferenceFeatures* ref = cfg.lambda_f > 0.0 ? data.reference : nullptr;
  std::vector<PretrainLoss> parts(batch.size());
  numgrid::parallel_for(static_cast<int>(batch.size()), [&](int b) {
    parts[static_cast<std::size_t>(b)] =
        pretrain_loss(params, batch[static_cast<std::size_t>(b)], data.intrinsics, cfg.sde, ref, ref ? cfg.lambda_f : 0.0);
  });
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& p : parts) {
    s.row.sde += p.sde * inv;
    s.row.feature += p.feature * inv;
    s.row.loss += p.value * inv;
    s.grads.add(p.grads, inv);
  }
}

StepLoss step_loss(const TrainConfig& cfg, const ModelParams& params, const TeacherState& teacher,
                   const TrainData& data, int step) {
  Rng rng = Rng(cfg.seed).split("train").split(static_cast<std::uint64_t>(step));
  StepLoss s;
  s.grads = GradBundle::zeros_like(params);
  auto labeled_batch = [&](std::vector<ImageGrid>& images, std::vector<LabelRaster>& labels) {
    Rng r = rng.split("labeled");
    for (const auto& item : draw(data.labeled, cfg.labeled_batch, r, "labeled")) {
      images.push_back(item.image);
      labels.push_back(item.labels);
    }
  };

  switch (cfg.mode) {
    case TrainMode::kSupervised: {
      std::vector<ImageGrid> im;
      std::vector<LabelRaster> lb;
      labeled_batch(im, lb);
      ModelLoss l = supervised_loss(params, im, lb);
      s.row.loss = s.row.ce_labeled = l.value;
      s.grads = std::move(l.grads);
      break;
    }
    case TrainMode::kSsl: {
      std::vector<ImageGrid> im, mi;
      std::vector<LabelRaster> lb, ml;
      labeled_batch(im, lb);
      if (data.unlabeled.size() < 2) throw ConfigError("train: ssl mode needs unlabeled data");
      const Rng mix_rng = rng.split("mix");
      std::vector<MixedTrainingSample> mixed(static_cast<std::size_t>(cfg.mixed_batch));
      numgrid::parallel_for(cfg.mixed_batch, [&](int b) {
        mixed[static_cast<std::size_t>(b)] =
            make_mixed_sample(teacher, data.unlabeled, cfg, mix_rng.split(static_cast<std::uint64_t>(b)));
      });
      double lp = 0.0;
      for (auto& m : mixed) {
        mi.push_back(std::move(m.image));
        ml.push_back(std::move(m.labels));
        lp += m.lambda_p;
      }
      lp /= static_cast<double>(mixed.size());
      SslLoss l = ssl_loss(params, im, lb, mi, ml, lp);
      s.row.loss = l.value;
      s.row.ce_labeled = l.supervised;
      s.row.ce_mixed = l.unsupervised;
      s.row.lambda_p = lp;
      s.grads = std::move(l.grads);
      break;
    }
    case TrainMode::kSdePretrain:
      if (cfg.lambda_f > 0.0 && data.reference == nullptr)
        throw ConfigError("train: sde_pretrain with lambda_f > 0 needs reference features");
      add_depth_terms(cfg, params, data, rng.split("sequence"), s);
      break;
    case TrainMode::kMultitask: {
      std::vector<ImageGrid> im;
      std::vector<LabelRaster> lb;
      labeled_batch(im, lb);
      ModelLoss l = supervised_loss(params, im, lb);
      s.row.ce_labeled = l.value;
      s.grads = std::move(l.grads);
      add_depth_terms(cfg, params, data, rng.split("sequence"), s);
      s.row.loss += l.value;
      break;
    }
  }
  numgrid::require_finite(s.row.loss, "train loss");
  return s;
}

}  // namespace

TrainResult train(const TrainConfig& config, const ModelParams& init, const TrainData& data) {
  config.validate();
  TrainResult r{init, TeacherState{init, config.alpha}, {}};
  numgrid::SgdState state;
  for (int step = 0; step < config.iterations; ++step) {
    StepLoss s = step_loss(config, r.params, r.teacher, data, step);
    const numgrid::SgdConfig sgd{config.learning_rate(step), config.momentum, config.weight_decay,
                                 config.clip_norm, config.group_lr_scale};
    numgrid::sgd_step(r.params, s.grads, sgd, state);
    if (config.mode == TrainMode::kSsl) ema_update_inplace(r.teacher, r.params);
    s.row.step = step;
    s.row.lr = sgd.lr;
    r.log.push_back(s.row);
  }
  if (config.mode != TrainMode::kSsl) r.teacher.params = r.params;
  return r;
}

std::string metrics_csv(const std::vector<MetricRow>& log) {
  std::string out = "step,loss,ce_labeled,ce_mixed,lambda_p,sde,feature,lr\n";
  char buf[256];
  for (const auto& m : log) {
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", m.step, m.loss, m.ce_labeled,
                  m.ce_mixed, m.lambda_p, m.sde, m.feature, m.lr);
    out += buf;
  }
  return out;
}

// -------------------------------------------------------------- evaluation

EvalReport evaluate_predictions(const std::vector<LabelRaster>& predictions,
                                const std::vector<LabelRaster>& truth, int num_classes) {
  if (predictions.size() != truth.size()) throw ConfigError("evaluate: prediction count mismatch");
  if (num_classes < 1) throw ConfigError("evaluate: num_classes must be >= 1");
  const auto C = static_cast<std::size_t>(num_classes);
  EvalReport r;
  r.num_classes = num_classes;
  r.confusion.assign(C * C, 0);
  for (std::size_t k = 0; k < truth.size(); ++k) {
    if (predictions[k].height() != truth[k].height() || predictions[k].width() != truth[k].width())
      throw ConfigError("evaluate: size mismatch");
    for (int p = 0; p < truth[k].pixels(); ++p) {
      const int t = truth[k].values()[static_cast<std::size_t>(p)];
      if (t == numgrid::kIgnoreLabel) continue;
      const int q = predictions[k].values()[static_cast<std::size_t>(p)];
      if (t < 0 || t >= num_classes || q < 0 || q >= num_classes)
        throw ConfigError("evaluate: label out of range");
      ++r.confusion[static_cast<std::size_t>(t) * C + static_cast<std::size_t>(q)];
      ++r.pixels;
    }
  }
  std::int64_t correct = 0;
  double sum = 0.0;
  int present = 0;
  for (std::size_t c = 0; c < C; ++c) {
    std::int64_t row = 0, col = 0;
    for (std::size_t k = 0; k < C; ++k) {
      row += r.confusion[c * C + k];
      col += r.confusion[k * C + c];
    }
    const std::int64_t tp = r.confusion[c * C + c];
    correct += tp;
    const std::int64_t uni = row + col - tp;
    if (uni == 0) {
      r.iou.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    r.iou.push_back(static_cast<double>(tp) / static_cast<double>(uni));
    sum += r.iou.back();
    ++present;
  }
  r.pixel_accuracy = r.pixels ? static_cast<double>(correct) / static_cast<double>(r.pixels) : 0.0;
  r.miou = present ? sum / present : 0.0;
  return r;
}

LabelRaster predict(const ModelParams& params, const ImageGrid& image) {
  return pseudo_label(numgrid::tiny_net_forward(params, image, {true, false}).seg_logits).labels;
}

EvalReport evaluate(const ModelParams& params, const std::vector<LabeledItem>& samples) {
  std::vector<LabelRaster> pred(samples.size()), truth;
  numgrid::parallel_for(static_cast<int>(samples.size()), [&](int k) {
    pred[static_cast<std::size_t>(k)] = predict(params, samples[static_cast<std::size_t>(k)].image);
  });
  for (const auto& s : samples) truth.push_back(s.labels);
  return evaluate_predictions(pred, truth, params.config.num_classes);
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json iou = nlohmann::json::array();
  for (double v : r.iou) iou.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
  return {{"num_classes", r.num_classes}, {"pixels", r.pixels},   {"pixel_accuracy", r.pixel_accuracy},
          {"iou", iou},                   {"miou", r.miou},       {"confusion", r.confusion}};
}

}  // namespace depthlab::learner
