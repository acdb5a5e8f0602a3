#include "depthlab/selection/selection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

#include "depthlab/errors.hpp"
#include "depthlab/learner/losses.hpp"
#include "depthlab/numgrid/optim.hpp"
#include "depthlab/numgrid/parallel.hpp"
#include "depthlab/numgrid/rng.hpp"

namespace depthlab::selection {

using numgrid::Rng;

ImageGrid pool_features(const ImageGrid& fm) {
  const int H = fm.height(), W = fm.width(), C = fm.channels();
  if (H < kPoolHeight || W < kPoolWidth) throw ConfigError("pool_features: feature map smaller than 8x4");
  ImageGrid out(kPoolHeight, kPoolWidth, C);
  for (int i = 0; i < kPoolHeight; ++i) {
    const int y0 = i * H / kPoolHeight, y1 = (i + 1) * H / kPoolHeight;
    for (int j = 0; j < kPoolWidth; ++j) {
      const int x0 = j * W / kPoolWidth, x1 = (j + 1) * W / kPoolWidth;
      const double inv = 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
          for (int c = 0; c < C; ++c) out.at(i, j, c) += fm.at(y, x, c);
      for (int c = 0; c < C; ++c) out.at(i, j, c) *= inv;
    }
  }
  return out;
}

PoolStats compute_pool_stats(const std::vector<ImageGrid>& pooled) {
  if (pooled.empty()) throw ConfigError("compute_pool_stats: empty dataset");
  const int C = pooled[0].channels();
  PoolStats s;
  s.mean.assign(static_cast<std::size_t>(C), 0.0);
  s.stddev.assign(static_cast<std::size_t>(C), 0.0);
  double n = 0.0;
  for (const auto& p : pooled) {
    if (p.channels() != C) throw ConfigError("compute_pool_stats: channel count mismatch");
    for (int q = 0; q < p.pixels(); ++q)
      for (int c = 0; c < C; ++c) s.mean[static_cast<std::size_t>(c)] += p.values()[static_cast<std::size_t>(q * C + c)];
    n += p.pixels();
  }
  for (double& m : s.mean) m /= n;
  for (const auto& p : pooled)
    for (int q = 0; q < p.pixels(); ++q)
      for (int c = 0; c < C; ++c) {
        const double d = p.values()[static_cast<std::size_t>(q * C + c)] - s.mean[static_cast<std::size_t>(c)];
        s.stddev[static_cast<std::size_t>(c)] += d * d;
      }
  for (double& v : s.stddev) v = std::max(std::sqrt(v / n), 1e-8);
  return s;
}

Descriptor extract_descriptor(const ImageGrid& feature_map, const PoolStats& stats, const std::string& sample_id) {
  if (stats.empty()) throw ConfigError("extract_descriptor: empty pool statistics");
  const ImageGrid p = pool_features(feature_map);
  const auto C = static_cast<std::size_t>(p.channels());
  if (stats.mean.size() != C || stats.stddev.size() != C)
    throw ConfigError("extract_descriptor: statistics channel count mismatch");
  Descriptor d{sample_id, std::vector<double>(p.values().begin(), p.values().end())};
  for (std::size_t i = 0; i < d.vector.size(); ++i) d.vector[i] = (d.vector[i] - stats.mean[i % C]) / stats.stddev[i % C];
  return d;
}

double squared_distance(const Descriptor& a, const Descriptor& b) {
  if (a.vector.size() != b.vector.size()) throw ConfigError("descriptor length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.vector.size(); ++i) s += (a.vector[i] - b.vector[i]) * (a.vector[i] - b.vector[i]);
  return s;
}

namespace {

void require_indices(const std::vector<Descriptor>& all, const std::vector<int>& unlabeled,
                     const std::vector<int>& selected) {
  if (unlabeled.empty()) throw ConfigError("selection: candidate pool is empty");
  if (selected.empty()) throw ConfigError("selection: annotated set is empty; use the seeded first pick");
  for (const auto* v : {&unlabeled, &selected})
    for (int i : *v)
      if (i < 0 || i >= static_cast<int>(all.size())) throw ConfigError("selection: index out of range");
}

double min_distance(const std::vector<Descriptor>& all, int i, const std::vector<int>& selected) {
  double best = std::numeric_limits<double>::infinity();
  for (int s : selected) best = std::min(best, squared_distance(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(s)]));
  return std::sqrt(best);
}

// Strictly greater wins, so among equal scores the lowest index stays.
int argmax_lowest(const std::vector<int>& candidates, const std::vector<double>& score) {
  int best = -1;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const int i = candidates[k];
    if (best < 0 || score[k] > best_score || (score[k] == best_score && i < best)) {
      best = i;
      best_score = score[k];
    }
  }
  return best;
}

}  // namespace

int fps_next(const std::vector<Descriptor>& all, const std::vector<int>& unlabeled, const std::vector<int>& selected) {
  require_indices(all, unlabeled, selected);
  std::vector<double> score(unlabeled.size());
  for (std::size_t k = 0; k < unlabeled.size(); ++k) score[k] = min_distance(all, unlabeled[k], selected);
  return argmax_lowest(unlabeled, score);
}

double uncertainty_score(const DepthRaster& teacher, const DepthRaster& student) {
  if (teacher.height != student.height || teacher.width != student.width)
    throw ConfigError("uncertainty_score: size mismatch");
  if (teacher.pixels() == 0) throw ConfigError("uncertainty_score: empty raster");
  double s = 0.0;
  for (std::size_t p = 0; p < teacher.values.size(); ++p) {
    const double a = teacher.values[p], b = student.values[p];
    if (a < 0.0 || b < 0.0) throw ConfigError("uncertainty_score: negative disparity");
    s += std::abs(std::log1p(a) - std::log1p(b));
  }
  return s / static_cast<double>(teacher.values.size());
}

int combined_next(const std::vector<Descriptor>& all, const std::vector<int>& unlabeled,
                  const std::vector<int>& selected, const std::vector<double>& scores, double lambda_e) {
  require_indices(all, unlabeled, selected);
  if (scores.size() != all.size()) throw ConfigError("combined_next: one score per sample required");
  std::vector<double> score(unlabeled.size());
  for (std::size_t k = 0; k < unlabeled.size(); ++k) {
    const double e = scores[static_cast<std::size_t>(unlabeled[k])];
    if (std::isnan(e)) throw ConfigError("combined_next: missing uncertainty score");
    score[k] = min_distance(all, unlabeled[k], selected) + lambda_e * e;
  }
  return argmax_lowest(unlabeled, score);
}

// -------------------------------------------------------------- student

numgrid::ModelConfig StudentConfig::slim_model() {
  numgrid::ModelConfig c;
  c.encoder_channels = {4, 8, 8};
  c.decoder_channels = {8, 4};
  c.has_seg_head = false;
  return c;
}

int StudentConfig::iterations_for_step(int step) const {
  if (iterations_per_step.empty()) return iterations;
  const auto i = static_cast<std::size_t>(std::clamp(step - 1, 0, static_cast<int>(iterations_per_step.size()) - 1));
  return iterations_per_step[i];
}

ModelParams train_student(const std::vector<ImageGrid>& images, const std::vector<DepthRaster>& teacher_disp,
                          const std::vector<int>& members, const StudentConfig& config, int iterations,
                          std::uint64_t seed) {
  if (images.size() != teacher_disp.size()) throw ConfigError("train_student: one teacher disparity per image");
  if (members.empty()) throw ConfigError("train_student: empty training set");
  if (iterations < 0 || config.batch < 1) throw ConfigError("train_student: bad iteration count or batch");
  const Rng root(seed);
  ModelParams params = ModelParams::init(config.model, root.split("init").key());
  numgrid::SgdState state;
  const numgrid::SgdConfig sgd{config.lr, config.momentum, 0.0, config.clip_norm, {1.0, 1.0, 1.0}};
  for (int it = 0; it < iterations; ++it) {
    Rng rng = root.split("batch").split(static_cast<std::uint64_t>(it));
    std::vector<int> batch;
    for (int b = 0; b < config.batch; ++b) batch.push_back(members[rng.below(members.size())]);
    std::vector<numgrid::ForwardResult> fwd(batch.size());
    numgrid::parallel_for(static_cast<int>(batch.size()), [&](int b) {
      fwd[static_cast<std::size_t>(b)] =
          numgrid::forward(params, images[static_cast<std::size_t>(batch[static_cast<std::size_t>(b)])], {false, true});
    });
    std::vector<ImageGrid> pred, target;
    std::vector<numgrid::Mask> valid;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const DepthRaster& t = teacher_disp[static_cast<std::size_t>(batch[b])];
      pred.push_back(fwd[b].outputs.disparity);
      target.push_back(t.to_grid());
      numgrid::Mask m(t.height, t.width);
      for (std::size_t p = 0; p < t.valid.size(); ++p) m.set(p, t.valid[p] != 0);
      valid.push_back(std::move(m));
    }
    const learner::BatchLoss loss = learner::berhu(pred, target, valid);
    numgrid::require_finite(loss.value, "student berhu");
    numgrid::GradBundle total = numgrid::GradBundle::zeros_like(params);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      numgrid::OutputGrads og;
      og.disparity = loss.grads[b];
      total.add(numgrid::backward(params, fwd[b].cache, og));
    }
    numgrid::sgd_step(params, total, sgd, state);
  }
  return params;
}

DepthRaster student_disparity(const ModelParams& student, const ImageGrid& image) {
  return DepthRaster::from_grid(numgrid::tiny_net_forward(student, image, {false, true}).disparity,
                                geometry::DepthKind::kDisparity);
}

// -------------------------------------------------------------- driver

void SelectionConfig::validate(int pool_size) const {
  if (n_annotate < 1) throw ConfigError("selection.n_annotate must be >= 1");
  if (n_annotate > pool_size) throw ConfigError("selection.n_annotate exceeds the pool size");
  if (schedule.empty()) throw ConfigError("selection.schedule must not be empty");
  int sum = 0;
  for (int n : schedule) {
    if (n < 1) throw ConfigError("selection.schedule entries must be >= 1");
    sum += n;
  }
  if (sum != n_annotate)
    throw ConfigError("selection.schedule sums to " + std::to_string(sum) + " but n_annotate is " +
                      std::to_string(n_annotate));
  if (lambda_e < 0.0) throw ConfigError("selection.lambda_e must be >= 0");
}

nlohmann::json to_json(const SelectionConfig& c) {
  return {{"n_annotate", c.n_annotate},
          {"schedule", c.schedule},
          {"lambda_e", c.lambda_e},
          {"seed", c.seed},
          {"student",
           {{"model", numgrid::to_json(c.student.model)},
            {"iterations", c.student.iterations},
            {"iterations_per_step", c.student.iterations_per_step},
            {"batch", c.student.batch},
            {"lr", c.student.lr},
            {"momentum", c.student.momentum},
            {"clip_norm", c.student.clip_norm}}}};
}

SelectionConfig selection_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"n_annotate", "schedule", "lambda_e", "seed", "student"};
  static const std::set<std::string> known_student = {"model",    "iterations", "iterations_per_step", "batch",
                                                      "lr",       "momentum",   "clip_norm"};
  if (!j.is_object()) throw ConfigError("selection: expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError("selection." + it.key() + ": unknown field");
  SelectionConfig c;
  try {
    c.n_annotate = j.value("n_annotate", c.n_annotate);
    c.schedule = j.value("schedule", c.schedule);
    c.lambda_e = j.value("lambda_e", c.lambda_e);
    c.seed = j.value("seed", c.seed);
    if (j.contains("student")) {
      const auto& s = j.at("student");
      for (auto it = s.begin(); it != s.end(); ++it)
        if (!known_student.count(it.key())) throw ConfigError("selection.student." + it.key() + ": unknown field");
      if (s.contains("model")) c.student.model = numgrid::model_config_from_json(s.at("model"));
      c.student.iterations = s.value("iterations", c.student.iterations);
      c.student.iterations_per_step = s.value("iterations_per_step", c.student.iterations_per_step);
      c.student.batch = s.value("batch", c.student.batch);
      c.student.lr = s.value("lr", c.student.lr);
      c.student.momentum = s.value("momentum", c.student.momentum);
      c.student.clip_norm = s.value("clip_norm", c.student.clip_norm);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("selection: wrong field type (") + e.what() + ")");
  }
  if (c.schedule.empty() && c.n_annotate > 0) c.schedule = scaled_schedule(c.n_annotate);
  return c;
}

std::vector<int> scaled_schedule(int n_annotate) {
  if (n_annotate < 1) throw ConfigError("scaled_schedule: n_annotate must be >= 1");
  static const int kTargets[] = {25, 50, 100, 200, 372, 744};
  std::vector<int> out;
  int prev = 0;
  for (int target : kTargets) {
    int cum = static_cast<int>(std::lround(static_cast<double>(target) * n_annotate / 744.0));
    cum = std::min(std::max(cum, prev + 1), n_annotate);
    if (cum > prev) out.push_back(cum - prev);
    prev = cum;
    if (prev == n_annotate) break;
  }
  if (prev < n_annotate) out.back() += n_annotate - prev;
  return out;
}

SelectionResult run_selection(const SelectionInputs& in, const SelectionConfig& config) {
  const int N = static_cast<int>(in.ids.size());
  if (static_cast<int>(in.descriptors.size()) != N || static_cast<int>(in.images.size()) != N ||
      static_cast<int>(in.teacher_disparity.size()) != N)
    throw ConfigError("run_selection: inputs must all have one entry per sample");
  config.validate(N);

  const Rng root(config.seed);
  SelectionResult r;
  std::vector<char> taken(static_cast<std::size_t>(N), 0);
  std::vector<double> min_dist(static_cast<std::size_t>(N), std::numeric_limits<double>::infinity());
  std::vector<double> E(static_cast<std::size_t>(N), std::numeric_limits<double>::quiet_NaN());

  auto add = [&](int i, int step, double div, double unc, double lambda) {
    taken[static_cast<std::size_t>(i)] = 1;
    r.annotated.push_back(i);
    r.annotated_ids.push_back(in.ids[static_cast<std::size_t>(i)]);
    r.trace.push_back({step, static_cast<int>(r.annotated.size()), in.ids[static_cast<std::size_t>(i)], i, div, unc, lambda});
    numgrid::parallel_for(N, [&](int u) {
      if (taken[static_cast<std::size_t>(u)]) return;
      const double d = std::sqrt(squared_distance(in.descriptors[static_cast<std::size_t>(u)], in.descriptors[static_cast<std::size_t>(i)]));
      min_dist[static_cast<std::size_t>(u)] = std::min(min_dist[static_cast<std::size_t>(u)], d);
    });
  };

  Rng first = root.split("first");
  add(static_cast<int>(first.below(static_cast<std::uint64_t>(N))), 1, 0.0, 0.0, 0.0);

  int t = 1;
  int boundary = config.schedule[0];
  const int T = static_cast<int>(config.schedule.size());
  for (int k = 2; k <= config.n_annotate; ++k) {
    if (t <= T && k == boundary) {
      const ModelParams student =
          train_student(in.images, in.teacher_disparity, r.annotated, config.student,
                        config.student.iterations_for_step(t), root.split("student").split(static_cast<std::uint64_t>(t)).key());
      numgrid::parallel_for(N, [&](int u) {
        if (taken[static_cast<std::size_t>(u)]) return;
        E[static_cast<std::size_t>(u)] = uncertainty_score(in.teacher_disparity[static_cast<std::size_t>(u)],
                                                           student_disparity(student, in.images[static_cast<std::size_t>(u)]));
      });
      ++t;
      if (t <= T) boundary += config.schedule[static_cast<std::size_t>(t - 1)];
    }
    const double lambda = t == 1 ? 0.0 : config.lambda_e;
    int best = -1;
    double best_score = 0.0;
    for (int u = 0; u < N; ++u) {
      if (taken[static_cast<std::size_t>(u)]) continue;
      const double s = min_dist[static_cast<std::size_t>(u)] + (t == 1 ? 0.0 : lambda * E[static_cast<std::size_t>(u)]);
      if (best < 0 || s > best_score) {
        best = u;
        best_score = s;
      }
    }
    add(best, t, min_dist[static_cast<std::size_t>(best)], t == 1 ? 0.0 : E[static_cast<std::size_t>(best)], lambda);
  }
  return r;
}

SelectionResult random_selection(const std::vector<std::string>& ids, int n_annotate, std::uint64_t seed) {
  const int N = static_cast<int>(ids.size());
  if (n_annotate < 1 || n_annotate > N) throw ConfigError("random_selection: n_annotate out of range");
  Rng rng = Rng(seed).split("random");
  const std::vector<int> perm = numgrid::permutation(N, rng);
  SelectionResult r;
  for (int k = 0; k < n_annotate; ++k) {
    const int i = perm[static_cast<std::size_t>(k)];
    r.annotated.push_back(i);
    r.annotated_ids.push_back(ids[static_cast<std::size_t>(i)]);
    r.trace.push_back({0, k + 1, ids[static_cast<std::size_t>(i)], i, 0.0, 0.0, 0.0});
  }
  return r;
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::string out = "step,k,chosen_id,diversity_term,uncertainty_term,lambda_E\n";
  char buf[256];
  for (const auto& row : trace) {
    std::snprintf(buf, sizeof buf, "%d,%d,%s,%.10g,%.10g,%.10g\n", row.step, row.k, row.chosen_id.c_str(), row.diversity,
                  row.uncertainty, row.lambda_e);
    out += buf;
  }
  return out;
}

nlohmann::json annotated_json(const SelectionResult& r) { return {{"annotated", r.annotated_ids}}; }

}  // namespace depthlab::selection
