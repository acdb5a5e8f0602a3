// Acceptance suite: one PASS/FAIL line per criterion. Optional arguments pick
// criteria by number ("acceptance 1 4 6"); DEPTHLAB_ACCEPTANCE_DIR sets where
// the pipeline runs of criteria 7 and 8 are written.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "depthlab/depthmix/depthmix.hpp"
#include "depthlab/learner/objectives.hpp"
#include "depthlab/numgrid/blob.hpp"
#include "depthlab/numgrid/gradcheck.hpp"
#include "depthlab/numgrid/rng.hpp"
#include "depthlab/pipeline/experiment.hpp"
#include "depthlab/scenes/scenes.hpp"
#include "depthlab/selection/selection.hpp"

using namespace depthlab;
using geometry::DepthKind;
using geometry::DepthRaster;
using numgrid::ImageGrid;
using numgrid::LabelRaster;
using numgrid::ModelParams;
using numgrid::Rng;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path work_dir() {
  const char* env = std::getenv("DEPTHLAB_ACCEPTANCE_DIR");
  return env ? fs::path(env) : fs::temp_directory_path() / "depthlab_acceptance";
}

ImageGrid random_image(int h, int w, int c, Rng rng, double lo = 0.0, double hi = 1.0) {
  ImageGrid g(h, w, c);
  for (double& v : g.values()) v = rng.uniform(lo, hi);
  return g;
}

LabelRaster random_labels(int h, int w, int C, Rng rng) {
  LabelRaster l(h, w);
  for (int& v : l.values()) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(C)));
  return l;
}

ImageGrid from_flat(std::span<const double> x, int h, int w, int c) {
  ImageGrid g(h, w, c);
  std::copy(x.begin(), x.end(), g.values().begin());
  return g;
}

ImageGrid smooth_image(int h, int w, double phase) {
  ImageGrid img(h, w, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = 0.5 + 0.3 * std::sin(0.7 * x + 0.4 * y + phase + c) + 0.1 * std::cos(0.5 * y * (c + 1));
  return img;
}

// ---------------------------------------------------------------- 1

Outcome criterion_depthmix_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  const double eps = depthmix::kDefaultEpsilon;
  int mismatched_pairs = 0, nonzero_dm = 0;
  std::size_t pixels = 0;
  for (int pair = 0; pair < 1000; ++pair) {
    const int h = rng.uniform_int(1, 32), w = rng.uniform_int(1, 64);
    const DepthKind kind = pair % 2 ? DepthKind::kDepth : DepthKind::kDisparity;
    const double lo = kind == DepthKind::kDepth ? 1.0 : 0.0, hi = kind == DepthKind::kDepth ? 60.0 : 1.0;
    DepthRaster di(h, w, kind), dj(h, w, kind);
    for (std::size_t p = 0; p < di.values.size(); ++p) {
      di.values[p] = rng.uniform(lo, hi);
      switch (rng.below(4)) {  // exercise the epsilon band edges
        case 0: dj.values[p] = di.values[p] + eps; break;
        case 1: dj.values[p] = di.values[p] - eps; break;
        case 2: dj.values[p] = di.values[p] + rng.uniform(-eps, eps); break;
        default: dj.values[p] = rng.uniform(lo, hi);
      }
    }
    const auto m = depthmix::depthmix_mask(di, dj, eps);
    bool same = true;
    for (std::size_t p = 0; p < di.values.size(); ++p) {
      const double a = di.values[p], b = dj.values[p];
      // Pixel of i is kept when it is nearer than, or level with, pixel of j.
      const bool expect = kind == DepthKind::kDepth ? a < b + eps : a > b - eps;
      same &= m[p] == expect;
    }
    pixels += di.values.size();
    mismatched_pairs += same ? 0 : 1;
    nonzero_dm += depthmix::violation_score(m, di, dj, eps) == 0.0 ? 0 : 1;
  }
  // Far-over-near ClassMix: every class of i lies behind all of j.
  int classmix_zero = 0;
  double min_cm = 1.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int h = 32, w = 64;
    DepthRaster di(h, w, DepthKind::kDepth), dj(h, w, DepthKind::kDepth);
    for (double& v : di.values) v = rng.uniform(30.0, 60.0);
    for (double& v : dj.values) v = rng.uniform(1.0, 10.0);
    LabelRaster si = random_labels(h, w, 2 + static_cast<int>(rng.below(4)), rng.split(static_cast<std::uint64_t>(trial)));
    Rng cm_rng = rng.split("classmix").split(static_cast<std::uint64_t>(trial));
    const auto cm = depthmix::classmix_mask(si, cm_rng);
    const double v = depthmix::violation_score(cm, di, dj, eps);
    min_cm = std::min(min_cm, v);
    classmix_zero += v > 0.0 ? 0 : 1;
  }
  const double t = seconds_since(t0);
  const bool pass = mismatched_pairs == 0 && nonzero_dm == 0 && classmix_zero == 0 && t < 10.0;
  return {pass, std::to_string(mismatched_pairs) + "/1000 pairs differ from brute force (" + std::to_string(pixels) +
                    " px); DepthMix masks with violation > 0: " + std::to_string(nonzero_dm) +
                    "; ClassMix far-over-near min violation " + fmt("%.4f", min_cm) + " (100 masks); " +
                    fmt("%.2f", t) + " s (limit 10 s)"};
}

// ---------------------------------------------------------------- 2

int brute_pick(const std::vector<selection::Descriptor>& d, const std::vector<int>& A, const std::vector<double>* E,
               double lambda) {
  int best = -1;
  double best_s = 0.0;
  for (int i = 0; i < static_cast<int>(d.size()); ++i) {
    if (std::find(A.begin(), A.end(), i) != A.end()) continue;
    double m = INFINITY;
    for (int a : A) {
      double s = 0.0;
      for (std::size_t k = 0; k < d[i].vector.size(); ++k) {
        const double diff = d[i].vector[k] - d[a].vector[k];
        s += diff * diff;
      }
      m = std::min(m, std::sqrt(s));
    }
    const double score = m + (E ? lambda * (*E)[i] : 0.0);
    if (best < 0 || score > best_s) {
      best = i;
      best_s = score;
    }
  }
  return best;
}

// Algorithm transcribed line by line: no incremental state besides A, t and E.
std::vector<int> straight_line_selection(const selection::SelectionInputs& in, const selection::SelectionConfig& cfg) {
  const int N = static_cast<int>(in.ids.size());
  const Rng root(cfg.seed);
  Rng first = root.split("first");
  std::vector<int> A = {static_cast<int>(first.below(static_cast<std::uint64_t>(N)))};
  int t = 1;
  std::vector<double> E(static_cast<std::size_t>(N), 0.0);
  for (int k = 2; k <= cfg.n_annotate; ++k) {
    int boundary = 0;
    for (int s = 0; s < t && s < static_cast<int>(cfg.schedule.size()); ++s) boundary += cfg.schedule[s];
    if (t <= static_cast<int>(cfg.schedule.size()) && k == boundary) {
      const ModelParams student =
          selection::train_student(in.images, in.teacher_disparity, A, cfg.student, cfg.student.iterations_for_step(t),
                                   root.split("student").split(static_cast<std::uint64_t>(t)).key());
      for (int u = 0; u < N; ++u) {
        if (std::find(A.begin(), A.end(), u) != A.end()) continue;
        const DepthRaster s = selection::student_disparity(student, in.images[u]);
        double e = 0.0;
        for (std::size_t p = 0; p < s.values.size(); ++p)
          e += std::abs(std::log(1.0 + in.teacher_disparity[u].values[p]) - std::log(1.0 + s.values[p]));
        E[u] = e / static_cast<double>(s.values.size());
      }
      ++t;
    }
    A.push_back(brute_pick(in.descriptors, A, t == 1 ? nullptr : &E, cfg.lambda_e));
  }
  return A;
}

Outcome criterion_selection_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const scenes::SceneSpec spec = scenes::default_scene_spec(17);
  selection::SelectionInputs in;
  std::vector<ImageGrid> pooled;
  for (int i = 0; i < 50; ++i) {
    const scenes::Sample s = scenes::generate_scene(spec, i);
    in.ids.push_back(s.id);
    in.images.push_back(s.image);
    in.teacher_disparity.push_back(geometry::depth_to_disparity(s.depth, spec.d_min, spec.d_max));
    pooled.push_back(selection::pool_features(in.teacher_disparity.back().to_grid()));
  }
  const selection::PoolStats stats = selection::compute_pool_stats(pooled);
  for (int i = 0; i < 50; ++i)
    in.descriptors.push_back(selection::extract_descriptor(in.teacher_disparity[i].to_grid(), stats, in.ids[i]));
  int agree = 0;
  std::string picks;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    selection::SelectionConfig cfg;
    cfg.n_annotate = 15;
    cfg.schedule = {5, 5, 5};
    cfg.seed = seed;
    const auto got = selection::run_selection(in, cfg).annotated;
    const auto want = straight_line_selection(in, cfg);
    agree += got == want ? 1 : 0;
    if (got != want) picks += " seed " + std::to_string(seed) + " diverges;";
  }
  const double t = seconds_since(t0);
  return {agree == 3 && t < 120.0, std::to_string(agree) + "/3 seeds match pick-for-pick (N=50, schedule [5,5,5]);" +
                                       picks + " " + fmt("%.1f", t) + " s (limit 120 s)"};
}

// ---------------------------------------------------------------- 3

Outcome criterion_cluster_coverage() {
  int hits = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng = Rng(77).split(static_cast<std::uint64_t>(trial));
    const int dim = 16, per = 20;
    std::vector<selection::Descriptor> pts;
    std::vector<int> cluster;
    for (int c = 0; c < 5; ++c) {
      std::vector<double> centre(dim);
      for (double& v : centre) v = 10.0 * rng.normal();
      for (int k = 0; k < per; ++k) {
        selection::Descriptor d;
        for (int q = 0; q < dim; ++q) d.vector.push_back(centre[q] + 0.5 * rng.normal());
        pts.push_back(d);
        cluster.push_back(c);
      }
    }
    std::vector<int> sel = {static_cast<int>(rng.below(pts.size()))};
    while (sel.size() < 5) {
      std::vector<int> rest;
      for (int i = 0; i < static_cast<int>(pts.size()); ++i)
        if (std::find(sel.begin(), sel.end(), i) == sel.end()) rest.push_back(i);
      sel.push_back(selection::fps_next(pts, rest, sel));
    }
    std::set<int> seen;
    for (int i : sel) seen.insert(cluster[i]);
    hits += seen.size() == 5 ? 1 : 0;
  }
  return {hits >= 95, std::to_string(hits) + "/100 trials cover all 5 clusters with the first 5 picks (need >= 95)"};
}

// ---------------------------------------------------------------- 4

Outcome criterion_gradients() {
  using namespace learner;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::pair<std::string, double>> results;
  auto record = [&](const std::string& name, const numgrid::GradcheckReport& r) {
    results.emplace_back(name, r.max_rel_err);
  };
  auto concat = [](const std::vector<ImageGrid>& gs) {
    std::vector<double> v;
    for (const auto& g : gs) v.insert(v.end(), g.values().begin(), g.values().end());
    return v;
  };
  Rng rng(4242);

  {  // photometric error, weighted by a random upstream
    const int H = 16, W = 16;
    const ImageGrid target = random_image(H, W, 3, rng.split(1)), warped = random_image(H, W, 3, rng.split(2));
    const ImageGrid up = random_image(H, W, 1, rng.split(3), 0.5, 1.5);
    numgrid::Mask valid(H, W, true);
    valid.set(3, 5, false);
    auto f = [&](std::span<const double> x) {
      const ImageGrid e = photometric_error(target, from_flat(x, H, W, 3), valid);
      double s = 0.0;
      for (std::size_t i = 0; i < e.size(); ++i) s += e.values()[i] * up.values()[i];
      return s;
    };
    record("photometric", numgrid::gradcheck(f, warped.values(),
                                             photometric_error_backward(target, warped, up, valid).values()));
  }
  {  // min-reprojection through the warp: L_D w.r.t. both disparity scales
    const int H = 16, W = 16;
    const geometry::Intrinsics K{16.0, 16.0, 7.5, 7.5};
    SdeExample ex{smooth_image(H, W, 0.0), {smooth_image(H, W, 0.3), smooth_image(H, W, -0.4)},
                  {geometry::Pose::from_yaw_translation(0.01, {0.05, 0.0, -0.1}),
                   geometry::Pose::from_yaw_translation(-0.02, {-0.04, 0.01, 0.1})}};
    const ImageGrid d = random_image(H, W, 1, rng.split(4), 0.3, 0.7);
    const ImageGrid dh = random_image(H / 2, W / 2, 1, rng.split(5), 0.3, 0.7);
    const SdeConfig cfg{.d_min = 1.0, .d_max = 10.0, .auto_mask = false};
    const SdeTerms t = sde_terms(d, dh, ex, K, cfg);
    const std::size_t n = d.size();
    auto f = [&](std::span<const double> v) {
      return sde_terms(from_flat(v.subspan(0, n), H, W, 1), from_flat(v.subspan(n), H / 2, W / 2, 1), ex, K, cfg)
          .value;
    };
    record("min-reprojection (L_D)", numgrid::gradcheck(f, concat({d, dh}), concat({t.grad_disparity, t.grad_disparity_half})));
  }
  {  // min-reprojection on its own, w.r.t. per-source errors
    const int H = 16, W = 16;
    const std::vector<ImageGrid> errs = {random_image(H, W, 1, rng.split(6)), random_image(H, W, 1, rng.split(7))};
    const std::vector<ImageGrid> ids = {random_image(H, W, 1, rng.split(8), 0.2, 1.2),
                                        random_image(H, W, 1, rng.split(9), 0.2, 1.2)};
    const std::vector<numgrid::Mask> valids = {numgrid::Mask(H, W, true), numgrid::Mask(H, W, true)};
    const Reprojection base = min_reprojection_loss(errs, ids, valids);
    std::vector<double> g;
    for (int s = 0; s < 2; ++s)
      for (std::size_t p = 0; p < errs[0].size(); ++p)
        g.push_back(base.choice[p] == s ? 1.0 / static_cast<double>(base.count) : 0.0);
    const std::size_t n = errs[0].size();
    auto f = [&](std::span<const double> v) {
      return min_reprojection_loss({from_flat(v.subspan(0, n), H, W, 1), from_flat(v.subspan(n), H, W, 1)}, ids, valids)
          .value;
    };
    record("min-reprojection (per-source errors)", numgrid::gradcheck(f, concat(errs), g));
  }
  {  // edge-aware smoothness
    const int H = 16, W = 16;
    const ImageGrid d = random_image(H, W, 1, rng.split(10), 0.1, 0.9), img = random_image(H, W, 3, rng.split(11));
    auto f = [&](std::span<const double> x) { return edge_aware_smoothness(from_flat(x, H, W, 1), img).value; };
    record("smoothness", numgrid::gradcheck(f, d.values(), edge_aware_smoothness(d, img).grad.values()));
  }
  numgrid::ModelConfig mc;
  mc.height = 16;
  mc.width = 16;
  mc.num_classes = 3;
  mc.encoder_channels = {3, 4, 4};
  mc.decoder_channels = {4, 3};
  const ModelParams params = ModelParams::init(mc, 5);
  const ReferenceFeatures ref = ReferenceFeatures::snapshot(ModelParams::init(mc, 6));
  {  // L_F through the network
    const ImageGrid img = random_image(16, 16, 3, rng.split(12));
    auto f = [&](const ModelParams& p) { return feature_distance(p, ref, img).value; };
    record("L_F", numgrid::gradcheck(f, params, feature_distance(params, ref, img).grads));
  }
  {  // L_P = L_D + lambda_F L_F through the network
    const geometry::Intrinsics K{16.0, 16.0, 7.5, 7.5};
    SdeExample ex{smooth_image(16, 16, 0.0), {smooth_image(16, 16, 0.25)},
                  {geometry::Pose::from_yaw_translation(0.0, {0.1, 0.0, -0.05})}};
    const SdeConfig sc{.d_min = 1.0, .d_max = 10.0};
    auto f = [&](const ModelParams& p) { return pretrain_loss(p, ex, K, sc, &ref, 1e-2).value; };
    record("L_P", numgrid::gradcheck(f, params, pretrain_loss(params, ex, K, sc, &ref, 1e-2).grads));
  }
  {  // pooled cross-entropy with ignored pixels
    const int H = 8, W = 8, C = 4;
    const std::vector<ImageGrid> logits = {random_image(H, W, C, rng.split(13), -2, 2),
                                           random_image(H, W, C, rng.split(14), -2, 2)};
    std::vector<LabelRaster> labels = {random_labels(H, W, C, rng.split(15)), random_labels(H, W, C, rng.split(16))};
    labels[1].at(2, 2) = numgrid::kIgnoreLabel;
    const BatchLoss b = batch_cross_entropy(logits, labels);
    const std::size_t n = logits[0].size();
    auto f = [&](std::span<const double> v) {
      const std::vector<ImageGrid> l = {from_flat(v.subspan(0, n), H, W, C), from_flat(v.subspan(n), H, W, C)};
      return batch_cross_entropy(l, labels).value;
    };
    record("L_ce", numgrid::gradcheck(f, concat(logits), concat(b.grads)));
  }
  {  // berHu, including the cutoff's dependence on the largest residual
    const int H = 8, W = 8;
    const std::vector<ImageGrid> pred = {random_image(H, W, 1, rng.split(17)), random_image(H, W, 1, rng.split(18))};
    const std::vector<ImageGrid> target = {random_image(H, W, 1, rng.split(19)), random_image(H, W, 1, rng.split(20))};
    const BatchLoss b = berhu(pred, target);
    const std::size_t n = pred[0].size();
    auto f = [&](std::span<const double> v) {
      const std::vector<ImageGrid> p = {from_flat(v.subspan(0, n), H, W, 1), from_flat(v.subspan(n), H, W, 1)};
      return berhu(p, target).value;
    };
    record("berHu", numgrid::gradcheck(f, concat(pred), concat(b.grads)));
  }
  {  // L_SSL through the network
    const std::vector<ImageGrid> li = {random_image(16, 16, 3, rng.split(21)), random_image(16, 16, 3, rng.split(22))};
    const std::vector<LabelRaster> ll = {random_labels(16, 16, 3, rng.split(23)), random_labels(16, 16, 3, rng.split(24))};
    const std::vector<ImageGrid> mi = {random_image(16, 16, 3, rng.split(25)), random_image(16, 16, 3, rng.split(26))};
    const std::vector<LabelRaster> ml = {random_labels(16, 16, 3, rng.split(27)), random_labels(16, 16, 3, rng.split(28))};
    auto f = [&](const ModelParams& p) { return ssl_loss(p, li, ll, mi, ml, 0.4).value; };
    // Five-point stencil: some encoder gradients are ~1e-7 against a loss of ~1.
    record("L_SSL", numgrid::gradcheck(f, params, ssl_loss(params, li, ll, mi, ml, 0.4).grads, {.step = 2e-4, .order = 4}));
  }
  const double t = seconds_since(t0);
  bool pass = t < 300.0;
  std::string detail;
  for (const auto& [name, err] : results) {
    pass &= err < 1e-4;
    detail += name + " " + fmt("%.1e", err) + "; ";
  }
  return {pass, "max rel err (limit 1e-4): " + detail + fmt("%.1f", t) + " s (limit 300 s)"};
}

// ---------------------------------------------------------------- 5

Outcome criterion_warp_fidelity() {
  const scenes::Motion motion;  // generator default
  auto mean_l1 = [&](const scenes::SceneSpec& s, bool covisible_only, int sequences) {
    double total = 0.0;
    std::size_t n = 0;
    for (int i = 0; i < sequences; ++i) {
      const auto layout = scenes::sequence_layout(s, i);
      const auto cams = scenes::sequence_cameras(s, i, motion, 2);
      const auto f0 = scenes::render(s, layout, cams[0]);
      const auto f1 = scenes::render(s, layout, cams[1]);
      const auto w = geometry::warp(f1.image, f0.depth, scenes::generate_sequence(s, i, motion, 2).poses[0], s.intrinsics);
      const numgrid::Mask m = covisible_only ? scenes::covisible_mask(f0, f1, w) : w.valid;
      for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) {
          if (!m.at(y, x)) continue;
          for (int c = 0; c < 3; ++c) total += std::abs(w.warped.at(y, x, c) - f0.image.at(y, x, c)) / 3.0;
          ++n;
        }
    }
    return total / static_cast<double>(n);
  };
  const scenes::SceneSpec street = scenes::default_scene_spec(5);
  scenes::SceneSpec open_road = street;  // road and sky only: nothing can be occluded
  for (auto& st : open_road.styles)
    for (auto& c : st.counts) c = {0, 0};
  const double street_l1 = mean_l1(street, true, 20);
  const double road_l1 = mean_l1(open_road, false, 20);
  const double street_all = mean_l1(street, false, 20);

  // Identity pose: warping any source with any depth returns it unchanged.
  bool identity_exact = true;
  for (int i = 0; i < 10; ++i) {
    const scenes::Sample s = scenes::generate_scene(street, i);
    const auto w = geometry::warp(s.image, s.depth, geometry::Pose::identity(), street.intrinsics);
    identity_exact &= w.warped == s.image && w.valid.count() == static_cast<std::size_t>(s.image.height() * s.image.width());
  }
  const bool pass = street_l1 < 1e-3 && road_l1 < 1e-3 && identity_exact;
  return {pass, "mean L1 street scenes (covisible pixels) " + fmt("%.2e", street_l1) + ", open road (all warp-valid) " +
                    fmt("%.2e", road_l1) + " (limit 1e-3); street incl. occlusion edges " + fmt("%.2e", street_all) +
                    " (not gated); identity pose exact: " + (identity_exact ? "yes" : "no")};
}

// ---------------------------------------------------------------- 6

Outcome criterion_teacher_properties() {
  using namespace learner;
  // EMA contraction
  numgrid::ModelConfig mc;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const ModelParams student = ModelParams::init(mc, 100 + static_cast<std::uint64_t>(trial));
    TeacherState teacher{ModelParams::init(mc, 200 + static_cast<std::uint64_t>(trial)),
                         std::vector<double>{0.0, 0.25, 0.5, 0.9, 0.99, 1.0}[trial % 6]};
    auto dist = [&](const ModelParams& a) {
      const auto x = numgrid::flatten(a), y = numgrid::flatten(student);
      double s = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
      return std::sqrt(s);
    };
    double d0 = dist(teacher.params);
    for (int step = 0; step < 10; ++step) {
      ema_update_inplace(teacher, student);
      const double d1 = dist(teacher.params);
      worst = std::max(worst, std::abs(d1 - teacher.alpha * d0) / std::max(d0, 1e-300));
      d0 = d1;
    }
  }
  // lambda_P monotone in tau
  Rng rng(6);
  int monotone_violations = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const ImageGrid conf = random_image(8, 16, 1, rng.split(static_cast<std::uint64_t>(trial)));
    double prev = 2.0;
    for (int k = 0; k <= 1000; ++k) {
      const double lp = confidence_weight(conf, k / 1000.0);
      if (lp > prev || lp < 0.0 || lp > 1.0) ++monotone_violations;
      prev = lp;
    }
  }
  // Ties: every logit pattern over {0, 1, 2} for C = 3 and over {0, 1} for C = 4.
  int tie_errors = 0, patterns = 0;
  for (int C : {3, 4}) {
    const int levels = C == 3 ? 3 : 2;
    int total = 1;
    for (int c = 0; c < C; ++c) total *= levels;
    ImageGrid logits(1, total, C);
    for (int p = 0; p < total; ++p)
      for (int c = 0, r = p; c < C; ++c, r /= levels) logits.at(0, p, c) = r % levels;
    const PseudoLabels pl = pseudo_label(logits);
    for (int p = 0; p < total; ++p) {
      int best = 0;
      for (int c = 1; c < C; ++c)
        if (logits.at(0, p, c) > logits.at(0, p, best)) best = c;
      tie_errors += pl.labels.at(0, p) == best ? 0 : 1;
      ++patterns;
    }
  }
  const bool pass = worst < 1e-12 && monotone_violations == 0 && tie_errors == 0;
  return {pass, "EMA max rel deviation from alpha-contraction " + fmt("%.1e", worst) + " (limit 1e-12); lambda_P tau-sweep violations " +
                    std::to_string(monotone_violations) + "/200 sweeps; tie-break errors " + std::to_string(tie_errors) +
                    "/" + std::to_string(patterns) + " exhaustive patterns"};
}

// ---------------------------------------------------------------- 7 and 8

struct FullRun {
  bool done = false;
  double seconds = 0.0;
  nlohmann::json summary;
};

FullRun& full_run() {
  static FullRun run;
  if (!run.done) {
    const pipeline::ExperimentConfig c;  // default desk config
    const auto t0 = std::chrono::steady_clock::now();
    run.summary = pipeline::run_all(c, {work_dir() / "run_a"}, {.force = true, .quiet = true});
    run.seconds = seconds_since(t0);
    run.done = true;
  }
  return run;
}

Outcome criterion_directional() {
  const FullRun& r = full_run();
  const auto& arms = r.summary["arms"];
  auto mean = [&](const char* arm) { return arms[arm]["mean"].get<double>(); };
  const double base = mean("baseline"), dm = mean("ssl_depthmix"), cm = mean("ssl_classmix"), sel = mean("selection");
  const bool a = dm > base, b = (dm - cm) * 100.0 >= -0.5, c = sel > base;
  std::string seeds;
  for (const char* arm : {"baseline", "ssl_classmix", "ssl_depthmix", "selection"}) {
    seeds += std::string(arm) + " [";
    for (const auto& v : arms[arm]["miou"]) seeds += fmt("%.2f ", 100.0 * v.get<double>());
    seeds.back() = ']';
    seeds += " ";
  }
  const bool pass = a && b && c && r.seconds < 3600.0;
  return {pass, std::string("(a) ") + (a ? "ok" : "FAILS") + " ssl+depthmix " + fmt("%.2f", 100 * dm) +
                    " vs baseline " + fmt("%.2f", 100 * base) + "; (b) " + (b ? "ok" : "FAILS") + " depthmix - classmix = " +
                    fmt("%+.2f", 100 * (dm - cm)) + " mIoU points (>= -0.5); (c) " + (c ? "ok" : "FAILS") +
                    " DS+US selection " + fmt("%.2f", 100 * sel) + " vs random " + fmt("%.2f", 100 * base) +
                    "; per-seed mIoU: " + seeds + "; " + fmt("%.0f", r.seconds) + " s (limit 3600 s)"};
}

Outcome criterion_reproducibility() {
  full_run();
  const pipeline::ExperimentConfig c;
  const fs::path a = work_dir() / "run_a", b = work_dir() / "run_b";
  pipeline::run_all(c, {b}, {.force = true, .quiet = true});
  int compared = 0, differ = 0, logs = 0, checkpoints = 0;
  std::string first_diff;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    ++compared;
    logs += rel.filename() == "metrics.csv" ? 1 : 0;
    checkpoints += rel.filename() == "checkpoint.blob" ? 1 : 0;
    if (!fs::exists(b / rel) || numgrid::read_file(e.path()) != numgrid::read_file(b / rel)) {
      ++differ;
      if (first_diff.empty()) first_diff = rel.string();
    }
  }
  std::size_t files_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) files_b += e.is_regular_file() ? 1 : 0;
  const bool pass = differ == 0 && files_b == static_cast<std::size_t>(compared) && logs > 0 && checkpoints > 0;
  return {pass, std::to_string(compared) + " files compared (" + std::to_string(logs) + " metrics logs, " +
                    std::to_string(checkpoints) + " checkpoints), " + std::to_string(differ) + " differ" +
                    (first_diff.empty() ? "" : " (first: " + first_diff + ")")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"DepthMix mask oracle equivalence and violation scores", criterion_depthmix_oracle},
      {"Selection matches the straight-line reference", criterion_selection_oracle},
      {"Diversity picks cover planted clusters", criterion_cluster_coverage},
      {"Gradient check of every loss", criterion_gradients},
      {"Warping fidelity with ground-truth depth and poses", criterion_warp_fidelity},
      {"EMA contraction, lambda_P monotonicity, argmax ties", criterion_teacher_properties},
      {"Directional desk-scale ablation", criterion_directional},
      {"Byte-identical reruns", criterion_reproducibility},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!wanted.empty() && !wanted.count(id)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
