#include "depthlab/pipeline/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "depthlab/depthmix/depthmix.hpp"
#include "depthlab/errors.hpp"
#include "depthlab/numgrid/blob.hpp"
#include "depthlab/numgrid/parallel.hpp"

namespace depthlab::pipeline {

using geometry::DepthRaster;
using learner::MixKind;
using numgrid::ImageGrid;
using learner::TrainConfig;
using learner::TrainMode;
using numgrid::ModelParams;
using numgrid::Rng;
using nlohmann::json;

// ---------------------------------------------------------------- arms

namespace {

const char* to_string(Transfer t) {
  switch (t) {
    case Transfer::kNone: return "none";
    case Transfer::kSde: return "sde";
    case Transfer::kMultitask: return "multitask";
  }
  return "?";
}

const char* to_string(LabelPick p) { return p == LabelPick::kRandom ? "random" : "ds_us"; }

Transfer transfer_from_string(const std::string& s) {
  for (auto t : {Transfer::kNone, Transfer::kSde, Transfer::kMultitask})
    if (s == to_string(t)) return t;
  throw ConfigError("arms[].transfer: expected none, sde or multitask, got '" + s + "'");
}

LabelPick label_pick_from_string(const std::string& s) {
  for (auto p : {LabelPick::kRandom, LabelPick::kDiversityUncertainty})
    if (s == to_string(p)) return p;
  throw ConfigError("arms[].labels: expected random or ds_us, got '" + s + "'");
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError(where + ": unknown field '" + it.key() + "'");
}

}  // namespace

void ArmSpec::validate() const {
  const std::string where = "arms[" + name + "]";
  if (name.empty()) throw ConfigError("arms[].name must be non-empty");
  for (char ch : name)
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-'))
      throw ConfigError(where + ".name may only contain letters, digits, '_' and '-'");
  if (feature_distance && transfer == Transfer::kNone)
    throw ConfigError(where + ".feature_distance requires transfer sde or multitask");
  if (mix != MixKind::kNone && !pseudo_labels) throw ConfigError(where + ".mix requires pseudo_labels");
  if (pseudo_labels && transfer == Transfer::kMultitask)
    throw ConfigError(where + ": pseudo_labels with multitask transfer is not supported");
}

std::vector<std::string> ArmSpec::flags() const {
  const std::string d = transfer == Transfer::kSde ? "T" : transfer == Transfer::kMultitask ? "M" : "";
  const std::string x = mix == MixKind::kClassMix ? "C" : mix == MixKind::kDepthMix ? "D" : "";
  return {d, feature_distance ? "x" : "", pseudo_labels ? "x" : "", x,
          labels == LabelPick::kDiversityUncertainty ? "x" : ""};
}

json to_json(const ArmSpec& a) {
  return {{"name", a.name},
          {"transfer", to_string(a.transfer)},
          {"feature_distance", a.feature_distance},
          {"pseudo_labels", a.pseudo_labels},
          {"mix", learner::to_string(a.mix)},
          {"labels", to_string(a.labels)}};
}

ArmSpec arm_from_json(const json& j) {
  reject_unknown(j, {"name", "transfer", "feature_distance", "pseudo_labels", "mix", "labels"}, "arms[]");
  ArmSpec a;
  try {
    a.name = j.at("name").get<std::string>();
    if (j.contains("transfer")) a.transfer = transfer_from_string(j["transfer"].get<std::string>());
    if (j.contains("feature_distance")) a.feature_distance = j["feature_distance"].get<bool>();
    if (j.contains("pseudo_labels")) a.pseudo_labels = j["pseudo_labels"].get<bool>();
    if (j.contains("mix")) a.mix = learner::mix_kind_from_string(j["mix"].get<std::string>());
    if (j.contains("labels")) a.labels = label_pick_from_string(j["labels"].get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("arms[]: ") + e.what());
  }
  a.validate();
  return a;
}

// ---------------------------------------------------------------- config

scenes::DatasetConfig ExperimentConfig::default_dataset() {
  scenes::DatasetConfig d;
  d.motion.forward_speed = 1.0;  // slower sequences give too little parallax to learn depth from
  return d;
}

TrainConfig ExperimentConfig::default_pretrain() {
  TrainConfig t;
  t.mode = TrainMode::kSdePretrain;
  t.iterations = 2000;
  t.lr = 0.1;
  t.group_lr_scale = {1.0, 1.0, 1.0};
  return t;
}

TrainConfig ExperimentConfig::default_train() {
  TrainConfig t;
  t.iterations = 5000;
  t.lr = 1e-2;
  t.group_lr_scale = {1.0, 1.0, 1.0};
  t.decay_step = 3750;
  return t;
}

selection::SelectionConfig ExperimentConfig::default_selection(int n_labeled) {
  selection::SelectionConfig s;
  s.n_annotate = n_labeled;
  s.schedule = selection::scaled_schedule(n_labeled);
  return s;
}

std::vector<ArmSpec> ExperimentConfig::default_arms() {
  ArmSpec base{.name = "baseline"};
  ArmSpec cm{.name = "ssl_classmix", .pseudo_labels = true, .mix = MixKind::kClassMix};
  ArmSpec dm{.name = "ssl_depthmix", .pseudo_labels = true, .mix = MixKind::kDepthMix};
  ArmSpec sel{.name = "selection", .labels = LabelPick::kDiversityUncertainty};
  return {base, cm, dm, sel};
}

void ExperimentConfig::validate() const {
  if (schema_version != kSchemaVersion)
    throw ConfigError("schema_version: expected " + std::to_string(kSchemaVersion) + ", got " +
                      std::to_string(schema_version));
  if (run_seeds.empty()) throw ConfigError("run_seeds must be non-empty");
  if (std::set<std::uint64_t>(run_seeds.begin(), run_seeds.end()).size() != run_seeds.size())
    throw ConfigError("run_seeds must be distinct");
  scene.validate();
  model.validate();
  if (model.height != scene.height || model.width != scene.width)
    throw ConfigError("model.height/width must match the scene size");
  if (model.num_classes != scene.num_classes()) throw ConfigError("model.num_classes must match the scene classes");
  if (!model.has_depth_head || !model.has_seg_head) throw ConfigError("model must have both heads");
  if (dataset.n_train < 2 || dataset.n_val < 1) throw ConfigError("dataset needs >= 2 train and >= 1 val samples");
  if (dataset.frames_per_sequence < 2) throw ConfigError("dataset.frames_per_sequence must be >= 2");
  if (n_labeled < 1 || n_labeled >= dataset.n_train)
    throw ConfigError("n_labeled must be in [1, dataset.n_train)");
  pretrain.validate();
  if (pretrain.mode != TrainMode::kSdePretrain) throw ConfigError("pretrain.mode must be sde_pretrain");
  train.validate();
  if (selection.n_annotate != n_labeled) throw ConfigError("selection.n_annotate must equal n_labeled");
  selection.validate(dataset.n_train);
  if (arms.empty()) throw ConfigError("arms must be non-empty");
  std::set<std::string> names;
  for (const auto& a : arms) {
    a.validate();
    if (!names.insert(a.name).second) throw ConfigError("arms: duplicate name '" + a.name + "'");
  }
  if (preview_pairs < 0) throw ConfigError("preview_pairs must be >= 0");
}

const ArmSpec& ExperimentConfig::arm(const std::string& name) const {
  for (const auto& a : arms)
    if (a.name == name) return a;
  throw ConfigError("unknown arm '" + name + "'");
}

json to_json(const ExperimentConfig& c) {
  json arms = json::array();
  for (const auto& a : c.arms) arms.push_back(to_json(a));
  json sel = selection::to_json(c.selection);
  return {{"schema_version", c.schema_version},
          {"seed", c.seed},
          {"run_seeds", c.run_seeds},
          {"scene", scenes::to_json(c.scene)},
          {"dataset", scenes::to_json(c.dataset)},
          {"model", numgrid::to_json(c.model)},
          {"n_labeled", c.n_labeled},
          {"pretrain", learner::to_json(c.pretrain)},
          {"train", learner::to_json(c.train)},
          {"selection", sel},
          {"arms", arms},
          {"eval_teacher", c.eval_teacher},
          {"preview_pairs", c.preview_pairs}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  reject_unknown(j,
                 {"schema_version", "seed", "run_seeds", "scene", "dataset", "model", "n_labeled", "pretrain", "train",
                  "selection", "arms", "eval_teacher", "preview_pairs"},
                 "config");
  if (!j.contains("schema_version")) throw ConfigError("schema_version: required");
  ExperimentConfig c;
  try {
    c.schema_version = j["schema_version"].get<int>();
    if (c.schema_version != kSchemaVersion) c.validate();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("run_seeds")) c.run_seeds = j["run_seeds"].get<std::vector<std::uint64_t>>();
    c.scene = j.contains("scene") ? scenes::scene_spec_from_json(j["scene"]) : scenes::default_scene_spec(c.seed);
    if (j.contains("dataset")) {
      // Defaults for missing dataset fields come from this config's defaults.
      json d = scenes::to_json(c.dataset);
      d.merge_patch(j["dataset"]);
      c.dataset = scenes::dataset_config_from_json(d);
    }
    if (j.contains("model")) c.model = numgrid::model_config_from_json(j["model"]);
    if (j.contains("n_labeled")) c.n_labeled = j["n_labeled"].get<int>();
    auto patch_train = [](const TrainConfig& base, const json& patch) {
      json t = learner::to_json(base);
      for (auto it = patch.begin(); it != patch.end(); ++it)
        if (!t.contains(it.key())) throw ConfigError("train: unknown field '" + it.key() + "'");
      t.merge_patch(patch);
      return learner::train_config_from_json(t);
    };
    if (j.contains("pretrain")) c.pretrain = patch_train(c.pretrain, j["pretrain"]);
    if (j.contains("train")) c.train = patch_train(c.train, j["train"]);
    json sel = j.contains("selection") ? j["selection"] : json::object();
    if (!sel.is_object()) throw ConfigError("selection: expected an object");
    if (!sel.contains("n_annotate")) sel["n_annotate"] = c.n_labeled;
    c.selection = selection::selection_config_from_json(sel);
    if (j.contains("arms")) {
      c.arms.clear();
      for (const auto& a : j["arms"]) c.arms.push_back(arm_from_json(a));
    }
    if (j.contains("eval_teacher")) c.eval_teacher = j["eval_teacher"].get<bool>();
    if (j.contains("preview_pairs")) c.preview_pairs = j["preview_pairs"].get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  if (!fs::exists(path)) throw StageError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(numgrid::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + std::string(e.what()));
  }
  return experiment_config_from_json(j);
}

std::uint64_t stage_seed(std::uint64_t master, const std::string& stage, std::uint64_t run_seed) {
  return Rng(master).split(stage).split(run_seed).key();
}

// ---------------------------------------------------------------- layout

fs::path Layout::pretrain(std::uint64_t run, bool feature) const {
  return root / "pretrain" / ("seed" + std::to_string(run) + (feature ? "" : "_nofeat"));
}
fs::path Layout::selection(std::uint64_t run) const { return root / "selection" / ("seed" + std::to_string(run)); }
fs::path Layout::run(const std::string& arm, std::uint64_t seed) const {
  return root / "runs" / arm / ("seed" + std::to_string(seed));
}

namespace {

void log(const StageOptions& opt, const std::string& msg) {
  if (!opt.quiet) std::fprintf(stderr, "[depthlab] %s\n", msg.c_str());
}

void prepare_output(const fs::path& dir, const StageOptions& opt) {
  if (fs::exists(dir)) {
    if (!opt.force) throw StageError("output exists: " + dir.string() + " (pass --force to recreate)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

void require_file(const fs::path& p, const std::string& stage) {
  if (!fs::exists(p)) throw StageError(stage + ": missing upstream artifact " + p.string());
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

scenes::Dataset load_checked_dataset(const Layout& out, const std::string& stage) {
  require_file(out.dataset() / "manifest.json", stage);
  return scenes::load_dataset(out.dataset());
}

ModelParams init_params(const ExperimentConfig& c, std::uint64_t run) {
  return ModelParams::init(c.model, stage_seed(c.seed, "init", run));
}

learner::SdeExample sde_example(const scenes::Sequence& s) {
  const int n = static_cast<int>(s.frames.size());
  const int t = n / 2;
  learner::SdeExample ex{s.frames[static_cast<std::size_t>(t)].image, {}, {}};
  for (int k = 0; k < n; ++k) {
    if (k == t) continue;
    ex.sources.push_back(s.frames[static_cast<std::size_t>(k)].image);
    ex.poses.push_back(s.relative_pose(t, k));
  }
  return ex;
}

DepthRaster predicted_disparity(const ModelParams& p, const ImageGrid& image) {
  return DepthRaster::from_grid(numgrid::tiny_net_forward(p, image, {false, true}).disparity,
                                geometry::DepthKind::kDisparity);
}

std::vector<DepthRaster> predicted_disparities(const ModelParams& p, const std::vector<scenes::Sample>& samples) {
  std::vector<DepthRaster> out(samples.size());
  numgrid::parallel_for(static_cast<int>(samples.size()),
                        [&](int i) { out[static_cast<std::size_t>(i)] = predicted_disparity(p, samples[i].image); });
  return out;
}

// Mean absolute relative depth error and pairwise ordering accuracy on val.
json depth_quality(const ModelParams& p, const scenes::Dataset& ds) {
  double absrel = 0.0, n = 0.0, ok = 0.0, pairs = 0.0;
  const double dmin = ds.spec.d_min, dmax = ds.spec.d_max;
  for (std::size_t k = 0; k < ds.val.size(); ++k) {
    const DepthRaster disp = predicted_disparity(p, ds.val[k].image);
    const auto& g = ds.val[k].depth.values;
    for (std::size_t q = 0; q < g.size(); ++q) {
      if (g[q] >= dmax) continue;
      const double z = geometry::disparity_to_depth(disp.values[q], dmin, dmax);
      absrel += std::abs(z - g[q]) / g[q];
      n += 1.0;
    }
    Rng rng = Rng(k).split("order");
    for (int s = 0; s < 200; ++s) {
      const std::size_t a = rng.below(g.size()), b = rng.below(g.size());
      if (std::abs(g[a] - g[b]) < 0.1 * std::min(g[a], g[b])) continue;
      pairs += 1.0;
      if ((g[a] < g[b]) == (disp.values[a] > disp.values[b])) ok += 1.0;
    }
  }
  return {{"abs_rel", n > 0 ? absrel / n : 0.0}, {"ordering_accuracy", pairs > 0 ? ok / pairs : 0.0}};
}

std::vector<int> read_annotated(const fs::path& p, const scenes::Dataset& ds) {
  const json j = json::parse(numgrid::read_file(p));
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < ds.train.size(); ++i) index[ds.train[i].id] = static_cast<int>(i);
  std::vector<int> out;
  for (const auto& id : j.at("annotated")) {
    auto it = index.find(id.get<std::string>());
    if (it == index.end()) throw StageError("unknown sample id in " + p.string());
    out.push_back(it->second);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- stages

void gen_scenes(const ExperimentConfig& c, const Layout& out, const StageOptions& opt) {
  c.validate();
  prepare_output(out.dataset(), opt);
  log(opt, "gen-scenes -> " + out.dataset().string());
  scenes::build_dataset(c.scene, c.dataset, out.dataset());
}

void pretrain_sde(const ExperimentConfig& c, const Layout& out, std::uint64_t run, bool feature,
                  const StageOptions& opt) {
  c.validate();
  const scenes::Dataset ds = load_checked_dataset(out, "pretrain-sde");
  const fs::path dir = out.pretrain(run, feature);
  prepare_output(dir, opt);
  log(opt, "pretrain-sde seed " + std::to_string(run) + (feature ? "" : " (no feature distance)"));

  const ModelParams init = init_params(c, run);
  const learner::ReferenceFeatures ref = learner::ReferenceFeatures::snapshot(init);
  learner::TrainData data;
  data.intrinsics = ds.spec.intrinsics;
  data.reference = &ref;
  for (const auto& s : ds.sequences) data.sequences.push_back(sde_example(s));
  TrainConfig t = c.pretrain;
  t.seed = stage_seed(c.seed, "pretrain", run);
  if (!feature) t.lambda_f = 0.0;
  t.sde.d_min = ds.spec.d_min;
  t.sde.d_max = ds.spec.d_max;
  const learner::TrainResult r = learner::train(t, init, data);
  numgrid::save_checkpoint(dir / "checkpoint.blob", r.params, t.seed, t.iterations, {{"stage", "pretrain-sde"}});
  numgrid::write_file(dir / "metrics.csv", learner::metrics_csv(r.log));
  numgrid::write_file(dir / "depth_eval.json", dump(depth_quality(r.params, ds)));
}

void select_labels(const ExperimentConfig& c, const Layout& out, std::uint64_t run, const StageOptions& opt) {
  c.validate();
  selection::SelectionConfig sc = c.selection;
  sc.seed = stage_seed(c.seed, "select", run);
  sc.validate(c.dataset.n_train);  // before any file is touched
  const scenes::Dataset ds = load_checked_dataset(out, "select");
  const fs::path teacher_path = out.pretrain(run, true) / "checkpoint.blob";
  require_file(teacher_path, "select");
  const fs::path dir = out.selection(run);
  prepare_output(dir, opt);
  log(opt, "select seed " + std::to_string(run));

  const ModelParams teacher = numgrid::load_checkpoint(teacher_path);
  const int n = static_cast<int>(ds.train.size());
  selection::SelectionInputs in;
  in.teacher_disparity.resize(static_cast<std::size_t>(n));
  std::vector<ImageGrid> features(static_cast<std::size_t>(n)), pooled(static_cast<std::size_t>(n));
  numgrid::parallel_for(n, [&](int i) {
    const auto o = numgrid::tiny_net_forward(teacher, ds.train[i].image, {false, true});
    in.teacher_disparity[i] = DepthRaster::from_grid(o.disparity, geometry::DepthKind::kDisparity);
    features[i] = o.depth_features;
    pooled[i] = selection::pool_features(o.depth_features);
  });
  const selection::PoolStats stats = selection::compute_pool_stats(pooled);
  for (int i = 0; i < n; ++i) {
    in.ids.push_back(ds.train[i].id);
    in.images.push_back(ds.train[i].image);
    in.descriptors.push_back(selection::extract_descriptor(features[i], stats, ds.train[i].id));
  }
  const selection::SelectionResult r = selection::run_selection(in, sc);
  numgrid::write_file(dir / "annotated.json", dump(selection::annotated_json(r)));
  numgrid::write_file(dir / "trace.csv", selection::trace_csv(r.trace));
  const selection::SelectionResult rnd =
      selection::random_selection(in.ids, c.n_labeled, stage_seed(c.seed, "labels", run));
  numgrid::write_file(dir / "random.json", dump(selection::annotated_json(rnd)));
}

void mix_preview(const ExperimentConfig& c, const Layout& out, const StageOptions& opt) {
  c.validate();
  const scenes::Dataset ds = load_checked_dataset(out, "mix-preview");
  const fs::path teacher_path = out.pretrain(c.run_seeds.front(), true) / "checkpoint.blob";
  require_file(teacher_path, "mix-preview");
  const fs::path dir = out.previews();
  prepare_output(dir, opt);
  log(opt, "mix-preview -> " + dir.string());

  const ModelParams teacher = numgrid::load_checkpoint(teacher_path);
  Rng rng = Rng(stage_seed(c.seed, "preview", 0));
  const int C = ds.spec.num_classes();
  json summary = json::array();
  auto to_pgm = [](const numgrid::Mask& m) {
    std::vector<std::uint16_t> v(static_cast<std::size_t>(m.pixels()));
    for (std::size_t p = 0; p < v.size(); ++p) v[p] = m[p] ? 65535 : 0;
    return v;
  };
  for (int k = 0; k < c.preview_pairs; ++k) {
    const int i = static_cast<int>(rng.below(ds.train.size()));
    int j = static_cast<int>(rng.below(ds.train.size() - 1));
    if (j >= i) ++j;
    const auto& a = ds.train[static_cast<std::size_t>(i)];
    const auto& b = ds.train[static_cast<std::size_t>(j)];
    const DepthRaster da = predicted_disparity(teacher, a.image), db = predicted_disparity(teacher, b.image);
    const auto dm = depthmix::depthmix_mask(da, db, c.train.epsilon);
    Rng cm_rng = rng.split(static_cast<std::uint64_t>(k));
    const auto cm = depthmix::classmix_mask(a.labels, cm_rng);
    const std::string stem = "pair" + std::to_string(k);
    scenes::write_ppm(dir / (stem + "_i.ppm"), a.image);
    scenes::write_ppm(dir / (stem + "_j.ppm"), b.image);
    scenes::write_ppm(dir / (stem + "_depthmix.ppm"), depthmix::composite(a.image, b.image, dm));
    scenes::write_ppm(dir / (stem + "_classmix.ppm"), depthmix::composite(a.image, b.image, cm));
    scenes::write_ppm(dir / (stem + "_depthmix_labels.ppm"),
                      scenes::colorize_labels(depthmix::composite(a.labels, b.labels, dm), C));
    scenes::write_ppm(dir / (stem + "_classmix_labels.ppm"),
                      scenes::colorize_labels(depthmix::composite(a.labels, b.labels, cm), C));
    scenes::write_pgm16(dir / (stem + "_depthmix_mask.pgm"), dm.height(), dm.width(), to_pgm(dm));
    scenes::write_pgm16(dir / (stem + "_classmix_mask.pgm"), cm.height(), cm.width(), to_pgm(cm));
    // Violations against ground-truth depth: how often each mask shows occluded content.
    summary.push_back({{"pair", k},
                       {"i", a.id},
                       {"j", b.id},
                       {"depthmix_violation", depthmix::violation_score(dm, a.depth, b.depth, 0.0)},
                       {"classmix_violation", depthmix::violation_score(cm, a.depth, b.depth, 0.0)}});
  }
  numgrid::write_file(dir / "previews.json", dump(summary));
}

json train_arm(const ExperimentConfig& c, const Layout& out, const std::string& arm_name, std::uint64_t run,
               const StageOptions& opt) {
  c.validate();
  const ArmSpec& arm = c.arm(arm_name);
  const scenes::Dataset ds = load_checked_dataset(out, "train");
  const fs::path depth_path = out.pretrain(run, true) / "checkpoint.blob";
  const fs::path labels_path =
      out.selection(run) / (arm.labels == LabelPick::kRandom ? "random.json" : "annotated.json");
  require_file(labels_path, "train");
  const bool needs_depth = arm.pseudo_labels || arm.transfer != Transfer::kNone;
  if (needs_depth) require_file(depth_path, "train");
  fs::path transfer_path;
  if (arm.transfer != Transfer::kNone) {
    transfer_path = out.pretrain(run, arm.feature_distance) / "checkpoint.blob";
    require_file(transfer_path, "train");
  }
  const fs::path dir = out.run(arm.name, run);
  prepare_output(dir, opt);
  log(opt, "train " + arm.name + " seed " + std::to_string(run));

  ModelParams init = init_params(c, run);
  if (arm.transfer != Transfer::kNone) {
    init = numgrid::load_checkpoint(transfer_path);
    numgrid::transfer_depth_to_seg(init, stage_seed(c.seed, "transfer", run));
  }

  const std::vector<int> labeled = read_annotated(labels_path, ds);
  std::vector<bool> is_labeled(ds.train.size(), false);
  learner::TrainData data;
  data.intrinsics = ds.spec.intrinsics;
  for (int i : labeled) {
    is_labeled[static_cast<std::size_t>(i)] = true;
    data.labeled.push_back({ds.train[i].image, ds.train[i].labels});
  }
  if (arm.pseudo_labels) {
    const ModelParams depth = numgrid::load_checkpoint(depth_path);
    std::vector<scenes::Sample> pool;
    for (std::size_t i = 0; i < ds.train.size(); ++i)
      if (!is_labeled[i]) pool.push_back(ds.train[i]);
    const std::vector<DepthRaster> disp = predicted_disparities(depth, pool);
    for (std::size_t i = 0; i < pool.size(); ++i) data.unlabeled.push_back({pool[i].image, disp[i]});
  }
  const learner::ReferenceFeatures ref = learner::ReferenceFeatures::snapshot(init_params(c, run));
  if (arm.transfer == Transfer::kMultitask) {
    for (const auto& s : ds.sequences) data.sequences.push_back(sde_example(s));
    data.reference = &ref;
  }

  TrainConfig t = c.train;
  t.seed = stage_seed(c.seed, "train", run);
  t.mix = arm.mix;
  t.mode = arm.pseudo_labels ? TrainMode::kSsl
                             : arm.transfer == Transfer::kMultitask ? TrainMode::kMultitask : TrainMode::kSupervised;
  if (arm.transfer == Transfer::kMultitask && !arm.feature_distance) t.lambda_f = 0.0;
  t.sde.d_min = ds.spec.d_min;
  t.sde.d_max = ds.spec.d_max;
  const learner::TrainResult r = learner::train(t, init, data);

  const bool use_teacher = c.eval_teacher && t.mode == TrainMode::kSsl;
  const ModelParams& final_params = use_teacher ? r.teacher.params : r.params;
  std::vector<learner::LabeledItem> val;
  for (const auto& s : ds.val) val.push_back({s.image, s.labels});
  const learner::EvalReport ev = learner::evaluate(final_params, val);

  numgrid::save_checkpoint(dir / "checkpoint.blob", final_params, t.seed, t.iterations,
                           {{"stage", "train"}, {"arm", arm.name}, {"model", use_teacher ? "teacher" : "student"}});
  numgrid::write_file(dir / "metrics.csv", learner::metrics_csv(r.log));
  numgrid::write_file(dir / "eval.json", dump(learner::to_json(ev)));
  std::vector<std::string> ids;
  for (int i : labeled) ids.push_back(ds.train[i].id);
  const json summary = {{"arm", to_json(arm)},   {"flags", arm.flags()},
                        {"run_seed", run},       {"miou", ev.miou},
                        {"pixel_accuracy", ev.pixel_accuracy}, {"class_names", ds.spec.class_names},
                        {"labeled", ids},        {"train", learner::to_json(t)}};
  numgrid::write_file(dir / "summary.json", dump(summary));
  return summary;
}

learner::EvalReport evaluate_checkpoint(const fs::path& checkpoint, const fs::path& dataset_dir) {
  require_file(checkpoint, "eval");
  require_file(dataset_dir / "manifest.json", "eval");
  const scenes::Dataset ds = scenes::load_dataset(dataset_dir);
  const ModelParams p = numgrid::load_checkpoint(checkpoint);
  std::vector<learner::LabeledItem> val;
  for (const auto& s : ds.val) val.push_back({s.image, s.labels});
  return learner::evaluate(p, val);
}

json run_all(const ExperimentConfig& c, const Layout& out, const StageOptions& opt) {
  c.validate();
  if (fs::exists(out.root) && !fs::is_empty(out.root) && !opt.force)
    throw StageError("output exists: " + out.root.string() + " (pass --force to recreate)");
  if (opt.force && fs::exists(out.root)) fs::remove_all(out.root);
  fs::create_directories(out.root);
  numgrid::write_file(out.root / "config.json", dump(to_json(c)));

  gen_scenes(c, out, opt);
  bool need_nofeat = false;
  for (const auto& a : c.arms) need_nofeat |= a.transfer != Transfer::kNone && !a.feature_distance;
  for (std::uint64_t run : c.run_seeds) {
    pretrain_sde(c, out, run, true, opt);
    if (need_nofeat) pretrain_sde(c, out, run, false, opt);
    select_labels(c, out, run, opt);
  }
  mix_preview(c, out, opt);
  std::vector<json> runs;
  for (const auto& a : c.arms)
    for (std::uint64_t run : c.run_seeds) runs.push_back(train_arm(c, out, a.name, run, opt));

  const std::vector<ReportRow> rows = build_report(runs);
  numgrid::write_file(out.report(), report_csv(rows));
  json arms = json::object();
  for (const auto& r : rows)
    arms[r.arm] = {{"flags", r.flags}, {"miou", r.miou}, {"mean", r.mean}, {"std", r.stddev}, {"delta", r.delta}};
  json summary = {{"schema_version", kSchemaVersion}, {"seed", c.seed}, {"run_seeds", c.run_seeds}, {"arms", arms}};
  numgrid::write_file(out.summary(), dump(summary));
  return summary;
}

// ---------------------------------------------------------------- report

std::vector<json> collect_run_summaries(const std::vector<fs::path>& dirs) {
  std::vector<json> out;
  for (const auto& d : dirs) {
    if (!fs::is_directory(d)) throw StageError("report: not a directory: " + d.string());
    std::vector<fs::path> found;
    if (fs::exists(d / "summary.json") && fs::exists(d / "eval.json")) found.push_back(d / "summary.json");
    for (const auto& e : fs::recursive_directory_iterator(d))
      if (e.path().filename() == "summary.json" && fs::exists(e.path().parent_path() / "eval.json"))
        found.push_back(e.path());
    std::sort(found.begin(), found.end());
    found.erase(std::unique(found.begin(), found.end()), found.end());
    for (const auto& f : found) out.push_back(json::parse(numgrid::read_file(f)));
  }
  if (out.empty()) throw StageError("report: no run summaries found");
  return out;
}

std::vector<ReportRow> build_report(const std::vector<json>& runs) {
  if (runs.empty()) throw ConfigError("report: no runs");
  std::vector<ReportRow> rows;
  std::map<std::string, std::size_t> index;
  const json classes = runs.front().at("class_names");
  for (const auto& r : runs) {
    if (r.at("class_names") != classes) throw ConfigError("report: inconsistent class sets across runs");
    const std::string name = r.at("arm").at("name").get<std::string>();
    auto it = index.find(name);
    if (it == index.end()) {
      it = index.emplace(name, rows.size()).first;
      rows.push_back({name, r.at("flags").get<std::vector<std::string>>(), {}, 0.0, 0.0, 0.0});
    }
    rows[it->second].miou.push_back(r.at("miou").get<double>());
  }
  for (auto& row : rows) {
    const double n = static_cast<double>(row.miou.size());
    double s = 0.0;
    for (double v : row.miou) s += v;
    row.mean = s / n;
    double ss = 0.0;
    for (double v : row.miou) ss += (v - row.mean) * (v - row.mean);
    row.stddev = row.miou.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  }
  const auto base = index.count("baseline") ? index["baseline"] : 0;
  const double b = rows[base].mean;
  for (auto& row : rows) row.delta = row.mean - b;
  return rows;
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string s = "arm,D,F,P,X,S,seeds,miou_mean,miou_std,delta\n";
  char buf[128];
  for (const auto& r : rows) {
    s += r.arm;
    for (const auto& f : r.flags) s += "," + f;
    std::snprintf(buf, sizeof buf, ",%zu,%.6f,%.6f,%+.6f\n", r.miou.size(), r.mean, r.stddev, r.delta);
    s += buf;
  }
  return s;
}

}  // namespace depthlab::pipeline
