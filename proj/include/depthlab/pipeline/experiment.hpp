#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "depthlab/learner/train.hpp"
#include "depthlab/scenes/scenes.hpp"
#include "depthlab/selection/selection.hpp"

namespace depthlab::pipeline {

namespace fs = std::filesystem;

inline constexpr int kSchemaVersion = 1;

// A required upstream artifact is missing or a stage cannot run.
class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Transfer { kNone, kSde, kMultitask };  // D column: "", "T", "M"
enum class LabelPick { kRandom, kDiversityUncertainty };

// One row of the ablation table.
struct ArmSpec {
  std::string name;
  Transfer transfer = Transfer::kNone;
  bool feature_distance = false;  // F: lambda_F in pretraining (requires transfer)
  bool pseudo_labels = false;  // P: mean-teacher SSL
  learner::MixKind mix = learner::MixKind::kNone;  // X: requires pseudo_labels
  LabelPick labels = LabelPick::kRandom;  // S

  void validate() const;
  // Flag columns as strings: D in {"", "T", "M"}, F/P/S in {"", "x"}, X in {"", "C", "D"}.
  std::vector<std::string> flags() const;
};

nlohmann::json to_json(const ArmSpec& a);
ArmSpec arm_from_json(const nlohmann::json& j);

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 1;  // master seed: dataset and per-stage streams
  std::vector<std::uint64_t> run_seeds{0, 1, 2};
  scenes::SceneSpec scene = scenes::default_scene_spec(1);
  scenes::DatasetConfig dataset = default_dataset();
  numgrid::ModelConfig model{};
  int n_labeled = 20;
  learner::TrainConfig pretrain = default_pretrain();
  learner::TrainConfig train = default_train();
  selection::SelectionConfig selection = default_selection(20);
  std::vector<ArmSpec> arms = default_arms();
  bool eval_teacher = true;  // SSL arms report the mean teacher
  int preview_pairs = 4;

  static scenes::DatasetConfig default_dataset();
  static learner::TrainConfig default_pretrain();
  static learner::TrainConfig default_train();
  static std::vector<ArmSpec> default_arms();
  static selection::SelectionConfig default_selection(int n_labeled);

  // Field-level ConfigError on any inconsistency.
  void validate() const;
  const ArmSpec& arm(const std::string& name) const;
};

nlohmann::json to_json(const ExperimentConfig& c);
// Missing keys keep defaults; unknown keys and schema mismatches are rejected.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const fs::path& path);

// Independent stream per (master seed, stage, run seed).
std::uint64_t stage_seed(std::uint64_t master, const std::string& stage, std::uint64_t run_seed);

// ---------------------------------------------------------------- artifact layout

struct Layout {
  fs::path root;

  fs::path dataset() const { return root / "dataset"; }
  fs::path pretrain(std::uint64_t run, bool feature) const;
  fs::path selection(std::uint64_t run) const;
  fs::path previews() const { return root / "previews"; }
  fs::path run(const std::string& arm, std::uint64_t seed) const;
  fs::path summary() const { return root / "summary.json"; }
  fs::path report() const { return root / "report.csv"; }
};

struct StageOptions {
  bool force = false;  // replace existing stage outputs
  bool quiet = false;
};

// Each stage reads its inputs from the layout, refuses to overwrite existing
// outputs unless forced, and writes only under its own directory.
void gen_scenes(const ExperimentConfig& c, const Layout& out, const StageOptions& opt);
void pretrain_sde(const ExperimentConfig& c, const Layout& out, std::uint64_t run, bool feature,
                  const StageOptions& opt);
void select_labels(const ExperimentConfig& c, const Layout& out, std::uint64_t run, const StageOptions& opt);
void mix_preview(const ExperimentConfig& c, const Layout& out, const StageOptions& opt);
// Trains and evaluates one arm; writes checkpoint.blob, metrics.csv, eval.json, summary.json.
nlohmann::json train_arm(const ExperimentConfig& c, const Layout& out, const std::string& arm, std::uint64_t run,
                         const StageOptions& opt);
learner::EvalReport evaluate_checkpoint(const fs::path& checkpoint, const fs::path& dataset_dir);

// Every stage for every arm and run seed, then summary.json and report.csv.
nlohmann::json run_all(const ExperimentConfig& c, const Layout& out, const StageOptions& opt);

// ---------------------------------------------------------------- report

struct ReportRow {
  std::string arm;
  std::vector<std::string> flags;  // D F P X S
  std::vector<double> miou;  // one per seed
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for a single seed
  double delta = 0.0;  // mean minus the baseline mean
};

// Groups per-run summary.json files by arm. The baseline is the arm named
// "baseline" if present, else the first row.
std::vector<ReportRow> build_report(const std::vector<nlohmann::json>& run_summaries);
std::vector<nlohmann::json> collect_run_summaries(const std::vector<fs::path>& dirs);
std::string report_csv(const std::vector<ReportRow>& rows);

}  // namespace depthlab::pipeline
