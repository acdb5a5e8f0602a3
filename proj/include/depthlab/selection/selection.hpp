#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "depthlab/geometry/camera.hpp"
#include "depthlab/numgrid/model.hpp"

namespace depthlab::selection {

using geometry::DepthRaster;
using numgrid::ImageGrid;
using numgrid::ModelParams;

inline constexpr int kPoolWidth = 8;
inline constexpr int kPoolHeight = 4;

struct Descriptor {
  std::string sample_id;
  std::vector<double> vector;
};

// Per-channel mean and standard deviation of pooled feature maps over a dataset.
struct PoolStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // floored at 1e-8
  bool empty() const { return mean.empty(); }
};

// Adaptive average pooling to kPoolHeight x kPoolWidth: output cell (i, j)
// averages input rows [floor(i H / h), floor((i + 1) H / h)) and likewise for
// columns, so sizes that do not divide evenly still cover every pixel.
ImageGrid pool_features(const ImageGrid& feature_map);

PoolStats compute_pool_stats(const std::vector<ImageGrid>& pooled);

// Pools, then z-scores every channel with the dataset statistics. The vector
// is laid out pixel-major with channels fastest.
Descriptor extract_descriptor(const ImageGrid& feature_map, const PoolStats& stats,
                              const std::string& sample_id = {});

double squared_distance(const Descriptor& a, const Descriptor& b);

// argmax over `unlabeled` of the min L2 distance to `selected`; ties go to the
// lowest index. Indices refer to `all`.
int fps_next(const std::vector<Descriptor>& all, const std::vector<int>& unlabeled,
             const std::vector<int>& selected);

// Mean over pixels of |log(1 + d_teacher) - log(1 + d_student)|.
double uncertainty_score(const DepthRaster& teacher_disp, const DepthRaster& student_disp);

// argmax over `unlabeled` of min distance + lambda_e * scores[i]; ties go to
// the lowest index. scores is indexed like `all`; NaN marks a missing score.
int combined_next(const std::vector<Descriptor>& all, const std::vector<int>& unlabeled,
                  const std::vector<int>& selected, const std::vector<double>& scores, double lambda_e);

// Depth-only network trained on teacher disparities.
struct StudentConfig {
  numgrid::ModelConfig model = slim_model();
  int iterations = 200;  // per step when `iterations_per_step` is empty
  std::vector<int> iterations_per_step;
  int batch = 2;
  double lr = 0.1;
  double momentum = 0.9;
  double clip_norm = 10.0;

  static numgrid::ModelConfig slim_model();
  int iterations_for_step(int step) const;
};

// Trains a fresh student (initialised from `seed`) on the given images with
// berHu against the teacher disparity. iterations == 0 returns the init.
ModelParams train_student(const std::vector<ImageGrid>& images, const std::vector<DepthRaster>& teacher_disp,
                          const std::vector<int>& members, const StudentConfig& config, int iterations,
                          std::uint64_t seed);

DepthRaster student_disparity(const ModelParams& student, const ImageGrid& image);

struct SelectionConfig {
  int n_annotate = 0;  // N_A
  std::vector<int> schedule;  // n_t, summing to N_A
  double lambda_e = 1000.0;
  std::uint64_t seed = 0;
  StudentConfig student{};

  void validate(int pool_size) const;
};

nlohmann::json to_json(const SelectionConfig& c);
SelectionConfig selection_config_from_json(const nlohmann::json& j);

// Proportional rescaling of the 25/50/100/200/372/744 schedule to N_A
// (cumulative targets rounded, each step at least one sample).
std::vector<int> scaled_schedule(int n_annotate);

struct SelectionInputs {
  std::vector<std::string> ids;
  std::vector<ImageGrid> images;
  std::vector<DepthRaster> teacher_disparity;
  std::vector<Descriptor> descriptors;
};

struct TraceRow {
  int step = 0;  // t at the time of the pick
  int k = 0;  // size of the annotated set after the pick
  std::string chosen_id;
  int chosen_index = 0;
  double diversity = 0.0;  // min distance to the annotated set (0 for the first pick)
  double uncertainty = 0.0;  // E of the chosen sample (0 while t == 1)
  double lambda_e = 0.0;
};

struct SelectionResult {
  std::vector<int> annotated;  // ordered indices into the inputs
  std::vector<std::string> annotated_ids;
  std::vector<TraceRow> trace;
};

// Automatic data selection: seeded uniform first pick, then farthest-point
// picks; at each step boundary a fresh student is trained on the annotated
// set, E is recomputed for the rest, and later picks use the combined score.
SelectionResult run_selection(const SelectionInputs& inputs, const SelectionConfig& config);

// Uniformly random N_A of the pool, from the same seed convention.
SelectionResult random_selection(const std::vector<std::string>& ids, int n_annotate, std::uint64_t seed);

std::string trace_csv(const std::vector<TraceRow>& trace);
nlohmann::json annotated_json(const SelectionResult& r);

}  // namespace depthlab::selection
