#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "depthlab/numgrid/image_grid.hpp"

namespace depthlab::numgrid {

// Shape of the two-head network:
//   encoder   3 stride-2 3x3 conv + ELU layers; the last output is the bottleneck
//   each head 2 blocks of (2x nearest upsample, skip concat, 3x3 conv, ELU),
//             then an output block at input resolution that concatenates the
//             input image. The depth head also has a sigmoid disparity side
//             output at half resolution.
struct ModelConfig {
  int height = 32;
  int width = 64;
  int in_channels = 3;
  int num_classes = 6;
  std::array<int, 3> encoder_channels{8, 16, 16};
  std::array<int, 2> decoder_channels{16, 8};
  bool has_depth_head = true;
  bool has_seg_head = true;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<double> values;

  bool operator==(const Tensor&) const = default;
};

enum class ParamGroup { kEncoder = 0, kDepthHead = 1, kSegHead = 2 };
const char* group_name(ParamGroup group);

// Parameters of the shared encoder and both decoder heads.
struct ModelParams {
  ModelConfig config;
  std::vector<Tensor> encoder;
  std::vector<Tensor> depth_head;
  std::vector<Tensor> seg_head;

  static ModelParams zeros(const ModelConfig& config);
  // Uniform in [-s, s] with s = 1/sqrt(fan_in), drawn from `seed`.
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  std::vector<Tensor>& group(ParamGroup g);
  const std::vector<Tensor>& group(ParamGroup g) const;
  std::size_t parameter_count() const;
  bool all_finite() const;

  bool operator==(const ModelParams&) const = default;
};

// Gradients, shape-congruent with the ModelParams they were computed for.
struct GradBundle {
  std::vector<Tensor> encoder;
  std::vector<Tensor> depth_head;
  std::vector<Tensor> seg_head;

  static GradBundle zeros_like(const ModelParams& params);

  std::vector<Tensor>& group(ParamGroup g);
  const std::vector<Tensor>& group(ParamGroup g) const;
  void add(const GradBundle& other, double scale = 1.0);
  void scale(double factor);
  double squared_norm() const;
  bool all_finite() const;
};

std::vector<double> flatten(const ModelParams& params);
std::vector<double> flatten(const GradBundle& grads);
void unflatten(std::span<const double> flat, ModelParams& params);
// Qualified names ("encoder/enc1.weight[17]") for each flattened coordinate.
std::string coordinate_name(const ModelParams& params, std::size_t flat_index);

struct HeadSelection {
  bool seg = true;
  bool depth = true;
};

struct ConvRecord {
  ImageGrid input;  // layer input (after any concatenation)
  ImageGrid output;  // post-activation output
};

struct HeadRecord {
  ConvRecord up1;
  ConvRecord up2;
  ConvRecord out;
  ConvRecord side;
  bool active = false;
};

// Everything backward() needs from a forward pass.
struct ForwardCache {
  ImageGrid image;
  ConvRecord enc1;
  ConvRecord enc2;
  ConvRecord enc3;
  HeadRecord depth;
  HeadRecord seg;
};

struct ForwardOutputs {
  ImageGrid seg_logits;  // C channels at input resolution
  ImageGrid disparity;  // 1 channel in (0,1) at input resolution
  ImageGrid disparity_half;  // 1 channel in (0,1) at half resolution
  ImageGrid bottleneck;  // deepest encoder feature map
  ImageGrid depth_features;  // penultimate depth-head feature map (half resolution)
};

struct ForwardResult {
  ForwardOutputs outputs;
  ForwardCache cache;
};

ForwardResult forward(const ModelParams& params, const ImageGrid& image, HeadSelection heads = {});
ForwardOutputs tiny_net_forward(const ModelParams& params, const ImageGrid& image,
                                HeadSelection heads = {});
// Encoder only; cheaper when just the bottleneck is needed.
ImageGrid encode(const ModelParams& params, const ImageGrid& image);

// Upstream gradients of a scalar loss w.r.t. the forward outputs. Empty
// grids mean the loss does not depend on that output.
struct OutputGrads {
  ImageGrid seg_logits;
  ImageGrid disparity;
  ImageGrid disparity_half;
  ImageGrid bottleneck;
};

struct BackwardOptions {
  bool freeze_encoder = false;  // stop-gradient at the bottleneck and skips
};

GradBundle backward(const ModelParams& params, const ForwardCache& cache, const OutputGrads& grads,
                    BackwardOptions options = {});

// Throws NumericError("<op>: non-finite ...") when value is NaN or infinite.
void require_finite(double value, const std::string& op);

// Copies every depth-head tensor whose shape matches the corresponding
// segmentation-head tensor, then re-initialises the final classification
// layer from `seed`.
void transfer_depth_to_seg(ModelParams& params, std::uint64_t seed);

}  // namespace depthlab::numgrid
