#pragma once

#include <array>

#include "depthlab/numgrid/model.hpp"

namespace depthlab::numgrid {

struct SgdConfig {
  double lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double clip_norm = 10.0;  // <= 0 disables clipping
  // Per-group learning-rate multipliers (encoder, depth head, seg head).
  std::array<double, 3> group_lr_scale{1.0, 1.0, 1.0};
};

struct SgdState {
  GradBundle momentum_buffer;
  bool initialized = false;
};

// One SGD step: the global gradient norm is clipped first, then weight decay
// enters as g += wd * theta, then the momentum buffer (first step: buf = g)
// and theta -= lr * buf.
void sgd_step(ModelParams& params, const GradBundle& grads, const SgdConfig& config,
              SgdState& state);

}  // namespace depthlab::numgrid
