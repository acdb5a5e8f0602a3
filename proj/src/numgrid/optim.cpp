#include "depthlab/numgrid/optim.hpp"

#include <cmath>

#include "depthlab/errors.hpp"

namespace depthlab::numgrid {

void sgd_step(ModelParams& params, const GradBundle& grads, const SgdConfig& config,
              SgdState& state) {
  if (!(config.lr >= 0.0)) throw ConfigError("sgd_step: learning rate must be non-negative");
  if (!grads.all_finite()) throw NumericError("sgd_step: non-finite gradient");
  if (!state.initialized) {
    state.momentum_buffer = GradBundle::zeros_like(params);
  }
  double clip = 1.0;
  if (config.clip_norm > 0.0) {
    const double norm = std::sqrt(grads.squared_norm());
    if (norm > config.clip_norm) clip = config.clip_norm / norm;
  }
  for (ParamGroup g : {ParamGroup::kEncoder, ParamGroup::kDepthHead, ParamGroup::kSegHead}) {
    auto& theta = params.group(g);
    const auto& grad = grads.group(g);
    auto& buf = state.momentum_buffer.group(g);
    if (theta.size() != grad.size() || theta.size() != buf.size()) {
      throw ConfigError(std::string("sgd_step: shape mismatch in ") + group_name(g));
    }
    const double lr = config.lr * config.group_lr_scale[static_cast<int>(g)];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      auto& w = theta[i].values;
      const auto& gv = grad[i].values;
      auto& bv = buf[i].values;
      if (w.size() != gv.size() || w.size() != bv.size()) {
        throw ConfigError("sgd_step: shape mismatch at " + theta[i].name);
      }
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double d = clip * gv[k] + config.weight_decay * w[k];
        bv[k] = state.initialized ? config.momentum * bv[k] + d : d;
        w[k] -= lr * bv[k];
      }
    }
  }
  state.initialized = true;
}

}  // namespace depthlab::numgrid
