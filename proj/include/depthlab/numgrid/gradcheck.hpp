#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "depthlab/numgrid/model.hpp"

namespace depthlab::numgrid {

struct GradcheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  std::string worst_param;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates_checked = 0;
};

struct GradcheckOptions {
  double step = 1e-6;
  // 0 checks every coordinate; otherwise a seeded subset of this size.
  std::size_t max_coordinates = 0;
  std::uint64_t seed = 0;
  // 2: central difference; 4: five-point stencil, which tolerates a larger
  // step and so less round-off when gradients are tiny relative to the loss.
  int order = 2;
};

using ScalarFn = std::function<double(std::span<const double>)>;

// Central differences against an analytic gradient. Relative error per
// coordinate is |a - n| / max(|a|, |n|, 1e-12).
GradcheckReport gradcheck(const ScalarFn& f, std::span<const double> x,
                          std::span<const double> analytic, GradcheckOptions options = {});

using ParamsFn = std::function<double(const ModelParams&)>;

GradcheckReport gradcheck(const ParamsFn& f, const ModelParams& params, const GradBundle& analytic,
                          GradcheckOptions options = {});

}  // namespace depthlab::numgrid
