#include "depthlab/numgrid/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "depthlab/errors.hpp"
#include "depthlab/numgrid/rng.hpp"

namespace depthlab::numgrid {
namespace {

std::vector<std::size_t> pick_coordinates(std::size_t n, const GradcheckOptions& options) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (options.max_coordinates == 0 || options.max_coordinates >= n) return idx;
  Rng rng(options.seed);
  for (std::size_t i = 0; i < options.max_coordinates; ++i) {
    const std::size_t j = i + rng.below(n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(options.max_coordinates);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradcheckReport gradcheck(const ScalarFn& f, std::span<const double> x,
                          std::span<const double> analytic, GradcheckOptions options) {
  if (x.size() != analytic.size()) throw ConfigError("gradcheck: gradient size mismatch");
  if (!(options.step > 0.0)) throw ConfigError("gradcheck: step must be positive");
  if (options.order != 2 && options.order != 4) throw ConfigError("gradcheck: order must be 2 or 4");
  std::vector<double> probe(x.begin(), x.end());
  require_finite(f(probe), "gradcheck objective");

  GradcheckReport report;
  for (std::size_t i : pick_coordinates(x.size(), options)) {
    const double orig = probe[i];
    auto at = [&](double offset) {
      probe[i] = orig + offset;
      const double v = f(probe);
      probe[i] = orig;
      require_finite(v, "gradcheck objective");
      return v;
    };
    const double h = options.step;
    const double numeric = options.order == 2
                               ? (at(h) - at(-h)) / (2.0 * h)
                               : (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
    const double rel = std::abs(a - numeric) / denom;
    ++report.coordinates_checked;
    if (rel > report.max_rel_err || report.coordinates_checked == 1) {
      report.max_rel_err = rel;
      report.worst_index = i;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  }
  report.worst_param = "x[" + std::to_string(report.worst_index) + "]";
  return report;
}

GradcheckReport gradcheck(const ParamsFn& f, const ModelParams& params, const GradBundle& analytic,
                          GradcheckOptions options) {
  ModelParams scratch = params;
  auto flat_fn = [&](std::span<const double> flat) {
    unflatten(flat, scratch);
    return f(scratch);
  };
  const std::vector<double> x = flatten(params);
  const std::vector<double> g = flatten(analytic);
  GradcheckReport report = gradcheck(flat_fn, x, g, options);
  report.worst_param = coordinate_name(params, report.worst_index);
  return report;
}

}  // namespace depthlab::numgrid
