#include "depthlab/learner/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "depthlab/errors.hpp"

namespace depthlab::learner {
namespace {

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

int mirror(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

bool mask_on(const Mask& m, std::size_t p) { return m.pixels() == 0 || m[p]; }

void require_mask(const Mask& m, int h, int w, const char* what) {
  if (m.pixels() != 0 && (m.height() != h || m.width() != w))
    throw ConfigError(std::string(what) + ": mask size mismatch");
}

// Window statistics of one channel at one pixel.
struct Window {
  double mx = 0, my = 0, exx = 0, eyy = 0, exy = 0;
};

Window window_at(const ImageGrid& x, const ImageGrid& y, int py, int px, int c) {
  Window s;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const int qy = mirror(py + dy, x.height()), qx = mirror(px + dx, x.width());
      const double a = x.at(qy, qx, c), b = y.at(qy, qx, c);
      s.mx += a;
      s.my += b;
      s.exx += a * a;
      s.eyy += b * b;
      s.exy += a * b;
    }
  s.mx /= 9;
  s.my /= 9;
  s.exx /= 9;
  s.eyy /= 9;
  s.exy /= 9;
  return s;
}

struct SsimParts {
  double s, a, b, cc, d;
};

SsimParts ssim_of(const Window& w) {
  SsimParts p;
  p.a = 2 * w.mx * w.my + kC1;
  p.b = 2 * (w.exy - w.mx * w.my) + kC2;
  p.cc = w.mx * w.mx + w.my * w.my + kC1;
  p.d = (w.exx - w.mx * w.mx) + (w.eyy - w.my * w.my) + kC2;
  p.s = p.a * p.b / (p.cc * p.d);
  return p;
}

}  // namespace

ImageGrid photometric_error(const ImageGrid& target, const ImageGrid& warped, const Mask& valid,
                            PhotometricWeights w) {
  numgrid::require_same_shape(target, warped, "photometric_error");
  require_mask(valid, target.height(), target.width(), "photometric_error");
  const int H = target.height(), W = target.width(), C = target.channels();
  ImageGrid out(H, W, 1);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!mask_on(valid, static_cast<std::size_t>(y) * W + x)) continue;
      double e = 0.0;
      for (int c = 0; c < C; ++c) {
        const double s = ssim_of(window_at(target, warped, y, x, c)).s;
        e += w.ssim * (1.0 - s) / 2.0 + w.l1 * std::abs(target.at(y, x, c) - warped.at(y, x, c));
      }
      out.at(y, x) = e / C;
    }
  return out;
}

ImageGrid photometric_error_backward(const ImageGrid& target, const ImageGrid& warped,
                                     const ImageGrid& upstream, const Mask& valid,
                                     PhotometricWeights w) {
  numgrid::require_same_shape(target, warped, "photometric_error_backward");
  const int H = target.height(), W = target.width(), C = target.channels();
  if (!upstream.same_extent(H, W) || upstream.channels() != 1)
    throw ConfigError("photometric_error_backward: upstream must be one channel of the same size");
  ImageGrid g(H, W, C);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!mask_on(valid, static_cast<std::size_t>(y) * W + x)) continue;
      const double up = upstream.at(y, x) / C;
      if (up == 0.0) continue;
      for (int c = 0; c < C; ++c) {
        const Window win = window_at(target, warped, y, x, c);
        const SsimParts p = ssim_of(win);
        const double de_ds = -w.ssim / 2.0 * up;
        const double ds_dmy = p.s * (2 * win.mx / p.a - 2 * win.mx / p.b - 2 * win.my / p.cc + 2 * win.my / p.d);
        const double ds_dexy = p.s * 2.0 / p.b;
        const double ds_deyy = -p.s / p.d;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int qy = mirror(y + dy, H), qx = mirror(x + dx, W);
            const double yq = warped.at(qy, qx, c), xq = target.at(qy, qx, c);
            g.at(qy, qx, c) += de_ds * (ds_dmy + ds_deyy * 2 * yq + ds_dexy * xq) / 9.0;
          }
        g.at(y, x, c) += w.l1 * up * sign(warped.at(y, x, c) - target.at(y, x, c));
      }
    }
  return g;
}

Reprojection min_reprojection_loss(const std::vector<ImageGrid>& errors,
                                   const std::vector<ImageGrid>& identity_errors,
                                   const std::vector<Mask>& valids) {
  if (errors.empty()) throw ConfigError("min_reprojection_loss: need at least one source");
  if (valids.size() != errors.size()) throw ConfigError("min_reprojection_loss: one mask per source");
  if (!identity_errors.empty() && identity_errors.size() != errors.size())
    throw ConfigError("min_reprojection_loss: one identity error per source");
  const int H = errors[0].height(), W = errors[0].width();
  for (std::size_t s = 0; s < errors.size(); ++s) {
    if (!errors[s].same_extent(H, W) || errors[s].channels() != 1 || valids[s].height() != H ||
        valids[s].width() != W)
      throw ConfigError("min_reprojection_loss: size mismatch");
    if (!identity_errors.empty() && !identity_errors[s].same_shape(errors[s]))
      throw ConfigError("min_reprojection_loss: identity size mismatch");
  }
  Reprojection r;
  const std::size_t n = static_cast<std::size_t>(H) * W;
  r.choice.assign(n, -1);
  double sum = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    int best = -1;
    double best_err = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < errors.size(); ++s) {
      if (!valids[s][p]) continue;
      const double e = errors[s].values()[p];
      if (e < best_err) {
        best_err = e;
        best = static_cast<int>(s);
      }
    }
    if (best < 0) continue;
    if (!identity_errors.empty()) {
      double id = std::numeric_limits<double>::infinity();
      for (const auto& ie : identity_errors) id = std::min(id, ie.values()[p]);
      if (id <= best_err) continue;
    }
    r.choice[p] = best;
    sum += best_err;
    ++r.count;
  }
  if (r.count == 0) {
    r.degenerate = true;
    return r;
  }
  r.value = sum / static_cast<double>(r.count);
  return r;
}

GridLoss edge_aware_smoothness(const ImageGrid& disp, const ImageGrid& image) {
  if (disp.channels() != 1 || !image.same_extent(disp.height(), disp.width()))
    throw ConfigError("edge_aware_smoothness: size mismatch");
  const int H = disp.height(), W = disp.width(), C = image.channels();
  GridLoss r;
  r.grad = ImageGrid(H, W, 1);
  r.count = static_cast<std::size_t>(H) * W;
  if (r.count == 0) {
    r.degenerate = true;
    return r;
  }
  double mean = 0.0;
  for (double v : disp.values()) mean += v;
  mean /= static_cast<double>(r.count);
  const double m = mean + 1e-7;

  // Accumulate dL/d d* in grad, then chain through the normalisation.
  ImageGrid g(H, W, 1);
  auto image_step = [&](int y0, int x0, int y1, int x1) {
    double s = 0.0;
    for (int c = 0; c < C; ++c) s += std::abs(image.at(y1, x1, c) - image.at(y0, x0, c));
    return std::exp(-s / C);
  };
  double value = 0.0;
  if (W > 1) {
    const double nx = static_cast<double>(H) * (W - 1);
    double sx = 0.0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x + 1 < W; ++x) {
        const double diff = (disp.at(y, x + 1) - disp.at(y, x)) / m;
        const double wgt = image_step(y, x, y, x + 1);
        sx += std::abs(diff) * wgt;
        const double gd = sign(diff) * wgt / nx;
        g.at(y, x + 1) += gd;
        g.at(y, x) -= gd;
      }
    value += sx / nx;
  }
  if (H > 1) {
    const double ny = static_cast<double>(H - 1) * W;
    double sy = 0.0;
    for (int y = 0; y + 1 < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double diff = (disp.at(y + 1, x) - disp.at(y, x)) / m;
        const double wgt = image_step(y, x, y + 1, x);
        sy += std::abs(diff) * wgt;
        const double gd = sign(diff) * wgt / ny;
        g.at(y + 1, x) += gd;
        g.at(y, x) -= gd;
      }
    value += sy / ny;
  }
  r.value = value;
  // d*_i = d_i / m with m = mean(d) + 1e-7.
  double gd_dot_d = 0.0;
  for (std::size_t i = 0; i < r.count; ++i) gd_dot_d += g.values()[i] * disp.values()[i];
  const double common = gd_dot_d / (m * m * static_cast<double>(r.count));
  for (std::size_t i = 0; i < r.count; ++i) r.grad.values()[i] = g.values()[i] / m - common;
  return r;
}

GridLoss edge_aware_smoothness(const DepthRaster& disp, const ImageGrid& image) {
  if (disp.kind != geometry::DepthKind::kDisparity)
    throw ConfigError("edge_aware_smoothness: expects disparity");
  return edge_aware_smoothness(disp.to_grid(), image);
}

ImageGrid softmax(const ImageGrid& logits) {
  ImageGrid p(logits.height(), logits.width(), logits.channels());
  const int C = logits.channels();
  for (int y = 0; y < logits.height(); ++y)
    for (int x = 0; x < logits.width(); ++x) {
      const double* l = logits.pixel(y, x);
      double* o = p.pixel(y, x);
      const double mx = *std::max_element(l, l + C);
      double z = 0.0;
      for (int c = 0; c < C; ++c) z += (o[c] = std::exp(l[c] - mx));
      for (int c = 0; c < C; ++c) o[c] /= z;
    }
  return p;
}

BatchLoss batch_cross_entropy(std::span<const ImageGrid> logits, std::span<const LabelRaster> labels,
                              int ignore_id) {
  if (logits.size() != labels.size()) throw ConfigError("cross_entropy: batch size mismatch");
  BatchLoss r;
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const ImageGrid& lg = logits[i];
    const LabelRaster& lb = labels[i];
    if (lg.channels() < 2) throw ConfigError("cross_entropy: need at least 2 classes");
    if (!lg.same_extent(lb.height(), lb.width())) throw ConfigError("cross_entropy: size mismatch");
    const int C = lg.channels();
    ImageGrid g(lg.height(), lg.width(), C);
    for (int y = 0; y < lg.height(); ++y)
      for (int x = 0; x < lg.width(); ++x) {
        const int t = lb.at(y, x);
        if (t == ignore_id) continue;
        if (t < 0 || t >= C) throw ConfigError("cross_entropy: label out of range");
        const double* l = lg.pixel(y, x);
        const double mx = *std::max_element(l, l + C);
        double z = 0.0;
        for (int c = 0; c < C; ++c) z += std::exp(l[c] - mx);
        sum += std::log(z) - (l[t] - mx);
        double* gp = g.pixel(y, x);
        for (int c = 0; c < C; ++c) gp[c] = std::exp(l[c] - mx) / z;
        gp[t] -= 1.0;
        ++r.count;
      }
    r.grads.push_back(std::move(g));
  }
  if (r.count == 0) {
    r.degenerate = true;
    for (auto& g : r.grads) g.fill(0.0);
    return r;
  }
  const double inv = 1.0 / static_cast<double>(r.count);
  r.value = sum * inv;
  for (auto& g : r.grads)
    for (double& v : g.values()) v *= inv;
  return r;
}

GridLoss cross_entropy(const ImageGrid& logits, const LabelRaster& labels, int ignore_id) {
  BatchLoss b = batch_cross_entropy(std::span(&logits, 1), std::span(&labels, 1), ignore_id);
  return {b.value, std::move(b.grads[0]), b.degenerate, b.count};
}

BatchLoss berhu(std::span<const ImageGrid> pred, std::span<const ImageGrid> target,
                std::span<const Mask> valid) {
  if (pred.size() != target.size() || (!valid.empty() && valid.size() != pred.size()))
    throw ConfigError("berhu: batch size mismatch");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    numgrid::require_same_shape(pred[i], target[i], "berhu");
    if (!valid.empty()) require_mask(valid[i], pred[i].height(), pred[i].width(), "berhu");
  }
  auto on = [&](std::size_t i, std::size_t p) {
    return valid.empty() || mask_on(valid[i], p / static_cast<std::size_t>(pred[i].channels()));
  };
  // The first maximal residual owns the cutoff.
  double rmax = 0.0;
  std::size_t arg_i = 0, arg_p = 0;
  bool any = false;
  BatchLoss r;
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t p = 0; p < pred[i].size(); ++p) {
      if (!on(i, p)) continue;
      ++r.count;
      const double a = std::abs(pred[i].values()[p] - target[i].values()[p]);
      if (!any || a > rmax) {
        rmax = a;
        arg_i = i;
        arg_p = p;
        any = true;
      }
    }
  for (const auto& p : pred) r.grads.emplace_back(p.height(), p.width(), p.channels());
  if (r.count == 0) {
    r.degenerate = true;
    return r;
  }
  const double c = 0.2 * rmax;
  if (c == 0.0) return r;  // every residual is zero
  const double inv = 1.0 / static_cast<double>(r.count);
  double sum = 0.0, dl_dc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t p = 0; p < pred[i].size(); ++p) {
      if (!on(i, p)) continue;
      const double res = pred[i].values()[p] - target[i].values()[p];
      const double a = std::abs(res);
      if (a <= c) {
        sum += a;
        r.grads[i].values()[p] = sign(res) * inv;
      } else {
        sum += (res * res + c * c) / (2 * c);
        r.grads[i].values()[p] = res / c * inv;
        dl_dc += (0.5 - res * res / (2 * c * c)) * inv;
      }
    }
  r.value = sum * inv;
  const double r_arg = pred[arg_i].values()[arg_p] - target[arg_i].values()[arg_p];
  r.grads[arg_i].values()[arg_p] += dl_dc * 0.2 * sign(r_arg);
  return r;
}

GridLoss berhu(const DepthRaster& pred, const DepthRaster& target) {
  if (pred.kind != target.kind) throw ConfigError("berhu: depth kinds differ");
  if (pred.height != target.height || pred.width != target.width) throw ConfigError("berhu: size mismatch");
  Mask valid(pred.height, pred.width);
  for (std::size_t p = 0; p < pred.values.size(); ++p) valid.set(p, pred.valid[p] && target.valid[p]);
  const ImageGrid a = pred.to_grid(), b = target.to_grid();
  BatchLoss r = berhu(std::span(&a, 1), std::span(&b, 1), std::span(&valid, 1));
  return {r.value, std::move(r.grads[0]), r.degenerate, r.count};
}

GridLoss feature_distance(const ImageGrid& bottleneck, const ImageGrid& reference) {
  numgrid::require_same_shape(bottleneck, reference, "feature_distance");
  GridLoss r;
  r.count = bottleneck.size();
  r.grad = ImageGrid(bottleneck.height(), bottleneck.width(), bottleneck.channels());
  if (r.count == 0) {
    r.degenerate = true;
    return r;
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < r.count; ++i) {
    const double d = bottleneck.values()[i] - reference.values()[i];
    sq += d * d;
  }
  const double norm = std::sqrt(sq);
  const double n = static_cast<double>(r.count);
  r.value = norm / n;
  if (norm > 0.0)
    for (std::size_t i = 0; i < r.count; ++i)
      r.grad.values()[i] = (bottleneck.values()[i] - reference.values()[i]) / (n * norm);
  return r;
}

PseudoLabels pseudo_label(const ImageGrid& logits) {
  const ImageGrid p = softmax(logits);
  PseudoLabels out{LabelRaster(logits.height(), logits.width()), ImageGrid(logits.height(), logits.width(), 1)};
  const int C = logits.channels();
  for (int y = 0; y < logits.height(); ++y)
    for (int x = 0; x < logits.width(); ++x) {
      const double* l = logits.pixel(y, x);
      int best = 0;
      for (int c = 1; c < C; ++c)
        if (l[c] > l[best]) best = c;
      out.labels.at(y, x) = best;
      out.confidence.at(y, x) = p.at(y, x, best);
    }
  return out;
}

double confidence_weight(const ImageGrid& confidence, double tau) {
  if (confidence.empty()) return 0.0;
  std::size_t above = 0;
  for (double v : confidence.values()) above += v > tau ? 1 : 0;
  return static_cast<double>(above) / static_cast<double>(confidence.size());
}

}  // namespace depthlab::learner
