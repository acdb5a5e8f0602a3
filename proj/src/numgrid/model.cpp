#include "depthlab/numgrid/model.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "depthlab/errors.hpp"
#include "depthlab/numgrid/rng.hpp"

namespace depthlab::numgrid {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// Layer indices inside the parameter groups.
constexpr int kEnc1 = 0, kEnc2 = 2, kEnc3 = 4;
constexpr int kUp1 = 0, kUp2 = 2, kOut = 4, kSide = 6;

Tensor make_tensor(std::string name, std::vector<int> shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return Tensor{std::move(name), std::move(shape), std::vector<double>(n, 0.0)};
}

void add_conv(std::vector<Tensor>& group, const std::string& name, int in_ch, int out_ch) {
  group.push_back(make_tensor(name + ".weight", {9 * in_ch, out_ch}));
  group.push_back(make_tensor(name + ".bias", {out_ch}));
}

int out_extent(int extent, int stride) { return (extent - 1) / stride + 1; }

RowMat im2col(const ImageGrid& in, int stride) {
  const int ho = out_extent(in.height(), stride);
  const int wo = out_extent(in.width(), stride);
  const int c = in.channels();
  RowMat col = RowMat::Zero(static_cast<Eigen::Index>(ho) * wo, 9 * c);
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      double* row = col.data() + (static_cast<Eigen::Index>(oy) * wo + ox) * 9 * c;
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = oy * stride + ky - 1;
        if (iy < 0 || iy >= in.height()) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = ox * stride + kx - 1;
          if (ix < 0 || ix >= in.width()) continue;
          std::copy_n(in.pixel(iy, ix), c, row + (ky * 3 + kx) * c);
        }
      }
    }
  }
  return col;
}

void col2im_add(const RowMat& dcol, int stride, ImageGrid& din) {
  const int ho = out_extent(din.height(), stride);
  const int wo = out_extent(din.width(), stride);
  const int c = din.channels();
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      const double* row = dcol.data() + (static_cast<Eigen::Index>(oy) * wo + ox) * 9 * c;
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = oy * stride + ky - 1;
        if (iy < 0 || iy >= din.height()) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = ox * stride + kx - 1;
          if (ix < 0 || ix >= din.width()) continue;
          double* dst = din.pixel(iy, ix);
          const double* src = row + (ky * 3 + kx) * c;
          for (int k = 0; k < c; ++k) dst[k] += src[k];
        }
      }
    }
  }
}

ImageGrid conv3x3(const ImageGrid& in, const Tensor& w, const Tensor& b, int stride) {
  const int cin = in.channels();
  const int cout = b.shape[0];
  if (w.shape[0] != 9 * cin) {
    throw ConfigError("conv " + w.name + ": expected " + std::to_string(w.shape[0] / 9) +
                      " input channels, got " + std::to_string(cin));
  }
  const RowMat col = im2col(in, stride);
  ImageGrid out(out_extent(in.height(), stride), out_extent(in.width(), stride), cout);
  MutMap o(out.storage().data(), out.pixels(), cout);
  o.noalias() = col * ConstMap(w.values.data(), 9 * cin, cout);
  o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.values.data(), cout);
  return out;
}

// Accumulates weight/bias gradients; returns the input gradient when wanted.
ImageGrid conv3x3_backward(const ImageGrid& in, const Tensor& w, const ImageGrid& dout, int stride,
                           Tensor& dw, Tensor& db, bool want_input_grad) {
  const int cin = in.channels();
  const int cout = dout.channels();
  const RowMat col = im2col(in, stride);
  ConstMap g(dout.storage().data(), dout.pixels(), cout);
  MutMap(dw.values.data(), 9 * cin, cout).noalias() += col.transpose() * g;
  Eigen::Map<Eigen::RowVectorXd>(db.values.data(), cout) += g.colwise().sum();
  if (!want_input_grad) return {};
  const RowMat dcol = g * ConstMap(w.values.data(), 9 * cin, cout).transpose();
  ImageGrid din(in.height(), in.width(), cin);
  col2im_add(dcol, stride, din);
  return din;
}

void elu_inplace(ImageGrid& x) {
  for (double& v : x.values()) v = v > 0.0 ? v : std::expm1(v);
}

// d/dx elu(x) expressed through the output y.
void elu_backward_inplace(const ImageGrid& y, ImageGrid& grad) {
  auto yv = y.values();
  auto gv = grad.values();
  for (std::size_t i = 0; i < gv.size(); ++i) {
    if (yv[i] <= 0.0) gv[i] *= yv[i] + 1.0;
  }
}

void sigmoid_inplace(ImageGrid& x) {
  for (double& v : x.values()) v = 1.0 / (1.0 + std::exp(-v));
}

ImageGrid concat(const ImageGrid& a, const ImageGrid& b) {
  if (!a.same_extent(b.height(), b.width())) throw ConfigError("concat: extent mismatch");
  ImageGrid out(a.height(), a.width(), a.channels() + b.channels());
  for (int y = 0; y < a.height(); ++y) {
    for (int x = 0; x < a.width(); ++x) {
      double* dst = out.pixel(y, x);
      std::copy_n(a.pixel(y, x), a.channels(), dst);
      std::copy_n(b.pixel(y, x), b.channels(), dst + a.channels());
    }
  }
  return out;
}

// Splits a concatenated gradient into its first `ca` channels and the rest.
std::pair<ImageGrid, ImageGrid> split_channels(const ImageGrid& g, int ca) {
  const int cb = g.channels() - ca;
  ImageGrid a(g.height(), g.width(), ca);
  ImageGrid b(g.height(), g.width(), cb);
  for (int y = 0; y < g.height(); ++y) {
    for (int x = 0; x < g.width(); ++x) {
      const double* src = g.pixel(y, x);
      std::copy_n(src, ca, a.pixel(y, x));
      std::copy_n(src + ca, cb, b.pixel(y, x));
    }
  }
  return {std::move(a), std::move(b)};
}

void add_into(ImageGrid& dst, const ImageGrid& src) {
  if (src.empty()) return;
  if (dst.empty()) {
    dst = src;
    return;
  }
  require_same_shape(dst, src, "gradient accumulation");
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

void check_grad(const ImageGrid& g, const char* op) {
  if (!g.all_finite()) throw NumericError(std::string(op) + ": non-finite gradient");
}

void check_grad(const Tensor& t, const char* group) {
  for (double v : t.values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(group) + "/" + t.name + ": non-finite gradient");
    }
  }
}

void run_head(const std::vector<Tensor>& head, const ForwardCache& c, bool depth, HeadRecord& rec) {
  rec.active = true;
  rec.up1.input = concat(upsample_nearest2(c.enc3.output), c.enc2.output);
  rec.up1.output = conv3x3(rec.up1.input, head[kUp1], head[kUp1 + 1], 1);
  elu_inplace(rec.up1.output);
  rec.up2.input = concat(upsample_nearest2(rec.up1.output), c.enc1.output);
  rec.up2.output = conv3x3(rec.up2.input, head[kUp2], head[kUp2 + 1], 1);
  elu_inplace(rec.up2.output);
  rec.out.input = concat(upsample_nearest2(rec.up2.output), c.image);
  rec.out.output = conv3x3(rec.out.input, head[kOut], head[kOut + 1], 1);
  if (depth) {
    sigmoid_inplace(rec.out.output);
    rec.side.input = rec.up2.output;
    rec.side.output = conv3x3(rec.side.input, head[kSide], head[kSide + 1], 1);
    sigmoid_inplace(rec.side.output);
  }
}

// Backpropagates one head. Returns gradients w.r.t. (enc3, enc2, enc1).
struct EncoderGrads {
  ImageGrid enc3, enc2, enc1;
};

EncoderGrads head_backward(const std::vector<Tensor>& head, std::vector<Tensor>& dhead,
                           const HeadRecord& rec, const ForwardCache& c, ImageGrid dout,
                           ImageGrid dside, bool depth, bool want_encoder,
                           const char* group) {
  EncoderGrads eg;
  ImageGrid du2;
  if (!dout.empty()) {
    if (depth) {
      auto yv = rec.out.output.values();
      auto gv = dout.values();
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] *= yv[i] * (1.0 - yv[i]);
    }
    ImageGrid dcat = conv3x3_backward(rec.out.input, head[kOut], dout, 1, dhead[kOut],
                                      dhead[kOut + 1], true);
    du2 = downsum2(split_channels(dcat, rec.up2.output.channels()).first);
  }
  if (depth && !dside.empty()) {
    auto yv = rec.side.output.values();
    auto gv = dside.values();
    for (std::size_t i = 0; i < gv.size(); ++i) gv[i] *= yv[i] * (1.0 - yv[i]);
    add_into(du2, conv3x3_backward(rec.side.input, head[kSide], dside, 1, dhead[kSide],
                                   dhead[kSide + 1], true));
  }
  if (du2.empty()) return eg;
  elu_backward_inplace(rec.up2.output, du2);
  ImageGrid dcat2 =
      conv3x3_backward(rec.up2.input, head[kUp2], du2, 1, dhead[kUp2], dhead[kUp2 + 1], true);
  auto [dup1, de1] = split_channels(dcat2, rec.up1.output.channels());
  ImageGrid du1 = downsum2(dup1);
  elu_backward_inplace(rec.up1.output, du1);
  ImageGrid dcat1 = conv3x3_backward(rec.up1.input, head[kUp1], du1, 1, dhead[kUp1],
                                     dhead[kUp1 + 1], want_encoder);
  for (const auto& t : dhead) check_grad(t, group);
  if (want_encoder) {
    auto [dup3, de2] = split_channels(dcat1, c.enc3.output.channels());
    eg.enc3 = downsum2(dup3);
    eg.enc2 = std::move(de2);
    eg.enc1 = std::move(de1);
  }
  return eg;
}

}  // namespace

void ModelConfig::validate() const {
  if (height <= 0 || width <= 0 || height % 8 != 0 || width % 8 != 0) {
    throw ConfigError("model config: height and width must be positive multiples of 8");
  }
  if (in_channels <= 0) throw ConfigError("model config: in_channels must be positive");
  if (has_seg_head && num_classes < 2) throw ConfigError("model config: num_classes must be >= 2");
  for (int c : encoder_channels) {
    if (c <= 0) throw ConfigError("model config: encoder channels must be positive");
  }
  for (int c : decoder_channels) {
    if (c <= 0) throw ConfigError("model config: decoder channels must be positive");
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"height", c.height},
          {"width", c.width},
          {"in_channels", c.in_channels},
          {"num_classes", c.num_classes},
          {"encoder_channels", c.encoder_channels},
          {"decoder_channels", c.decoder_channels},
          {"has_depth_head", c.has_depth_head},
          {"has_seg_head", c.has_seg_head}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.encoder_channels = j.value("encoder_channels", c.encoder_channels);
  c.decoder_channels = j.value("decoder_channels", c.decoder_channels);
  c.has_depth_head = j.value("has_depth_head", c.has_depth_head);
  c.has_seg_head = j.value("has_seg_head", c.has_seg_head);
  c.validate();
  return c;
}

const char* group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::kEncoder: return "encoder";
    case ParamGroup::kDepthHead: return "depth_head";
    case ParamGroup::kSegHead: return "seg_head";
  }
  return "?";
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  p.config = config;
  const auto& e = config.encoder_channels;
  const auto& d = config.decoder_channels;
  add_conv(p.encoder, "enc1", config.in_channels, e[0]);
  add_conv(p.encoder, "enc2", e[0], e[1]);
  add_conv(p.encoder, "enc3", e[1], e[2]);
  auto add_head = [&](std::vector<Tensor>& head, int out_channels, bool side) {
    add_conv(head, "up1", e[2] + e[1], d[0]);
    add_conv(head, "up2", d[0] + e[0], d[1]);
    add_conv(head, "out", d[1] + config.in_channels, out_channels);
    if (side) add_conv(head, "side", d[1], 1);
  };
  if (config.has_depth_head) add_head(p.depth_head, 1, true);
  if (config.has_seg_head) add_head(p.seg_head, config.num_classes, false);
  return p;
}

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = zeros(config);
  const Rng root(seed);
  for (ParamGroup g : {ParamGroup::kEncoder, ParamGroup::kDepthHead, ParamGroup::kSegHead}) {
    auto& tensors = p.group(g);
    for (std::size_t i = 0; i < tensors.size(); i += 2) {
      const int fan_in = tensors[i].shape[0];
      const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
      Rng rng = root.split(group_name(g)).split(tensors[i].name);
      for (double& v : tensors[i].values) v = rng.uniform(-s, s);
      for (double& v : tensors[i + 1].values) v = rng.uniform(-s, s);
    }
  }
  return p;
}

std::vector<Tensor>& ModelParams::group(ParamGroup g) {
  return g == ParamGroup::kEncoder ? encoder : g == ParamGroup::kDepthHead ? depth_head : seg_head;
}
const std::vector<Tensor>& ModelParams::group(ParamGroup g) const {
  return g == ParamGroup::kEncoder ? encoder : g == ParamGroup::kDepthHead ? depth_head : seg_head;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto* grp : {&encoder, &depth_head, &seg_head}) {
    for (const auto& t : *grp) n += t.values.size();
  }
  return n;
}

bool ModelParams::all_finite() const {
  for (const auto* grp : {&encoder, &depth_head, &seg_head}) {
    for (const auto& t : *grp) {
      for (double v : t.values) {
        if (!std::isfinite(v)) return false;
      }
    }
  }
  return true;
}

GradBundle GradBundle::zeros_like(const ModelParams& params) {
  GradBundle g;
  auto zero = [](std::vector<Tensor> ts) {
    for (auto& t : ts) std::fill(t.values.begin(), t.values.end(), 0.0);
    return ts;
  };
  g.encoder = zero(params.encoder);
  g.depth_head = zero(params.depth_head);
  g.seg_head = zero(params.seg_head);
  return g;
}

std::vector<Tensor>& GradBundle::group(ParamGroup g) {
  return g == ParamGroup::kEncoder ? encoder : g == ParamGroup::kDepthHead ? depth_head : seg_head;
}
const std::vector<Tensor>& GradBundle::group(ParamGroup g) const {
  return g == ParamGroup::kEncoder ? encoder : g == ParamGroup::kDepthHead ? depth_head : seg_head;
}

void GradBundle::add(const GradBundle& other, double scale) {
  for (ParamGroup g : {ParamGroup::kEncoder, ParamGroup::kDepthHead, ParamGroup::kSegHead}) {
    auto& mine = group(g);
    const auto& theirs = other.group(g);
    if (mine.size() != theirs.size()) throw ConfigError("GradBundle::add: group size mismatch");
    for (std::size_t i = 0; i < mine.size(); ++i) {
      if (mine[i].values.size() != theirs[i].values.size()) {
        throw ConfigError("GradBundle::add: shape mismatch at " + mine[i].name);
      }
      for (std::size_t k = 0; k < mine[i].values.size(); ++k) {
        mine[i].values[k] += scale * theirs[i].values[k];
      }
    }
  }
}

void GradBundle::scale(double factor) {
  for (auto* grp : {&encoder, &depth_head, &seg_head}) {
    for (auto& t : *grp) {
      for (double& v : t.values) v *= factor;
    }
  }
}

double GradBundle::squared_norm() const {
  double s = 0.0;
  for (const auto* grp : {&encoder, &depth_head, &seg_head}) {
    for (const auto& t : *grp) {
      for (double v : t.values) s += v * v;
    }
  }
  return s;
}

bool GradBundle::all_finite() const {
  for (const auto* grp : {&encoder, &depth_head, &seg_head}) {
    for (const auto& t : *grp) {
      for (double v : t.values) {
        if (!std::isfinite(v)) return false;
      }
    }
  }
  return true;
}

namespace {
template <typename Bundle>
std::vector<double> flatten_impl(const Bundle& b) {
  std::vector<double> flat;
  for (const auto* grp : {&b.encoder, &b.depth_head, &b.seg_head}) {
    for (const auto& t : *grp) flat.insert(flat.end(), t.values.begin(), t.values.end());
  }
  return flat;
}
}  // namespace

std::vector<double> flatten(const ModelParams& params) { return flatten_impl(params); }
std::vector<double> flatten(const GradBundle& grads) { return flatten_impl(grads); }

void unflatten(std::span<const double> flat, ModelParams& params) {
  if (flat.size() != params.parameter_count()) throw ConfigError("unflatten: size mismatch");
  std::size_t k = 0;
  for (auto* grp : {&params.encoder, &params.depth_head, &params.seg_head}) {
    for (auto& t : *grp) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(k), t.values.size(), t.values.begin());
      k += t.values.size();
    }
  }
}

std::string coordinate_name(const ModelParams& params, std::size_t flat_index) {
  std::size_t k = 0;
  for (ParamGroup g : {ParamGroup::kEncoder, ParamGroup::kDepthHead, ParamGroup::kSegHead}) {
    for (const auto& t : params.group(g)) {
      if (flat_index < k + t.values.size()) {
        return std::string(group_name(g)) + "/" + t.name + "[" + std::to_string(flat_index - k) +
               "]";
      }
      k += t.values.size();
    }
  }
  return "?";
}

ForwardResult forward(const ModelParams& params, const ImageGrid& image, HeadSelection heads) {
  const ModelConfig& cfg = params.config;
  if (image.height() != cfg.height || image.width() != cfg.width ||
      image.channels() != cfg.in_channels) {
    throw ConfigError("forward: image " + std::to_string(image.height()) + "x" +
                      std::to_string(image.width()) + "x" + std::to_string(image.channels()) +
                      " does not match model config " + std::to_string(cfg.height) + "x" +
                      std::to_string(cfg.width) + "x" + std::to_string(cfg.in_channels));
  }
  ForwardResult r;
  ForwardCache& c = r.cache;
  c.image = image;
  c.enc1.output = conv3x3(image, params.encoder[kEnc1], params.encoder[kEnc1 + 1], 2);
  elu_inplace(c.enc1.output);
  c.enc2.output = conv3x3(c.enc1.output, params.encoder[kEnc2], params.encoder[kEnc2 + 1], 2);
  elu_inplace(c.enc2.output);
  c.enc3.output = conv3x3(c.enc2.output, params.encoder[kEnc3], params.encoder[kEnc3 + 1], 2);
  elu_inplace(c.enc3.output);
  r.outputs.bottleneck = c.enc3.output;

  if (heads.depth && cfg.has_depth_head) {
    run_head(params.depth_head, c, true, c.depth);
    r.outputs.disparity = c.depth.out.output;
    r.outputs.disparity_half = c.depth.side.output;
    r.outputs.depth_features = c.depth.up2.output;
  }
  if (heads.seg && cfg.has_seg_head) {
    run_head(params.seg_head, c, false, c.seg);
    r.outputs.seg_logits = c.seg.out.output;
  }
  return r;
}

ForwardOutputs tiny_net_forward(const ModelParams& params, const ImageGrid& image,
                                HeadSelection heads) {
  return forward(params, image, heads).outputs;
}

ImageGrid encode(const ModelParams& params, const ImageGrid& image) {
  return forward(params, image, HeadSelection{false, false}).outputs.bottleneck;
}

GradBundle backward(const ModelParams& params, const ForwardCache& cache, const OutputGrads& grads,
                    BackwardOptions options) {
  GradBundle out = GradBundle::zeros_like(params);
  const bool want_encoder = !options.freeze_encoder;
  ImageGrid de3 = grads.bottleneck;
  ImageGrid de2;
  ImageGrid de1;

  auto merge = [&](EncoderGrads eg) {
    add_into(de3, eg.enc3);
    add_into(de2, eg.enc2);
    add_into(de1, eg.enc1);
  };

  if (!grads.disparity.empty() || !grads.disparity_half.empty()) {
    if (!cache.depth.active) throw ConfigError("backward: depth gradient without depth forward");
    if (!grads.disparity.empty()) {
      require_same_shape(grads.disparity, cache.depth.out.output, "backward disparity");
    }
    if (!grads.disparity_half.empty()) {
      require_same_shape(grads.disparity_half, cache.depth.side.output, "backward disparity_half");
    }
    merge(head_backward(params.depth_head, out.depth_head, cache.depth, cache, grads.disparity,
                        grads.disparity_half, true, want_encoder, "depth_head"));
  }
  if (!grads.seg_logits.empty()) {
    if (!cache.seg.active) throw ConfigError("backward: seg gradient without seg forward");
    require_same_shape(grads.seg_logits, cache.seg.out.output, "backward seg_logits");
    merge(head_backward(params.seg_head, out.seg_head, cache.seg, cache, grads.seg_logits, {},
                        false, want_encoder, "seg_head"));
  }
  if (!want_encoder) return out;
  if (!de3.empty()) check_grad(de3, "bottleneck");

  auto& enc = out.encoder;
  if (!de3.empty()) {
    elu_backward_inplace(cache.enc3.output, de3);
    add_into(de2, conv3x3_backward(cache.enc2.output, params.encoder[kEnc3], de3, 2, enc[kEnc3],
                                   enc[kEnc3 + 1], true));
  }
  if (!de2.empty()) {
    elu_backward_inplace(cache.enc2.output, de2);
    add_into(de1, conv3x3_backward(cache.enc1.output, params.encoder[kEnc2], de2, 2, enc[kEnc2],
                                   enc[kEnc2 + 1], true));
  }
  if (!de1.empty()) {
    elu_backward_inplace(cache.enc1.output, de1);
    conv3x3_backward(cache.image, params.encoder[kEnc1], de1, 2, enc[kEnc1], enc[kEnc1 + 1],
                     false);
  }
  for (const auto& t : enc) check_grad(t, "encoder");
  return out;
}

void require_finite(double value, const std::string& op) {
  if (!std::isfinite(value)) throw NumericError(op + ": non-finite loss value");
}

void transfer_depth_to_seg(ModelParams& params, std::uint64_t seed) {
  if (!params.config.has_depth_head || !params.config.has_seg_head) {
    throw ConfigError("transfer_depth_to_seg: model needs both heads");
  }
  for (std::size_t i = 0; i < params.seg_head.size(); ++i) {
    Tensor& dst = params.seg_head[i];
    const Tensor& src = params.depth_head[i];
    if (dst.name == src.name && dst.shape == src.shape) dst.values = src.values;
  }
  // Final classifier: always freshly initialised.
  const ModelParams fresh = ModelParams::init(params.config, seed);
  params.seg_head[kOut] = fresh.seg_head[kOut];
  params.seg_head[kOut + 1] = fresh.seg_head[kOut + 1];
}

}  // namespace depthlab::numgrid
