#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "depthlab/errors.hpp"
#include "depthlab/numgrid/blob.hpp"
#include "depthlab/numgrid/gradcheck.hpp"
#include "depthlab/numgrid/model.hpp"
#include "depthlab/numgrid/optim.hpp"
#include "depthlab/numgrid/rng.hpp"

using namespace depthlab;
using namespace depthlab::numgrid;

namespace {

ModelConfig small_config(int h = 8, int w = 8) {
  ModelConfig c;
  c.height = h;
  c.width = w;
  c.num_classes = 4;
  c.encoder_channels = {3, 4, 4};
  c.decoder_channels = {4, 3};
  return c;
}

ImageGrid random_image(int h, int w, int c, std::uint64_t seed) {
  ImageGrid img(h, w, c);
  Rng rng(seed);
  for (double& v : img.values()) v = rng.uniform();
  return img;
}

ImageGrid random_like(const ImageGrid& g, Rng& rng) {
  ImageGrid out(g.height(), g.width(), g.channels());
  for (double& v : out.values()) v = rng.uniform(-1.0, 1.0);
  return out;
}

double dot(const ImageGrid& a, const ImageGrid& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

}  // namespace

TEST(TinyNetForward, ZeroParamsGiveUniformLogits) {
  const auto params = ModelParams::zeros(small_config());
  const auto out = tiny_net_forward(params, random_image(8, 8, 3, 1));
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      for (int c = 1; c < 4; ++c) EXPECT_EQ(out.seg_logits.at(y, x, c), out.seg_logits.at(y, x, 0));
    }
  }
  EXPECT_EQ(out.seg_logits.channels(), 4);
  EXPECT_EQ(out.seg_logits.height(), 8);
}

TEST(TinyNetForward, DeterministicAcrossRuns) {
  const auto cfg = ModelConfig{};
  const auto a = tiny_net_forward(ModelParams::init(cfg, 7), random_image(32, 64, 3, 3));
  const auto b = tiny_net_forward(ModelParams::init(cfg, 7), random_image(32, 64, 3, 3));
  EXPECT_EQ(a.seg_logits, b.seg_logits);
  EXPECT_EQ(a.disparity, b.disparity);
  EXPECT_EQ(a.bottleneck, b.bottleneck);
  EXPECT_EQ(a.bottleneck.height(), 4);
  EXPECT_EQ(a.bottleneck.width(), 8);
}

TEST(TinyNetForward, DisparityStrictlyInsideUnitInterval) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto params = ModelParams::init(ModelConfig{}, seed);
    // Large weights push the sigmoid towards saturation without reaching it.
    for (auto& t : params.depth_head) {
      for (double& v : t.values) v *= 3.0;
    }
    const auto out = tiny_net_forward(params, random_image(32, 64, 3, seed + 100));
    for (double d : out.disparity.values()) {
      EXPECT_GT(d, 0.0);
      EXPECT_LT(d, 1.0);
    }
    for (double d : out.disparity_half.values()) {
      EXPECT_GT(d, 0.0);
      EXPECT_LT(d, 1.0);
    }
  }
}

TEST(TinyNetForward, DimensionMismatchIsConfigError) {
  const auto params = ModelParams::init(small_config(), 1);
  EXPECT_THROW(tiny_net_forward(params, random_image(16, 8, 3, 1)), ConfigError);
  EXPECT_THROW(tiny_net_forward(params, random_image(8, 8, 1, 1)), ConfigError);
}

TEST(Backward, FrozenEncoderGetsZeroGradients) {
  const auto params = ModelParams::init(small_config(), 2);
  const auto fr = forward(params, random_image(8, 8, 3, 5));
  OutputGrads g;
  g.seg_logits = ImageGrid(8, 8, 4, 1.0);  // loss = sum of logits
  const auto grads = backward(params, fr.cache, g, {.freeze_encoder = true});
  for (const auto& t : grads.encoder) {
    for (double v : t.values) EXPECT_EQ(v, 0.0);
  }
  double seg_norm = 0.0;
  for (const auto& t : grads.seg_head) {
    for (double v : t.values) seg_norm += v * v;
  }
  EXPECT_GT(seg_norm, 0.0);
  for (const auto& t : grads.depth_head) {
    for (double v : t.values) EXPECT_EQ(v, 0.0);
  }
}

TEST(Backward, ZeroLossGivesZeroGradients) {
  const auto params = ModelParams::init(small_config(), 2);
  const auto fr = forward(params, random_image(8, 8, 3, 5));
  OutputGrads g;
  g.seg_logits = ImageGrid(8, 8, 4, 0.0);
  g.disparity = ImageGrid(8, 8, 1, 0.0);
  const auto grads = backward(params, fr.cache, g);
  EXPECT_EQ(grads.squared_norm(), 0.0);
}

TEST(Backward, MatchesFiniteDifferencesOnAllOutputs) {
  const auto params = ModelParams::init(small_config(), 11);
  const auto image = random_image(8, 8, 3, 12);
  const auto base = forward(params, image);
  Rng rng(13);
  const ImageGrid ws = random_like(base.outputs.seg_logits, rng);
  const ImageGrid wd = random_like(base.outputs.disparity, rng);
  const ImageGrid wh = random_like(base.outputs.disparity_half, rng);
  const ImageGrid wb = random_like(base.outputs.bottleneck, rng);
  // Nonlinear in the seg logits so second-order mistakes would show up.
  auto loss = [&](const ModelParams& p) {
    const auto o = tiny_net_forward(p, image);
    double s = dot(ws, o.seg_logits) + dot(wd, o.disparity) + dot(wh, o.disparity_half) +
               dot(wb, o.bottleneck);
    for (double v : o.seg_logits.values()) s += 0.5 * v * v;
    return s;
  };
  OutputGrads g;
  g.seg_logits = ws;
  for (std::size_t i = 0; i < ws.size(); ++i) {
    g.seg_logits.values()[i] += base.outputs.seg_logits.values()[i];
  }
  g.disparity = wd;
  g.disparity_half = wh;
  g.bottleneck = wb;
  const auto grads = backward(params, base.cache, g);
  const auto report = gradcheck(loss, params, grads, {.step = 1e-6});
  EXPECT_LT(report.max_rel_err, 1e-4) << report.worst_param << " analytic "
                                      << report.worst_analytic << " numeric "
                                      << report.worst_numeric;
  EXPECT_EQ(report.coordinates_checked, params.parameter_count());
}

TEST(Backward, NonFiniteUpstreamNamesTheOp) {
  const auto params = ModelParams::init(small_config(), 2);
  const auto fr = forward(params, random_image(8, 8, 3, 5));
  OutputGrads g;
  g.seg_logits = ImageGrid(8, 8, 4, 0.0);
  g.seg_logits.at(3, 3, 1) = std::nan("");
  try {
    backward(params, fr.cache, g);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("seg_head"), std::string::npos) << e.what();
  }
  EXPECT_THROW(require_finite(INFINITY, "cross_entropy"), NumericError);
}

TEST(Gradcheck, QuadraticIsExact) {
  std::vector<double> x = {0.3, -1.2, 2.5, 4.0};
  std::vector<double> g;
  for (double v : x) g.push_back(2.0 * v);
  auto f = [](std::span<const double> t) {
    double s = 0.0;
    for (double v : t) s += v * v;
    return s;
  };
  const auto report = gradcheck(f, x, g, {.step = 1e-6});
  EXPECT_LT(report.max_rel_err, 1e-8);
}

TEST(Gradcheck, FivePointStencilIsExactForQuartics) {
  // The five-point stencil cancels every term up to the fourth derivative.
  std::vector<double> x = {0.7, -1.3};
  std::vector<double> g;
  for (double v : x) g.push_back(4.0 * v * v * v + 2.0 * v);
  auto f = [](std::span<const double> t) {
    double s = 0.0;
    for (double v : t) s += v * v * v * v + v * v;
    return s;
  };
  EXPECT_LT(gradcheck(f, x, g, {.step = 1e-2, .order = 4}).max_rel_err, 1e-10);
  EXPECT_GT(gradcheck(f, x, g, {.step = 1e-2, .order = 2}).max_rel_err, 1e-6);
  EXPECT_THROW(gradcheck(f, x, g, {.order = 3}), ConfigError);
}

TEST(Gradcheck, ConstantFunctionPassesThroughFloor) {
  std::vector<double> x = {1.0, 2.0};
  std::vector<double> g = {0.0, 0.0};
  const auto report = gradcheck([](std::span<const double>) { return 3.0; }, x, g);
  EXPECT_EQ(report.max_rel_err, 0.0);
}

TEST(Gradcheck, DetectsWrongGradientAndNonFinite) {
  std::vector<double> x = {1.0};
  std::vector<double> wrong = {3.0};
  auto f = [](std::span<const double> t) { return t[0] * t[0]; };
  EXPECT_GT(gradcheck(f, x, wrong).max_rel_err, 0.1);
  EXPECT_THROW(gradcheck([](std::span<const double>) { return NAN; }, x, wrong), NumericError);
}

TEST(Gradcheck, SubsetSamplingHonoursBudget) {
  std::vector<double> x(1000, 0.5);
  std::vector<double> g(1000, 1.0);
  auto f = [](std::span<const double> t) {
    double s = 0.0;
    for (double v : t) s += v;
    return s;
  };
  const auto report = gradcheck(f, x, g, {.max_coordinates = 200, .seed = 4});
  EXPECT_EQ(report.coordinates_checked, 200u);
  EXPECT_LT(report.max_rel_err, 1e-8);
}

namespace {
// A one-scalar "model": a config whose only interesting tensor we poke.
ModelParams scalar_params(double theta) {
  auto p = ModelParams::zeros(small_config());
  p.encoder[0].values[0] = theta;
  return p;
}
}  // namespace

TEST(SgdStep, PlainStep) {
  auto p = scalar_params(1.0);
  auto g = GradBundle::zeros_like(p);
  g.encoder[0].values[0] = 1.0;
  SgdState state;
  sgd_step(p, g, {.lr = 0.1, .momentum = 0.0, .weight_decay = 0.0, .clip_norm = 10.0}, state);
  EXPECT_DOUBLE_EQ(p.encoder[0].values[0], 0.9);
}

TEST(SgdStep, ClipsGlobalNorm) {
  auto p = scalar_params(0.0);
  auto g = GradBundle::zeros_like(p);
  g.encoder[0].values[0] = 60.0;
  g.encoder[0].values[1] = 80.0;  // norm 100
  SgdState state;
  sgd_step(p, g, {.lr = 1.0, .momentum = 0.0, .weight_decay = 0.0, .clip_norm = 10.0}, state);
  EXPECT_NEAR(p.encoder[0].values[0], -6.0, 1e-12);
  EXPECT_NEAR(p.encoder[0].values[1], -8.0, 1e-12);
}

TEST(SgdStep, MomentumTwoStepRecurrence) {
  // Hand-rolled recurrence: buf1 = g, buf2 = m*buf1 + g; theta_k = theta_{k-1} - lr*buf_k.
  double theta = 0.0, buf = 0.0;
  for (int k = 0; k < 2; ++k) {
    buf = k == 0 ? 1.0 : 0.9 * buf + 1.0;
    theta -= 0.1 * buf;
  }
  ASSERT_NEAR(theta, -0.29, 1e-15);

  auto p = scalar_params(0.0);
  auto g = GradBundle::zeros_like(p);
  g.encoder[0].values[0] = 1.0;
  SgdState state;
  const SgdConfig cfg{.lr = 0.1, .momentum = 0.9, .weight_decay = 0.0, .clip_norm = 10.0};
  sgd_step(p, g, cfg, state);
  sgd_step(p, g, cfg, state);
  EXPECT_NEAR(p.encoder[0].values[0], theta, 1e-15);
}

TEST(SgdStep, ZeroLearningRateIsIdentity) {
  auto p = ModelParams::init(small_config(), 3);
  const auto before = p;
  auto g = GradBundle::zeros_like(p);
  for (auto& t : g.seg_head) {
    for (double& v : t.values) v = 0.7;
  }
  SgdState state;
  sgd_step(p, g, {.lr = 0.0}, state);
  EXPECT_EQ(p, before);
}

TEST(SgdStep, WeightDecayAndShapeMismatch) {
  auto p = scalar_params(2.0);
  auto g = GradBundle::zeros_like(p);
  SgdState state;
  sgd_step(p, g, {.lr = 0.5, .momentum = 0.0, .weight_decay = 0.1, .clip_norm = 0.0}, state);
  EXPECT_DOUBLE_EQ(p.encoder[0].values[0], 2.0 - 0.5 * 0.2);

  auto bad = GradBundle::zeros_like(p);
  bad.encoder[0].values.pop_back();
  SgdState fresh;
  EXPECT_THROW(sgd_step(p, bad, {}, fresh), ConfigError);
}

TEST(Checkpoint, RoundTripIsExact) {
  const auto params = ModelParams::init(ModelConfig{}, 21);
  const auto path = std::filesystem::temp_directory_path() / "depthlab_ckpt_test.bin";
  save_checkpoint(path, params, 21, 1234);
  const auto blob = read_blob(path);
  EXPECT_EQ(blob.meta.at("step").get<std::int64_t>(), 1234);
  EXPECT_EQ(blob.meta.at("seed").get<std::uint64_t>(), 21u);
  EXPECT_EQ(load_checkpoint(path), params);
  // Payload is raw little-endian doubles after the header.
  const std::string bytes = read_file(path);
  EXPECT_EQ(bytes.substr(0, 8), "DLBLOB01");
  std::filesystem::remove(path);
  EXPECT_THROW(read_blob(path), IoError);
}

TEST(Transfer, CopiesCompatibleTensorsAndReinitialisesClassifier) {
  auto params = ModelParams::init(ModelConfig{}, 5);
  transfer_depth_to_seg(params, 99);
  EXPECT_EQ(params.seg_head[0], params.depth_head[0]);  // up1.weight
  EXPECT_EQ(params.seg_head[2], params.depth_head[2]);  // up2.weight
  EXPECT_NE(params.seg_head[4].shape, params.depth_head[4].shape);  // out.weight: C vs 1
}

TEST(Rng, SplitStreamsAreIndependentOfParentDraws) {
  Rng a(42);
  Rng b(42);
  for (int i = 0; i < 10; ++i) b.next_u64();
  Rng ca = a.split("stage");
  Rng cb = b.split("stage");
  EXPECT_EQ(ca.next_u64(), cb.next_u64());
  EXPECT_NE(a.split("x").next_u64(), a.split("y").next_u64());
  double mean = 0.0;
  Rng u(1);
  for (int i = 0; i < 20000; ++i) mean += u.uniform();
  EXPECT_NEAR(mean / 20000.0, 0.5, 0.01);
}
