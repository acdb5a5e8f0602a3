#include <gtest/gtest.h>

#include <cmath>

#include "depthlab/errors.hpp"
#include "depthlab/geometry/camera.hpp"
#include "depthlab/numgrid/gradcheck.hpp"
#include "depthlab/numgrid/rng.hpp"

using namespace depthlab;
using namespace depthlab::geometry;
using numgrid::Rng;

namespace {

ImageGrid random_image(int h, int w, int c, std::uint64_t seed) {
  ImageGrid img(h, w, c);
  Rng rng(seed);
  for (double& v : img.values()) v = rng.uniform();
  return img;
}

// Image whose value is a smooth function of the pixel position.
ImageGrid ramp_image(int h, int w) {
  ImageGrid img(h, w, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.at(y, x) = 0.3 * std::sin(0.2 * x) + 0.01 * y * y;
  return img;
}

DepthRaster constant_depth(int h, int w, double z) { return DepthRaster(h, w, DepthKind::kDepth, z); }

}  // namespace

TEST(Intrinsics, ScaledKeepsPixelCentres) {
  const Intrinsics k = Intrinsics{}.scaled(2.0);
  EXPECT_DOUBLE_EQ(k.fx, 16.0);
  EXPECT_DOUBLE_EQ(k.cx, 15.5);
  EXPECT_DOUBLE_EQ(k.cy, 7.5);
  EXPECT_THROW((Intrinsics{0.0, 1.0, 0.0, 0.0}.validate()), ConfigError);
}

TEST(Pose, ComposeWithInverseIsIdentity) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose p = Pose::from_yaw_translation(rng.uniform(-1, 1),
                                              {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)});
    const Pose q = p.compose(p.inverse());
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) EXPECT_NEAR(q.rotation[r][c], r == c ? 1.0 : 0.0, 1e-12);
      EXPECT_NEAR(q.translation[r], 0.0, 1e-12);
    }
    const Vec3 x{rng.uniform(), rng.uniform(), rng.uniform()};
    const Pose p2 = Pose::from_yaw_translation(0.3, {0.1, 0.0, -0.2});
    const Vec3 a = p.compose(p2).apply(x);
    const Vec3 b = p.apply(p2.apply(x));
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(a[k], b[k], 1e-12);
  }
}

TEST(Pose, RowMajorRoundTripAndValidation) {
  const Pose p = Pose::from_yaw_translation(0.4, {1, 2, 3});
  const Pose q = Pose::from_row_major(p.to_row_major());
  EXPECT_EQ(p.rotation, q.rotation);
  EXPECT_EQ(p.translation, q.translation);
  EXPECT_NO_THROW(p.validate());
  Pose bad = p;
  bad.rotation[0][0] = 2.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(DisparityToDepth, KnownValue) {
  EXPECT_NEAR(disparity_to_depth(0.5, 1.0, 100.0), 1.0 / 0.505, 1e-12);
  EXPECT_NEAR(disparity_to_depth(0.5, 1.0, 100.0), 1.9802, 1e-4);
  EXPECT_DOUBLE_EQ(disparity_to_depth(1.0, 1.0, 100.0), 1.0);
  EXPECT_DOUBLE_EQ(disparity_to_depth(0.0, 1.0, 100.0), 100.0);
}

TEST(DisparityToDepth, RoundTripAndDerivative) {
  Rng rng(5);
  DepthRaster disp(4, 5, DepthKind::kDisparity);
  for (double& v : disp.values) v = rng.uniform();
  const DepthRaster depth = disparity_to_depth(disp, 1.0, 60.0);
  const DepthRaster back = depth_to_disparity(depth, 1.0, 60.0);
  for (std::size_t i = 0; i < disp.values.size(); ++i) {
    EXPECT_NEAR(back.values[i], disp.values[i], 1e-12);
    const double h = 1e-6;
    const double numeric = (disparity_to_depth(disp.values[i] + h, 1.0, 60.0) -
                            disparity_to_depth(disp.values[i] - h, 1.0, 60.0)) / (2 * h);
    EXPECT_NEAR(depth_derivative(depth.values[i], 1.0, 60.0), numeric, 1e-5 * std::abs(numeric));
  }
  EXPECT_THROW(disparity_to_depth(depth, 1.0, 60.0), ConfigError);
  EXPECT_THROW(depth_to_disparity(depth, 2.0, 1.0), ConfigError);
}

TEST(BilinearSample, IntegerCoordsAreExactAndOutsideIsZero) {
  const ImageGrid img = random_image(4, 6, 2, 1);
  SampleCoords c{1, 3, {0.0, 5.0, 6.5}, {0.0, 3.0, 1.0}};
  const SampleResult r = bilinear_sample(img, c);
  EXPECT_TRUE(r.in_bounds[0]);
  EXPECT_TRUE(r.in_bounds[1]);
  EXPECT_FALSE(r.in_bounds[2]);
  for (int ch = 0; ch < 2; ++ch) {
    EXPECT_EQ(r.values.at(0, 0, ch), img.at(0, 0, ch));
    EXPECT_EQ(r.values.at(0, 1, ch), img.at(3, 5, ch));
    EXPECT_EQ(r.values.at(0, 2, ch), 0.0);
  }
}

TEST(BilinearSample, MidpointAveragesNeighbours) {
  const ImageGrid img = random_image(3, 3, 1, 2);
  SampleCoords c{1, 1, {0.5}, {1.5}};
  const SampleResult r = bilinear_sample(img, c);
  const double expect = 0.25 * (img.at(1, 0) + img.at(1, 1) + img.at(2, 0) + img.at(2, 1));
  EXPECT_NEAR(r.values.at(0, 0), expect, 1e-15);
}

TEST(BilinearSample, GradcheckCoordsAndImage) {
  const ImageGrid img = random_image(5, 7, 2, 9);
  Rng rng(11);
  SampleCoords c{2, 3, {}, {}};
  for (int i = 0; i < 6; ++i) {
    // Keep away from integer coordinates where the sampler has kinks.
    c.x.push_back(std::floor(rng.uniform(0, 5.9)) + rng.uniform(0.1, 0.9));
    c.y.push_back(std::floor(rng.uniform(0, 3.9)) + rng.uniform(0.1, 0.9));
  }
  ImageGrid up(2, 3, 2);
  for (double& v : up.values()) v = rng.uniform(-1, 1);
  const SampleResult fwd = bilinear_sample(img, c);
  const SampleGrads g = bilinear_sample_backward(img, c, fwd.in_bounds, up);

  auto loss = [&](const ImageGrid& im, const SampleCoords& cc) {
    const SampleResult r = bilinear_sample(im, cc);
    double s = 0.0;
    for (std::size_t i = 0; i < up.size(); ++i) s += up.values()[i] * r.values.values()[i];
    return s;
  };
  std::vector<double> xy(c.x);
  xy.insert(xy.end(), c.y.begin(), c.y.end());
  std::vector<double> analytic(g.dx);
  analytic.insert(analytic.end(), g.dy.begin(), g.dy.end());
  const auto rep_c = numgrid::gradcheck(
      [&](std::span<const double> v) {
        SampleCoords cc{2, 3, {v.begin(), v.begin() + 6}, {v.begin() + 6, v.end()}};
        return loss(img, cc);
      },
      xy, analytic);
  EXPECT_LT(rep_c.max_rel_err, 1e-6);

  const auto rep_i = numgrid::gradcheck(
      [&](std::span<const double> v) {
        ImageGrid im(5, 7, 2);
        std::copy(v.begin(), v.end(), im.values().begin());
        return loss(im, c);
      },
      img.values(), g.image.values());
  EXPECT_LT(rep_i.max_rel_err, 1e-6);
}

TEST(Warp, IdentityPoseReproducesSourceExactly) {
  const ImageGrid src = random_image(32, 64, 3, 4);
  DepthRaster depth(32, 64, DepthKind::kDepth);
  Rng rng(8);
  for (double& v : depth.values) v = rng.uniform(1.0, 60.0);
  const WarpResult w = warp(src, depth, Pose::identity(), Intrinsics{});
  EXPECT_EQ(w.valid.count(), 32u * 64u);
  EXPECT_EQ(w.warped, src);
}

TEST(Warp, LateralTranslationShiftsByFocalTimesBaselineOverDepth) {
  const Intrinsics K{};
  const double z = 8.0, tx = 0.5;
  const WarpResult w = warp(ramp_image(32, 64), constant_depth(32, 64, z),
                            Pose::from_yaw_translation(0.0, {tx, 0.0, 0.0}), K);
  const double shift = K.fx * tx / z;
  for (int v = 0; v < 32; ++v)
    for (int u = 0; u < 64; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * 64 + u;
      EXPECT_NEAR(w.coords.x[i], u + shift, 1e-12);
      EXPECT_NEAR(w.coords.y[i], v, 1e-12);
      EXPECT_EQ(w.valid[i], u + shift <= 63.0);
    }
}

TEST(Warp, ForwardMotionProjectsAlongRays) {
  // Closed form: a point at depth z seen after moving forward by d lands at
  // c + (u - c) * z / (z - d).
  const Intrinsics K{};
  const double z = 10.0, d = 1.0;
  const WarpResult w = warp(ramp_image(32, 64), constant_depth(32, 64, z),
                            Pose::from_yaw_translation(0.0, {0.0, 0.0, -d}), K);
  for (int u : {0, 10, 40, 63}) {
    const std::size_t i = static_cast<std::size_t>(5) * 64 + u;
    EXPECT_NEAR(w.coords.x[i], K.cx + (u - K.cx) * z / (z - d), 1e-12);
    EXPECT_NEAR(w.coords.y[i], K.cy + (5 - K.cy) * z / (z - d), 1e-12);
  }
}

TEST(Warp, OutOfViewPoseInvalidatesEverything) {
  const WarpResult w = warp(ramp_image(8, 8), constant_depth(8, 8, 5.0),
                            Pose::from_yaw_translation(0.0, {100.0, 0.0, 0.0}), Intrinsics{});
  EXPECT_EQ(w.valid.count(), 0u);
  for (double v : w.warped.values()) EXPECT_EQ(v, 0.0);
  const WarpResult behind = warp(ramp_image(8, 8), constant_depth(8, 8, 5.0),
                                 Pose::from_yaw_translation(0.0, {0.0, 0.0, -10.0}), Intrinsics{});
  EXPECT_EQ(behind.valid.count(), 0u);
}

TEST(Warp, InvalidDepthPixelsStayInvalid) {
  DepthRaster depth = constant_depth(4, 4, 3.0);
  depth.valid[5] = 0;
  const WarpResult w = warp(ramp_image(4, 4), depth, Pose::identity(), Intrinsics{4, 4, 1.5, 1.5});
  EXPECT_FALSE(w.valid[5]);
  EXPECT_EQ(w.valid.count(), 15u);
  DepthRaster disp(4, 4, DepthKind::kDisparity, 0.5);
  EXPECT_THROW(warp(ramp_image(4, 4), disp, Pose::identity(), Intrinsics{}), ConfigError);
}

TEST(Warp, DepthGradientMatchesFiniteDifferences) {
  const Intrinsics K{};
  const ImageGrid src = ramp_image(32, 64);
  Rng rng(21);
  DepthRaster depth(32, 64, DepthKind::kDepth);
  for (double& v : depth.values) v = rng.uniform(4.0, 20.0);
  const Pose pose = Pose::from_yaw_translation(0.02, {0.1, 0.0, -0.3});
  ImageGrid up(32, 64, 1);
  for (double& v : up.values()) v = rng.uniform(-1, 1);
  const WarpResult fwd = warp(src, depth, pose, K);
  const std::vector<double> dz = warp_backward_depth(src, fwd, up);
  // Each warped pixel depends only on its own depth, so the check runs pixel
  // by pixel; a loss summed over all pixels buries small gradients in
  // round-off.
  const double h = 1e-5;
  int checked = 0;
  for (std::size_t i = 0; i < depth.values.size(); i += 7) {
    if (!fwd.valid[i]) continue;
    auto local = [&](double z) {
      DepthRaster d = depth;
      d.values[i] = z;
      return up.values()[i] * warp(src, d, pose, K).warped.values()[i];
    };
    const double numeric = (local(depth.values[i] + h) - local(depth.values[i] - h)) / (2 * h);
    EXPECT_NEAR(dz[i], numeric, 1e-4 * std::max(std::abs(numeric), 1e-6)) << "pixel " << i;
    ++checked;
  }
  EXPECT_GT(checked, 200);
}
