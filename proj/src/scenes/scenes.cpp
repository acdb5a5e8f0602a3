#include "depthlab/scenes/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>

#include "depthlab/errors.hpp"
#include "depthlab/numgrid/blob.hpp"
#include "depthlab/numgrid/parallel.hpp"

namespace depthlab::scenes {
namespace {

using geometry::DepthKind;
using geometry::Vec3;
using numgrid::Rng;

constexpr double kNearClip = 0.05;
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kSidewalkWidth = 2.5;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Smooth texture in world units; identical from every viewpoint.
double texture(double a, double b, const std::array<double, 4>& phase, double amplitude,
               double wavelength) {
  const double k = kTwoPi / wavelength;
  return amplitude * (std::sin(k * a + phase[0]) * std::sin(k * b + phase[1]) +
                      0.5 * std::sin(0.6 * k * (a + b) + phase[2]) *
                          std::cos(0.8 * k * a + phase[3]));
}

std::array<double, 4> random_phase(Rng& rng) {
  return {rng.uniform(0, kTwoPi), rng.uniform(0, kTwoPi), rng.uniform(0, kTwoPi),
          rng.uniform(0, kTwoPi)};
}

double draw(Rng& rng, const Range& r) { return rng.uniform(r[0], r[1]); }

// Slab test. On a hit in front of the near clip, returns the entry distance
// along the ray and the axis of the entered face.
bool intersect_box(const Vec3& o, const Vec3& d, const Box& b, double& t_hit, int& axis) {
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  int enter_axis = -1;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(d[k]) < 1e-15) {
      if (o[k] < b.min[k] || o[k] > b.max[k]) return false;
      continue;
    }
    double t1 = (b.min[k] - o[k]) / d[k];
    double t2 = (b.max[k] - o[k]) / d[k];
    if (t1 > t2) std::swap(t1, t2);
    if (t1 > t_enter) {
      t_enter = t1;
      enter_axis = k;
    }
    t_exit = std::min(t_exit, t2);
  }
  if (enter_axis < 0 || t_enter > t_exit || t_enter < kNearClip) return false;
  t_hit = t_enter;
  axis = enter_axis;
  return true;
}

const char* placement_name(Placement p) {
  switch (p) {
    case Placement::kRoadside: return "roadside";
    case Placement::kOnRoad: return "on_road";
    case Placement::kSidewalk: return "sidewalk";
    case Placement::kCurb: return "curb";
  }
  return "roadside";
}

Placement placement_from_name(const std::string& s) {
  if (s == "roadside") return Placement::kRoadside;
  if (s == "on_road") return Placement::kOnRoad;
  if (s == "sidewalk") return Placement::kSidewalk;
  if (s == "curb") return Placement::kCurb;
  throw ConfigError("unknown placement '" + s + "'");
}

void require_range(const Range& r, const std::string& what, bool positive) {
  if (!std::isfinite(r[0]) || !std::isfinite(r[1]) || r[0] > r[1] || (positive && r[0] <= 0.0))
    throw ConfigError("invalid range for " + what);
}

std::string pad_index(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05d", i);
  return buf;
}

}  // namespace

void SceneSpec::validate() const {
  if (height <= 0 || width <= 0) throw ConfigError("scene size must be positive");
  intrinsics.validate();
  if (!(camera_height > 0.0)) throw ConfigError("camera_height must be positive");
  if (!(road_half_width > 0.0)) throw ConfigError("road_half_width must be positive");
  if (!(d_min > 0.0) || !(d_max > d_min)) throw ConfigError("need 0 < d_min < d_max");
  const int c = num_classes();
  if (c < 2 || c > numgrid::kIgnoreLabel) throw ConfigError("class count out of range");
  if (road_class < 0 || road_class >= c || sky_class < 0 || sky_class >= c ||
      road_class == sky_class)
    throw ConfigError("road/sky class ids invalid");
  std::set<int> seen{road_class, sky_class};
  for (const auto& o : objects) {
    if (o.class_id < 0 || o.class_id >= c) throw ConfigError("object class id out of range");
    if (!seen.insert(o.class_id).second) throw ConfigError("duplicate class id " + o.name);
    if (o.palette.empty()) throw ConfigError("empty palette for " + o.name);
    require_range(o.width, o.name + ".width", true);
    require_range(o.length, o.name + ".length", true);
    require_range(o.height, o.name + ".height", true);
    require_range(o.depth, o.name + ".depth", true);
    if (o.depth[1] + o.length[1] > d_max) throw ConfigError("depth range of " + o.name + " exceeds d_max");
  }
  if (static_cast<int>(seen.size()) != c) throw ConfigError("class ids must be dense 0..C-1");
  if (styles.empty()) throw ConfigError("at least one style required");
  for (const auto& s : styles) {
    if (!(s.weight > 0.0)) throw ConfigError("style weight must be positive");
    if (s.counts.size() != objects.size()) throw ConfigError("style " + s.name + " count list size");
    for (const auto& n : s.counts)
      if (n[0] < 0 || n[0] > n[1]) throw ConfigError("style " + s.name + " invalid count range");
  }
  if (!(texture_wavelength > 0.0) || texture_amplitude < 0.0)
    throw ConfigError("invalid texture parameters");
  if (supersample < 1 || supersample > 16) throw ConfigError("supersample must be in [1, 16]");
}

SceneSpec default_scene_spec(std::uint64_t seed) {
  SceneSpec s;
  s.seed = seed;
  s.class_names = {"road", "sky", "building", "car", "person", "pole"};
  s.objects = {
      {2, "building",
       {{0.76, 0.70, 0.58}, {0.55, 0.55, 0.56}, {0.62, 0.33, 0.25}, {0.45, 0.50, 0.60}},
       0.05, {4.0, 10.0}, {6.0, 16.0}, {5.0, 14.0}, {6.0, 40.0}, Placement::kRoadside},
      {3, "car",
       {{0.75, 0.15, 0.15}, {0.15, 0.25, 0.70}, {0.85, 0.85, 0.85}, {0.12, 0.12, 0.14},
        {0.50, 0.50, 0.52}},
       0.04, {1.7, 2.0}, {3.8, 4.6}, {1.3, 1.6}, {5.0, 30.0}, Placement::kOnRoad},
      {4, "person",
       {{0.20, 0.30, 0.60}, {0.60, 0.20, 0.30}, {0.30, 0.50, 0.30}, {0.15, 0.15, 0.15},
        {0.80, 0.70, 0.50}},
       0.05, {0.5, 0.7}, {0.4, 0.5}, {1.6, 1.9}, {4.0, 16.0}, Placement::kSidewalk},
      {5, "pole", {{0.40, 0.40, 0.42}, {0.25, 0.30, 0.25}}, 0.03, {0.3, 0.4}, {0.3, 0.4},
       {4.0, 6.0}, {4.0, 22.0}, Placement::kCurb},
  };
  //                name            weight illumination        sky                  road
  s.styles = {
      {"boulevard", 0.55, {1.00, 1.00, 1.00}, {0.62, 0.75, 0.92}, {0.30, 0.30, 0.32},
       {{2, 4}, {1, 3}, {0, 2}, {1, 2}}},
      {"downtown", 0.25, {0.95, 0.95, 1.00}, {0.70, 0.72, 0.78}, {0.28, 0.28, 0.30},
       {{5, 8}, {2, 4}, {2, 4}, {0, 2}}},
      {"dusk", 0.12, {0.80, 0.62, 0.50}, {0.85, 0.55, 0.40}, {0.26, 0.24, 0.24},
       {{1, 3}, {0, 2}, {0, 1}, {2, 4}}},
      {"plaza", 0.08, {1.05, 1.05, 1.05}, {0.70, 0.70, 0.72}, {0.42, 0.40, 0.38},
       {{2, 4}, {0, 0}, {4, 8}, {1, 3}}},
  };
  return s;
}

nlohmann::json to_json(const SceneSpec& spec) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& o : spec.objects) {
    objects.push_back({{"class_id", o.class_id},
                       {"name", o.name},
                       {"palette", o.palette},
                       {"color_jitter", o.color_jitter},
                       {"width", o.width},
                       {"length", o.length},
                       {"height", o.height},
                       {"depth", o.depth},
                       {"placement", placement_name(o.placement)}});
  }
  nlohmann::json styles = nlohmann::json::array();
  for (const auto& s : spec.styles) {
    styles.push_back({{"name", s.name},
                      {"weight", s.weight},
                      {"illumination", s.illumination},
                      {"sky_color", s.sky_color},
                      {"road_color", s.road_color},
                      {"counts", s.counts}});
  }
  return {{"seed", spec.seed},
          {"height", spec.height},
          {"width", spec.width},
          {"intrinsics", geometry::to_json(spec.intrinsics)},
          {"camera_height", spec.camera_height},
          {"road_half_width", spec.road_half_width},
          {"d_min", spec.d_min},
          {"d_max", spec.d_max},
          {"road_class", spec.road_class},
          {"sky_class", spec.sky_class},
          {"class_names", spec.class_names},
          {"objects", objects},
          {"styles", styles},
          {"texture_amplitude", spec.texture_amplitude},
          {"texture_wavelength", spec.texture_wavelength},
          {"supersample", spec.supersample}};
}

SceneSpec scene_spec_from_json(const nlohmann::json& j) {
  SceneSpec d = default_scene_spec(j.value("seed", std::uint64_t{1}));
  try {
    d.height = j.value("height", d.height);
    d.width = j.value("width", d.width);
    if (j.contains("intrinsics")) d.intrinsics = geometry::intrinsics_from_json(j.at("intrinsics"));
    d.camera_height = j.value("camera_height", d.camera_height);
    d.road_half_width = j.value("road_half_width", d.road_half_width);
    d.d_min = j.value("d_min", d.d_min);
    d.d_max = j.value("d_max", d.d_max);
    d.road_class = j.value("road_class", d.road_class);
    d.sky_class = j.value("sky_class", d.sky_class);
    if (j.contains("class_names")) d.class_names = j.at("class_names").get<std::vector<std::string>>();
    if (j.contains("objects")) {
      d.objects.clear();
      for (const auto& o : j.at("objects")) {
        ObjectClass c;
        c.class_id = o.at("class_id").get<int>();
        c.name = o.at("name").get<std::string>();
        c.palette = o.at("palette").get<std::vector<Color>>();
        c.color_jitter = o.value("color_jitter", c.color_jitter);
        c.width = o.at("width").get<Range>();
        c.length = o.at("length").get<Range>();
        c.height = o.at("height").get<Range>();
        c.depth = o.at("depth").get<Range>();
        c.placement = placement_from_name(o.value("placement", std::string("roadside")));
        d.objects.push_back(std::move(c));
      }
    }
    if (j.contains("styles")) {
      d.styles.clear();
      for (const auto& s : j.at("styles")) {
        SceneStyle st;
        st.name = s.at("name").get<std::string>();
        st.weight = s.value("weight", 1.0);
        st.illumination = s.value("illumination", st.illumination);
        st.sky_color = s.value("sky_color", st.sky_color);
        st.road_color = s.value("road_color", st.road_color);
        st.counts = s.at("counts").get<std::vector<std::array<int, 2>>>();
        d.styles.push_back(std::move(st));
      }
    }
    d.texture_amplitude = j.value("texture_amplitude", d.texture_amplitude);
    d.texture_wavelength = j.value("texture_wavelength", d.texture_wavelength);
    d.supersample = j.value("supersample", d.supersample);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scene spec: ") + e.what());
  }
  d.validate();
  return d;
}

SceneLayout sample_layout(const SceneSpec& spec, Rng rng) {
  SceneLayout layout;
  double total = 0.0;
  for (const auto& s : spec.styles) total += s.weight;
  double u = rng.uniform() * total;
  layout.style = static_cast<int>(spec.styles.size()) - 1;
  for (std::size_t i = 0; i < spec.styles.size(); ++i) {
    if (u < spec.styles[i].weight) {
      layout.style = static_cast<int>(i);
      break;
    }
    u -= spec.styles[i].weight;
  }
  const SceneStyle& style = spec.styles[static_cast<std::size_t>(layout.style)];
  const double light = rng.uniform(0.92, 1.08);
  for (int c = 0; c < 3; ++c) {
    layout.illumination[static_cast<std::size_t>(c)] = style.illumination[static_cast<std::size_t>(c)] * light;
    layout.sky_color[static_cast<std::size_t>(c)] = clamp01(style.sky_color[static_cast<std::size_t>(c)] + rng.uniform(-0.03, 0.03));
    layout.road_color[static_cast<std::size_t>(c)] = style.road_color[static_cast<std::size_t>(c)];
  }
  layout.road_phase = random_phase(rng);

  const double h = spec.camera_height;
  const double rw = spec.road_half_width;
  int instance = 0;
  for (std::size_t k = 0; k < spec.objects.size(); ++k) {
    const ObjectClass& oc = spec.objects[k];
    const int n = rng.uniform_int(style.counts[k][0], style.counts[k][1]);
    for (int i = 0; i < n; ++i) {
      Box b;
      b.class_id = oc.class_id;
      b.instance = instance++;
      const double w = draw(rng, oc.width);
      const double len = draw(rng, oc.length);
      const double ht = draw(rng, oc.height);
      const double z0 = draw(rng, oc.depth);
      const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
      double xc = 0.0;
      switch (oc.placement) {
        case Placement::kRoadside: {
          const double edge = rw + kSidewalkWidth + rng.uniform(0.0, 2.0);
          xc = side * (edge + 0.5 * w);
          break;
        }
        case Placement::kOnRoad: xc = rng.uniform(-rw + 0.5 * w + 0.2, rw - 0.5 * w - 0.2); break;
        case Placement::kSidewalk: xc = side * (rw + rng.uniform(0.3, kSidewalkWidth - 0.3)); break;
        case Placement::kCurb: xc = side * (rw + 0.2 + 0.5 * w); break;
      }
      b.min = {xc - 0.5 * w, h - ht, z0};
      b.max = {xc + 0.5 * w, h, z0 + len};
      const Color& base = oc.palette[rng.below(oc.palette.size())];
      for (int c = 0; c < 3; ++c)
        b.color[static_cast<std::size_t>(c)] =
            clamp01(base[static_cast<std::size_t>(c)] + rng.uniform(-oc.color_jitter, oc.color_jitter));
      b.texture_phase = random_phase(rng);
      layout.boxes.push_back(b);
    }
  }
  return layout;
}

SceneLayout scene_layout(const SceneSpec& spec, int index) {
  return sample_layout(spec, Rng(spec.seed).split("scene").split(static_cast<std::uint64_t>(index)));
}

SceneLayout sequence_layout(const SceneSpec& spec, int index) {
  return sample_layout(spec, Rng(spec.seed).split("sequence").split(static_cast<std::uint64_t>(index)));
}

namespace {

struct RayHit {
  double depth = 0.0;
  int label = 0;
  int instance = 0;
  int face = -1;
  Color color{};
};

// Ray through image point (u, v) of a camera at camera_to_world. The ray
// parameter equals camera-frame depth because the camera-frame direction has
// unit z.
RayHit trace(const SceneSpec& spec, const SceneLayout& layout, const Pose& camera_to_world,
             double u, double v) {
  static constexpr double kFaceShade[3] = {0.85, 1.05, 1.00};
  const auto& K = spec.intrinsics;
  const auto& R = camera_to_world.rotation;
  const Vec3& o = camera_to_world.translation;
  const Vec3 dc{(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0};
  Vec3 d{};
  for (std::size_t r = 0; r < 3; ++r) d[r] = R[r][0] * dc[0] + R[r][1] * dc[1] + R[r][2] * dc[2];

  double best = std::numeric_limits<double>::infinity();
  int hit_box = -1;
  int hit_axis = -1;
  for (std::size_t b = 0; b < layout.boxes.size(); ++b) {
    double t = 0.0;
    int axis = -1;
    if (intersect_box(o, d, layout.boxes[b], t, axis) && t < best) {
      best = t;
      hit_box = static_cast<int>(b);
      hit_axis = axis;
    }
  }
  bool ground = false;
  if (d[1] > 1e-12) {
    const double t = (spec.camera_height - o[1]) / d[1];
    if (t >= kNearClip && t < best) {
      best = t;
      ground = true;
    }
  }

  RayHit hit;
  if (!(best < spec.d_max)) {
    hit.depth = spec.d_max;
    hit.label = spec.sky_class;
    hit.instance = -2;
    for (std::size_t c = 0; c < 3; ++c)
      hit.color[c] = clamp01(layout.sky_color[c] * std::min(1.0, layout.illumination[c]));
    return hit;
  }
  const Vec3 p{o[0] + best * d[0], o[1] + best * d[1], o[2] + best * d[2]};
  hit.depth = best;
  if (ground) {
    hit.label = spec.road_class;
    hit.instance = -1;
    const double tex = texture(p[0], p[2], layout.road_phase, spec.texture_amplitude,
                               spec.texture_wavelength);
    for (std::size_t c = 0; c < 3; ++c)
      hit.color[c] = clamp01(layout.road_color[c] * layout.illumination[c] + tex);
    return hit;
  }
  const Box& b = layout.boxes[static_cast<std::size_t>(hit_box)];
  hit.label = b.class_id;
  hit.instance = hit_box;
  hit.face = hit_axis;
  // Texture coordinates lie in the plane of the entered face.
  const double a1 = hit_axis == 0 ? p[2] : p[0];
  const double a2 = hit_axis == 1 ? p[2] : p[1];
  const double tex = texture(a1, a2, b.texture_phase, spec.texture_amplitude, spec.texture_wavelength);
  for (std::size_t c = 0; c < 3; ++c)
    hit.color[c] = clamp01(b.color[c] * kFaceShade[hit_axis] * layout.illumination[c] + tex);
  return hit;
}

}  // namespace

RenderBuffers render(const SceneSpec& spec, const SceneLayout& layout, const Pose& camera_to_world) {
  const int H = spec.height;
  const int W = spec.width;
  const int ss = spec.supersample;
  RenderBuffers out{ImageGrid(H, W, 3), DepthRaster(H, W, DepthKind::kDepth), LabelRaster(H, W),
                    LabelRaster(H, W), LabelRaster(H, W)};
  std::fill(out.depth.valid.begin(), out.depth.valid.end(), std::uint8_t{1});
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      const RayHit centre = trace(spec, layout, camera_to_world, u, v);
      out.depth.at(v, u) = centre.depth;
      out.labels.at(v, u) = centre.label;
      out.instances.at(v, u) = centre.instance;
      out.faces.at(v, u) = centre.face;
      double* px = out.image.pixel(v, u);
      if (ss <= 1) {
        for (int c = 0; c < 3; ++c) px[c] = centre.color[static_cast<std::size_t>(c)];
        continue;
      }
      // Colour is the pixel-area average over an ss x ss grid of rays.
      for (int j = 0; j < ss; ++j)
        for (int i = 0; i < ss; ++i) {
          const RayHit h = trace(spec, layout, camera_to_world, u - 0.5 + (i + 0.5) / ss,
                                 v - 0.5 + (j + 0.5) / ss);
          for (int c = 0; c < 3; ++c) px[c] += h.color[static_cast<std::size_t>(c)];
        }
      for (int c = 0; c < 3; ++c) px[c] /= ss * ss;
    }
  }
  return out;
}

Sample generate_scene(const SceneSpec& spec, int index) {
  spec.validate();
  RenderBuffers rb = render(spec, scene_layout(spec, index));
  return {"scene_" + pad_index(index), std::move(rb.image), std::move(rb.depth), std::move(rb.labels)};
}

Pose Sequence::relative_pose(int target, int source) const {
  const int n = static_cast<int>(frames.size());
  if (target < 0 || target >= n || source < 0 || source >= n)
    throw ConfigError("frame index out of range");
  Pose p = Pose::identity();
  if (source >= target) {
    for (int t = target; t < source; ++t) p = poses[static_cast<std::size_t>(t)].compose(p);
  } else {
    for (int t = source; t < target; ++t) p = poses[static_cast<std::size_t>(t)].compose(p);
    p = p.inverse();
  }
  return p;
}

std::vector<Pose> sequence_cameras(const SceneSpec& spec, int index, const Motion& motion,
                                   int n_frames) {
  if (n_frames < 1) throw ConfigError("sequence needs at least 1 frame");
  if (!std::isfinite(motion.forward_speed) || !(motion.yaw_jitter >= 0.0) ||
      !(motion.lateral_jitter >= 0.0))
    throw ConfigError("invalid motion");
  Rng rng = Rng(spec.seed).split("motion").split(static_cast<std::uint64_t>(index));
  std::vector<Pose> c2w{Pose::identity()};
  double yaw = 0.0;
  Vec3 pos{0.0, 0.0, 0.0};
  for (int t = 1; t < n_frames; ++t) {
    if (motion.yaw_jitter > 0.0) yaw += rng.uniform(-motion.yaw_jitter, motion.yaw_jitter);
    const double lateral =
        motion.lateral_jitter > 0.0 ? rng.uniform(-motion.lateral_jitter, motion.lateral_jitter) : 0.0;
    pos[0] += motion.forward_speed * std::sin(yaw) + lateral * std::cos(yaw);
    pos[2] += motion.forward_speed * std::cos(yaw) - lateral * std::sin(yaw);
    c2w.push_back(Pose::from_yaw_translation(yaw, pos));
  }
  return c2w;
}

Sequence generate_sequence(const SceneSpec& spec, int index, const Motion& motion, int n_frames) {
  spec.validate();
  if (n_frames < 2) throw ConfigError("sequence needs at least 2 frames");
  const SceneLayout layout = sequence_layout(spec, index);
  const std::vector<Pose> c2w = sequence_cameras(spec, index, motion, n_frames);
  Sequence seq;
  seq.id = "seq_" + pad_index(index);
  for (int t = 0; t < n_frames; ++t) {
    RenderBuffers rb = render(spec, layout, c2w[static_cast<std::size_t>(t)]);
    seq.frames.push_back({seq.id + "_f" + std::to_string(t), std::move(rb.image),
                          std::move(rb.depth), std::move(rb.labels)});
  }
  for (int t = 0; t + 1 < n_frames; ++t)
    seq.poses.push_back(c2w[static_cast<std::size_t>(t + 1)].inverse().compose(c2w[static_cast<std::size_t>(t)]));
  return seq;
}

numgrid::Mask covisible_mask(const RenderBuffers& target, const RenderBuffers& source,
                    const geometry::WarpResult& w) {
  const int H = target.labels.height();
  const int W = target.labels.width();
  numgrid::Mask m(H, W);
  if (W < 2 || H < 2) return m;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!w.valid.at(y, x)) continue;
      const std::size_t i = static_cast<std::size_t>(y) * W + x;
      const int x0 = std::min(static_cast<int>(std::floor(w.coords.x[i])), W - 2);
      const int y0 = std::min(static_cast<int>(std::floor(w.coords.y[i])), H - 2);
      bool same = true;
      for (int dy = 0; dy < 2 && same; ++dy)
        for (int dx = 0; dx < 2 && same; ++dx)
          same = source.instances.at(y0 + dy, x0 + dx) == target.instances.at(y, x) &&
                 source.faces.at(y0 + dy, x0 + dx) == target.faces.at(y, x);
      m.set(y, x, same);
    }
  return m;
}

nlohmann::json to_json(const DatasetConfig& c) {
  return {{"n_train", c.n_train},
          {"n_val", c.n_val},
          {"n_sequences", c.n_sequences},
          {"frames_per_sequence", c.frames_per_sequence},
          {"motion",
           {{"forward_speed", c.motion.forward_speed},
            {"yaw_jitter", c.motion.yaw_jitter},
            {"lateral_jitter", c.motion.lateral_jitter}}}};
}

DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  DatasetConfig c;
  try {
    c.n_train = j.value("n_train", c.n_train);
    c.n_val = j.value("n_val", c.n_val);
    c.n_sequences = j.value("n_sequences", c.n_sequences);
    c.frames_per_sequence = j.value("frames_per_sequence", c.frames_per_sequence);
    if (j.contains("motion")) {
      const auto& m = j.at("motion");
      c.motion.forward_speed = m.value("forward_speed", c.motion.forward_speed);
      c.motion.yaw_jitter = m.value("yaw_jitter", c.motion.yaw_jitter);
      c.motion.lateral_jitter = m.value("lateral_jitter", c.motion.lateral_jitter);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("dataset config: ") + e.what());
  }
  if (c.n_train < 1 || c.n_val < 0 || c.n_sequences < 0) throw ConfigError("dataset sizes invalid");
  if (c.n_sequences > 0 && c.frames_per_sequence < 2)
    throw ConfigError("frames_per_sequence must be >= 2");
  return c;
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& s : samples) {
    if (!ids.insert(s.id).second) throw ConfigError("duplicate sample id " + s.id);
    if (s.split != "train" && s.split != "val") throw ConfigError("unknown split " + s.split);
  }
  for (const auto& q : sequences) {
    if (!ids.insert(q.id).second) throw ConfigError("duplicate sequence id " + q.id);
    if (q.frame_blobs.size() < 2 || q.poses.size() + 1 != q.frame_blobs.size())
      throw ConfigError("sequence " + q.id + " frame/pose count mismatch");
  }
}

nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : m.samples) {
    samples.push_back({{"id", s.id},
                       {"split", s.split},
                       {"index", s.index},
                       {"blob", s.blob},
                       {"image_ppm", s.image_ppm},
                       {"labels_pgm", s.labels_pgm},
                       {"depth_pgm", s.depth_pgm}});
  }
  nlohmann::json seqs = nlohmann::json::array();
  for (const auto& q : m.sequences) {
    nlohmann::json poses = nlohmann::json::array();
    for (const auto& p : q.poses) poses.push_back(p.to_row_major());
    seqs.push_back({{"id", q.id}, {"index", q.index}, {"frames", q.frame_blobs}, {"poses", poses}});
  }
  return {{"schema_version", m.schema_version},
          {"seed", m.seed},
          {"spec", m.spec},
          {"config", m.config},
          {"samples", samples},
          {"sequences", seqs}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != 1)
      throw ConfigError("unsupported manifest schema_version " + std::to_string(m.schema_version));
    m.seed = j.at("seed").get<std::uint64_t>();
    m.spec = j.at("spec");
    m.config = j.at("config");
    for (const auto& s : j.at("samples")) {
      m.samples.push_back({s.at("id").get<std::string>(), s.at("split").get<std::string>(),
                           s.at("index").get<int>(), s.at("blob").get<std::string>(),
                           s.value("image_ppm", std::string()), s.value("labels_pgm", std::string()),
                           s.value("depth_pgm", std::string())});
    }
    for (const auto& q : j.at("sequences")) {
      SequenceRecord r;
      r.id = q.at("id").get<std::string>();
      r.index = q.at("index").get<int>();
      r.frame_blobs = q.at("frames").get<std::vector<std::string>>();
      for (const auto& p : q.at("poses")) r.poses.push_back(Pose::from_row_major(p.get<std::array<double, 12>>()));
      m.sequences.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

void save_sample_blob(const std::filesystem::path& path, const Sample& s) {
  numgrid::Blob blob;
  blob.meta = {{"format", "depthlab-sample"}, {"id", s.id}, {"height", s.image.height()},
               {"width", s.image.width()}};
  blob.arrays.push_back({"image", {s.image.height(), s.image.width(), s.image.channels()},
                         s.image.storage()});
  blob.arrays.push_back({"depth", {s.depth.height, s.depth.width}, s.depth.values});
  std::vector<double> valid(s.depth.valid.begin(), s.depth.valid.end());
  blob.arrays.push_back({"depth_valid", {s.depth.height, s.depth.width}, std::move(valid)});
  std::vector<double> labels(s.labels.values().begin(), s.labels.values().end());
  blob.arrays.push_back({"labels", {s.labels.height(), s.labels.width()}, std::move(labels)});
  numgrid::write_blob(path, blob);
}

Sample load_sample_blob(const std::filesystem::path& path) {
  const numgrid::Blob blob = numgrid::read_blob(path);
  if (blob.meta.value("format", std::string()) != "depthlab-sample")
    throw IoError("not a sample blob: " + path.string());
  Sample s;
  s.id = blob.meta.at("id").get<std::string>();
  const auto& img = blob.array("image");
  if (img.shape.size() != 3) throw IoError("bad image shape in " + path.string());
  s.image = ImageGrid(img.shape[0], img.shape[1], img.shape[2]);
  s.image.storage() = img.values;
  const auto& dep = blob.array("depth");
  s.depth = DepthRaster(dep.shape[0], dep.shape[1], DepthKind::kDepth);
  s.depth.values = dep.values;
  const auto& val = blob.array("depth_valid");
  for (std::size_t i = 0; i < val.values.size(); ++i) s.depth.valid[i] = val.values[i] != 0.0 ? 1 : 0;
  const auto& lab = blob.array("labels");
  s.labels = LabelRaster(lab.shape[0], lab.shape[1]);
  for (std::size_t i = 0; i < lab.values.size(); ++i) s.labels.values()[i] = static_cast<int>(lab.values[i]);
  return s;
}

void write_ppm(const std::filesystem::path& path, const ImageGrid& rgb) {
  if (rgb.channels() != 3) throw ConfigError("write_ppm needs 3 channels");
  std::string bytes = "P6\n" + std::to_string(rgb.width()) + " " + std::to_string(rgb.height()) + "\n255\n";
  for (double v : rgb.values())
    bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(clamp01(v) * 255.0))));
  numgrid::write_file(path, bytes);
}

void write_pgm16(const std::filesystem::path& path, int height, int width,
                 const std::vector<std::uint16_t>& values) {
  if (values.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width))
    throw ConfigError("write_pgm16 size mismatch");
  std::string bytes = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n65535\n";
  for (std::uint16_t v : values) {  // big-endian per the netpbm format
    bytes.push_back(static_cast<char>(v >> 8));
    bytes.push_back(static_cast<char>(v & 0xff));
  }
  numgrid::write_file(path, bytes);
}

ImageGrid colorize_labels(const LabelRaster& labels, int num_classes) {
  static constexpr double kPalette[][3] = {{0.50, 0.25, 0.50}, {0.27, 0.51, 0.71}, {0.27, 0.27, 0.27},
                                           {0.00, 0.00, 0.56}, {0.86, 0.08, 0.24}, {0.60, 0.60, 0.60},
                                           {0.42, 0.56, 0.14}, {0.98, 0.67, 0.12}};
  constexpr int kN = static_cast<int>(sizeof kPalette / sizeof kPalette[0]);
  ImageGrid out(labels.height(), labels.width(), 3);
  for (int y = 0; y < labels.height(); ++y)
    for (int x = 0; x < labels.width(); ++x) {
      const int l = labels.at(y, x);
      if (l < 0 || l >= num_classes) continue;  // ignore label stays black
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = kPalette[l % kN][c];
    }
  return out;
}

namespace {

void write_sample_files(const std::filesystem::path& dir, const Sample& s, const SceneSpec& spec,
                        SampleRecord& rec) {
  rec.blob = "blobs/" + s.id + ".blob";
  rec.image_ppm = "images/" + s.id + ".ppm";
  rec.labels_pgm = "labels/" + s.id + ".pgm";
  rec.depth_pgm = "depth/" + s.id + ".pgm";
  save_sample_blob(dir / rec.blob, s);
  write_ppm(dir / rec.image_ppm, s.image);
  std::vector<std::uint16_t> labels, depth_mm;
  for (int l : s.labels.values()) labels.push_back(static_cast<std::uint16_t>(l));
  for (double d : s.depth.values)
    depth_mm.push_back(static_cast<std::uint16_t>(std::lround(std::clamp(d, 0.0, spec.d_max) * 1000.0)));
  write_pgm16(dir / rec.labels_pgm, s.labels.height(), s.labels.width(), labels);
  write_pgm16(dir / rec.depth_pgm, s.depth.height, s.depth.width, depth_mm);
}

}  // namespace

DatasetManifest build_dataset(const SceneSpec& spec, const DatasetConfig& config,
                              const std::filesystem::path& dir) {
  spec.validate();
  if (config.n_train < 1) throw ConfigError("n_train must be >= 1");
  std::error_code ec;
  for (const char* sub : {"blobs", "images", "labels", "depth"}) {
    std::filesystem::create_directories(dir / sub, ec);
    if (ec) throw IoError("cannot create " + (dir / sub).string() + ": " + ec.message());
  }

  DatasetManifest m;
  m.seed = spec.seed;
  m.spec = to_json(spec);
  m.config = to_json(config);
  const int n = config.n_train + config.n_val;
  m.samples.resize(static_cast<std::size_t>(n));
  numgrid::parallel_for(n, [&](int i) {
    const Sample s = generate_scene(spec, i);
    SampleRecord& rec = m.samples[static_cast<std::size_t>(i)];
    rec.id = s.id;
    rec.split = i < config.n_train ? "train" : "val";
    rec.index = i;
    write_sample_files(dir, s, spec, rec);
  });
  m.sequences.resize(static_cast<std::size_t>(config.n_sequences));
  numgrid::parallel_for(config.n_sequences, [&](int i) {
    const Sequence q = generate_sequence(spec, i, config.motion, config.frames_per_sequence);
    SequenceRecord& rec = m.sequences[static_cast<std::size_t>(i)];
    rec.id = q.id;
    rec.index = i;
    rec.poses = q.poses;
    for (const auto& f : q.frames) {
      const std::string rel = "blobs/" + f.id + ".blob";
      save_sample_blob(dir / rel, f);
      rec.frame_blobs.push_back(rel);
    }
  });
  m.validate();
  numgrid::write_file(dir / "manifest.json", to_json(m).dump(2) + "\n");
  return m;
}

std::uint64_t manifest_hash(const std::filesystem::path& manifest_path) {
  const std::string bytes = numgrid::read_file(manifest_path);
  return numgrid::fnv1a(bytes.data(), bytes.size());
}

std::uint64_t dataset_hash(const std::filesystem::path& dir) {
  const std::string mbytes = numgrid::read_file(dir / "manifest.json");
  std::uint64_t h = numgrid::fnv1a(mbytes.data(), mbytes.size());
  const DatasetManifest m = manifest_from_json(nlohmann::json::parse(mbytes));
  auto fold = [&](const std::string& rel) {
    if (rel.empty()) return;
    const std::string b = numgrid::read_file(dir / rel);
    h = numgrid::fnv1a(b.data(), b.size(), h);
  };
  for (const auto& s : m.samples) {
    fold(s.blob);
    fold(s.image_ppm);
    fold(s.labels_pgm);
    fold(s.depth_pgm);
  }
  for (const auto& q : m.sequences)
    for (const auto& f : q.frame_blobs) fold(f);
  return h;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(numgrid::read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("manifest.json: " + std::string(e.what()));
  }
  const DatasetManifest m = manifest_from_json(j);
  Dataset d;
  d.spec = scene_spec_from_json(m.spec);
  for (const auto& s : m.samples) {
    Sample smp = load_sample_blob(dir / s.blob);
    (s.split == "train" ? d.train : d.val).push_back(std::move(smp));
  }
  for (const auto& q : m.sequences) {
    Sequence seq;
    seq.id = q.id;
    seq.poses = q.poses;
    for (const auto& f : q.frame_blobs) seq.frames.push_back(load_sample_blob(dir / f));
    d.sequences.push_back(std::move(seq));
  }
  return d;
}

Dataset generate_dataset(const SceneSpec& spec, const DatasetConfig& config) {
  spec.validate();
  Dataset d;
  d.spec = spec;
  const int n = config.n_train + config.n_val;
  std::vector<Sample> all(static_cast<std::size_t>(n));
  numgrid::parallel_for(n, [&](int i) { all[static_cast<std::size_t>(i)] = generate_scene(spec, i); });
  for (int i = 0; i < n; ++i)
    (i < config.n_train ? d.train : d.val).push_back(std::move(all[static_cast<std::size_t>(i)]));
  d.sequences.resize(static_cast<std::size_t>(config.n_sequences));
  numgrid::parallel_for(config.n_sequences, [&](int i) {
    d.sequences[static_cast<std::size_t>(i)] =
        generate_sequence(spec, i, config.motion, config.frames_per_sequence);
  });
  return d;
}

}  // namespace depthlab::scenes
