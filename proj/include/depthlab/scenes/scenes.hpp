#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "depthlab/geometry/camera.hpp"
#include "depthlab/numgrid/image_grid.hpp"
#include "depthlab/numgrid/rng.hpp"

namespace depthlab::scenes {

using geometry::DepthRaster;
using geometry::Intrinsics;
using geometry::Pose;
using numgrid::ImageGrid;
using numgrid::LabelRaster;

using Color = std::array<double, 3>;
using Range = std::array<double, 2>;

enum class Placement { kRoadside, kOnRoad, kSidewalk, kCurb };

// An object class rendered as axis-aligned boxes standing on the ground.
struct ObjectClass {
  int class_id = 0;
  std::string name;
  std::vector<Color> palette;  // per-object base colour is drawn from here
  double color_jitter = 0.05;
  Range width{1.0, 1.0};  // extent along X
  Range length{1.0, 1.0};  // extent along Z (the placement depth extent)
  Range height{1.0, 1.0};
  Range depth{5.0, 40.0};  // Z of the near face
  Placement placement = Placement::kRoadside;
};

// A scene style: relative frequency, illumination and object counts.
struct SceneStyle {
  std::string name;
  double weight = 1.0;
  Color illumination{1.0, 1.0, 1.0};
  Color sky_color{0.62, 0.75, 0.92};
  Color road_color{0.30, 0.30, 0.32};
  // Inclusive count range per entry of SceneSpec::objects.
  std::vector<std::array<int, 2>> counts;
};

struct SceneSpec {
  std::uint64_t seed = 1;
  int height = 32;
  int width = 64;
  Intrinsics intrinsics{};
  double camera_height = 1.5;  // ground plane is Y = camera_height (Y down)
  double road_half_width = 4.0;
  double d_min = 1.0;  // normalisation range for disparity
  double d_max = 60.0;  // sky depth and far clip
  int road_class = 0;
  int sky_class = 1;
  std::vector<std::string> class_names;
  std::vector<ObjectClass> objects;
  std::vector<SceneStyle> styles;
  double texture_amplitude = 0.04;
  double texture_wavelength = 10.0;
  int supersample = 1;  // colour rays per pixel side; depth and labels use the centre ray

  int num_classes() const { return static_cast<int>(class_names.size()); }
  void validate() const;
};

// Street scene with road, sky, building, car, person and pole at 64x32.
SceneSpec default_scene_spec(std::uint64_t seed = 1);

nlohmann::json to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const nlohmann::json& j);

struct Box {
  int class_id = 0;
  int instance = 0;
  std::array<double, 3> min{};
  std::array<double, 3> max{};
  Color color{};
  std::array<double, 4> texture_phase{};
};

struct SceneLayout {
  int style = 0;
  Color illumination{};
  Color sky_color{};
  Color road_color{};
  std::array<double, 4> road_phase{};
  std::vector<Box> boxes;
};

// Object placement for a scene; `stream` separates single images from sequences.
SceneLayout sample_layout(const SceneSpec& spec, numgrid::Rng rng);
SceneLayout scene_layout(const SceneSpec& spec, int index);
SceneLayout sequence_layout(const SceneSpec& spec, int index);

struct RenderBuffers {
  ImageGrid image;
  DepthRaster depth;
  LabelRaster labels;
  LabelRaster instances;  // -1 ground, -2 sky, else box index
  LabelRaster faces;  // axis of the box face hit, -1 for ground and sky
};

// camera_to_world maps camera coordinates into the layout's world frame.
RenderBuffers render(const SceneSpec& spec, const SceneLayout& layout,
                     const Pose& camera_to_world = Pose::identity());

struct Sample {
  std::string id;
  ImageGrid image;
  DepthRaster depth;
  LabelRaster labels;
};

Sample generate_scene(const SceneSpec& spec, int index);

struct Motion {
  double forward_speed = 0.3;  // scene units per frame
  double yaw_jitter = 0.0;  // radians, uniform +- per frame
  double lateral_jitter = 0.0;  // scene units, uniform +- per frame
};

struct Sequence {
  std::string id;
  std::vector<Sample> frames;
  // poses[t] maps frame-t camera coordinates to frame-(t+1) camera coordinates,
  // i.e. the target-to-source pose for target t and source t+1.
  std::vector<Pose> poses;

  // Target-to-source pose between any two frames.
  Pose relative_pose(int target, int source) const;
};

// Camera-to-world pose of every frame; frame 0 is the world frame.
std::vector<Pose> sequence_cameras(const SceneSpec& spec, int index, const Motion& motion,
                                   int n_frames);

Sequence generate_sequence(const SceneSpec& spec, int index, const Motion& motion, int n_frames);

// Warp-valid target pixels whose four bilinear source neighbours show the
// same surface (instance and face) as the target pixel, i.e. pixels not
// affected by occlusion or by interpolation across a depth edge.
numgrid::Mask covisible_mask(const RenderBuffers& target, const RenderBuffers& source,
                             const geometry::WarpResult& w);

struct DatasetConfig {
  int n_train = 200;
  int n_val = 100;
  int n_sequences = 60;
  int frames_per_sequence = 3;
  Motion motion{};
};

nlohmann::json to_json(const DatasetConfig& c);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

struct SampleRecord {
  std::string id;
  std::string split;  // "train" or "val"
  int index = 0;
  std::string blob;  // exact float64 rasters
  std::string image_ppm;
  std::string labels_pgm;
  std::string depth_pgm;
};

struct SequenceRecord {
  std::string id;
  int index = 0;
  std::vector<std::string> frame_blobs;
  std::vector<Pose> poses;
};

struct DatasetManifest {
  int schema_version = 1;
  std::uint64_t seed = 0;
  nlohmann::json spec;
  nlohmann::json config;
  std::vector<SampleRecord> samples;
  std::vector<SequenceRecord> sequences;

  void validate() const;
};

nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

// Generates every sample and sequence, writes rasters under `dir` and returns
// the manifest (also written to dir/manifest.json). Paths in the manifest are
// relative to `dir`.
DatasetManifest build_dataset(const SceneSpec& spec, const DatasetConfig& config,
                              const std::filesystem::path& dir);

std::uint64_t manifest_hash(const std::filesystem::path& manifest_path);
// Hash over the manifest and every file it references.
std::uint64_t dataset_hash(const std::filesystem::path& dir);

// In-memory view of a dataset on disk.
struct Dataset {
  SceneSpec spec;
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sequence> sequences;
};

Dataset load_dataset(const std::filesystem::path& dir);
// Same content as build_dataset + load_dataset, without touching the disk.
Dataset generate_dataset(const SceneSpec& spec, const DatasetConfig& config);

void save_sample_blob(const std::filesystem::path& path, const Sample& s);
Sample load_sample_blob(const std::filesystem::path& path);

// Netpbm writers: 8-bit binary PPM for RGB in [0,1], 16-bit PGM.
void write_ppm(const std::filesystem::path& path, const ImageGrid& rgb);
void write_pgm16(const std::filesystem::path& path, int height, int width,
                 const std::vector<std::uint16_t>& values);

// Colour-coded label visualisation.
ImageGrid colorize_labels(const LabelRaster& labels, int num_classes);

}  // namespace depthlab::scenes
