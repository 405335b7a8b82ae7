#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vst/clip.hpp"

namespace vst {

using Vec3 = std::array<double, 3>;

/// One synthetic sign: two Gaussian "hands" following a gloss-specific 3D
/// Lissajous path, perturbed per signer, seen from one camera azimuth.
struct SceneSpec {
  std::size_t gloss_id = 0;
  std::uint64_t signer_seed = 0;
  View view = View::front;
  Geometry geometry{8, 32, 32};
  std::uint64_t world_seed = 0;  // selects the per-gloss path family
};

/// Camera azimuth about the vertical axis, in radians: front 0, left +pi/4, right -pi/4.
double view_azimuth(View v);

/// World-space positions of both hands for every frame.
std::vector<std::array<Vec3, 2>> scene_trajectory(const SceneSpec& spec);

/// The same path with no signer perturbation.
std::vector<std::array<Vec3, 2>> gloss_template(std::uint64_t world_seed, std::size_t gloss_id, std::size_t frames);

/// World -> camera frame for a view (rotation about y).
Vec3 to_camera(const Vec3& world, View v);
Vec3 from_camera(const Vec3& camera, View v);

/// Pixel coordinates (column, row) of a camera-frame point.
std::array<double, 2> project(const Vec3& camera, const Geometry& g);

struct ClipPair {
  VideoClip rgb;
  VideoClip depth;
};

/// Deterministic render; values in [0,1]. Depth is replicated over 3 channels.
ClipPair render_clip(const SceneSpec& spec);

/// Clip files are TNSR tensors with extents (T, H, W, 3), f32.
void save_clip(const std::filesystem::path& path, const VideoClip& clip);
/// FormatError on bad magic, wrong rank/channels, zero extents or truncation.
VideoClip load_clip(const std::filesystem::path& path, Modality modality = Modality::rgb, View view = View::front);

struct ManifestRecord {
  std::string split;
  std::string sample_id;
  std::size_t gloss_id = 0;
  View view = View::front;
  std::filesystem::path rgb_path;    // absolute after loading
  std::filesystem::path depth_path;

  const std::filesystem::path& path_for(Modality m) const { return m == Modality::rgb ? rgb_path : depth_path; }
};

struct DatasetManifest {
  std::size_t num_classes = 0;
  Geometry geometry;
  std::uint64_t seed = 0;
  std::vector<ManifestRecord> records;

  /// Records of one split, in manifest order.
  std::vector<ManifestRecord> split(const std::string& name) const;
};

struct DatasetOptions {
  std::size_t num_classes = 8;
  std::size_t signers_per_class = 6;
  Geometry geometry{8, 32, 32};
  std::uint64_t seed = 7;
};

/// Writes rgb/<split>/<id>.tnsr, depth/<split>/<id>.tnsr and manifest.tsv.
/// Splits: train = front view, val = left view, test = left and right views;
/// each split draws its own signers.
DatasetManifest generate_dataset(const DatasetOptions& opts, const std::filesystem::path& out_dir);

/// Tab-separated: "# key=value" header lines, then
/// split, sample_id, gloss_id, view, rgb_path, depth_path (paths relative to the manifest).
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Signer seed of sample `index` of `gloss_id` in `split`.
std::uint64_t signer_seed(std::uint64_t seed, const std::string& split, std::size_t gloss_id, std::size_t index);

}  // namespace vst
