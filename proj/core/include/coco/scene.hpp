#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "coco/image.hpp"

namespace coco {

// Calibrated pinhole camera. camera_to_world maps camera-frame points
// (x right, y down, z forward) into world coordinates.
struct Camera {
  Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
  Eigen::Matrix4d camera_to_world = Eigen::Matrix4d::Identity();
  int width = 0;
  int height = 0;

  Eigen::Vector3d center() const { return camera_to_world.block<3, 1>(0, 3); }
  Eigen::Matrix3d rotation() const { return camera_to_world.block<3, 3>(0, 0); }

  // Throws invalid_argument if intrinsics are singular, the rotation block
  // is not orthonormal within 1e-5, or dimensions are non-positive.
  void validate() const;
};

enum class BackgroundMode { kField, kConstant };

// A calibrated multi-view scene, normalized so the object of interest fits
// inside the unit sphere at the origin.
struct Scene {
  std::vector<Camera> cameras;
  std::vector<ImageU8> images;
  std::vector<std::optional<MaskU8>> masks;  // parallel to images
  std::vector<int> train_split;
  std::vector<int> test_split;
  double scene_radius = 1.0;
  BackgroundMode background_mode = BackgroundMode::kConstant;
  Eigen::Vector3d background_color = Eigen::Vector3d::Zero();
  Eigen::Matrix4d normalization = Eigen::Matrix4d::Identity();

  int num_views() const { return int(cameras.size()); }
  bool has_masks() const;

  // Throws if images and cameras disagree, splits overlap or index out of
  // range, or any camera fails validation.
  void validate() const;
};

// Reads <dir>/scene.json plus the referenced PNGs, validates invariants and
// applies the declared normalization transform to the camera poses.
Scene load_scene(const std::string& dir);

// Writes scene.json plus images/masks into dir (created if missing).
// The inverse operation of load_scene for scenes with identity normalization.
void write_scene(const Scene& scene, const std::string& dir);

}  // namespace coco
