#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "coco/scene.hpp"

namespace coco {

struct Ray;  // rendering.hpp

// Analytic scene description: a union of spheres and boxes inside the unit
// sphere, Lambert-shaded from one directional light.
struct SdfPrimitive {
  enum class Kind { kSphere, kBox };
  Kind kind = Kind::kSphere;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half_extent = Eigen::Vector3d::Constant(0.5);  // radius in .x() for spheres
  Eigen::Vector3d albedo = Eigen::Vector3d::Constant(0.75);

  double radius() const { return half_extent.x(); }
};

struct SyntheticSpec {
  std::vector<SdfPrimitive> primitives;
  Eigen::Vector3d light_dir = Eigen::Vector3d(0.4, 0.3, 0.85).normalized();
  double ambient = 0.3;
  int n_views = 16;
  int image_size = 64;
  double camera_distance = 2.0;
  double focal_px = 0.0;  // 0 -> 1.2 * image_size
  Eigen::Vector3d background_color = Eigen::Vector3d(0.1, 0.12, 0.15);
  uint64_t seed = 0;

  // Default single gray sphere of radius 0.5 at the origin.
  static SyntheticSpec sphere_scene();
  // Sphere plus box, two albedos.
  static SyntheticSpec two_primitive_scene();

  void validate() const;
};

struct TraceHit {
  Eigen::Vector3d point;
  Eigen::Vector3d normal;
  double depth = 0.0;
};

// Signed distance of the primitive union (min over members).
double analytic_sdf(const SyntheticSpec& spec, const Eigen::Vector3d& p);

// Albedo of the closest primitive at p.
Eigen::Vector3d analytic_albedo(const SyntheticSpec& spec, const Eigen::Vector3d& p);

// Marches the analytic SDF until |f| < 1e-5 or t > far. Empty on miss.
std::optional<TraceHit> sphere_trace(const SyntheticSpec& spec, const Ray& ray);

// clamp(albedo * (ambient + (1-ambient) * max(0, n.l)), 0, 1)
Eigen::Vector3d lambert_shade(const Eigen::Vector3d& albedo, const Eigen::Vector3d& normal,
                              const Eigen::Vector3d& light_dir, double ambient);

// Renders every view by sphere tracing + Lambert shading, writes the scene
// directory (images, hit/miss masks, alternating train/test split) and
// returns the scene. Deterministic per spec.
Scene synthesize_scene(const SyntheticSpec& spec, const std::string& out_dir);

// The spec loaded/saved as JSON (CLI input format).
SyntheticSpec load_synthetic_spec(const std::string& path);
void save_synthetic_spec(const SyntheticSpec& spec, const std::string& path);

}  // namespace coco
