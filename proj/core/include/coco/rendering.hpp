#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <vector>

#include "coco/fields.hpp"
#include "coco/image.hpp"
#include "coco/rng.hpp"
#include "coco/scene.hpp"

namespace coco {

struct Ray {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d direction = Eigen::Vector3d::UnitZ();  // unit norm
  double near = 0.0;
  double far = 1.0;
};

struct RaySamples {
  Eigen::VectorXd t;       // strictly increasing, within [near, far]
  Eigen::MatrixXd points;  // N x 3, origin + t * direction
  Eigen::VectorXd delta;   // t_{i+1} - t_i; last entry is far - t_N
};

struct RenderOutput {
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  Eigen::VectorXd weights;  // per merged sample, T_i * alpha_i
  double transmittance_end = 1.0;
  double depth = 0.0;
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();  // renormalized sum w_i n_i
};

// Pinhole rays through pixel centers: direction = normalize(R K^-1 (col+.5,
// row+.5, 1)), origin = camera center. near/far are copied onto every ray.
std::vector<Ray> generate_rays(const Camera& cam,
                               const std::vector<std::pair<int, int>>& pixel_rows_cols,
                               double near, double far);
Ray ray_through_pixel(const Camera& cam, int row, int col, double near, double far);

// [t0, t1] of the ray segment inside a sphere of the given radius around the
// origin; empty when the ray misses.
std::optional<std::pair<double, double>> sphere_ray_bounds(const Ray& ray, double radius);

// One sample per equal-width bin of [near, far]; bin centers unless jitter.
RaySamples stratified_samples(const Ray& ray, int n, bool jitter, uint64_t seed);

// Inverse-CDF draws from the piecewise-constant PDF over the coarse bins
// (proportional to weights + 1e-5 floor), merged with the coarse depths,
// sorted and deduplicated.
RaySamples importance_samples(const Ray& ray, const RaySamples& coarse,
                              const Eigen::VectorXd& weights, int n, uint64_t seed);

// alpha = 1 - exp(-sigma * delta)
double alpha_from_density(double sigma, double delta);

// Front-to-back compositing: w_i = alpha_i * prod_{j<i}(1 - alpha_j).
// colors may have fewer rows than alphas only if equal; depth/normal
// composites are left to the caller.
RenderOutput composite(const Eigen::VectorXd& alphas, const Eigen::MatrixXd& colors);

// C = C_fg + transmittance_end * C_bg
Eigen::Vector3d blend_background(const RenderOutput& fg, const Eigen::Vector3d& bg_color);

struct SamplingConfig {
  int n_coarse = 64;
  int n_fine = 64;
  int n_background = 32;
  std::optional<double> near;  // absent -> per-ray scene-sphere intersection
  std::optional<double> far;
  double sphere_pad = 1.1;
  double bg_far = 6.0;
  int chunk_rays = 16;
  int merged() const { return n_coarse + n_fine; }
};

struct RenderSettings {
  SamplingConfig sampling;
  BackgroundMode background_mode = BackgroundMode::kConstant;
  Eigen::Vector3d background_color = Eigen::Vector3d::Zero();
  double scene_radius = 1.0;
};

// Assigns near/far: explicit values when configured, otherwise the ray's
// intersection with the padded scene sphere (degenerate sliver on a miss, so
// the foreground stays empty and only background contributes).
void assign_ray_bounds(Ray& ray, const RenderSettings& rs);

namespace detail {

// Graph + values for one chunk of rays rendered through the field model.
template <class S>
struct ChunkGraph {
  using Mat = typename ad::Tape<S>::Mat;

  // Final blended color channels, R x 1 nodes.
  int color[3] = {-1, -1, -1};
  int opacity = -1;     // R x 1, sum of foreground weights
  int eik_sq_sum = -1;  // 1 x 1, sum of (|grad f| - 1)^2 over eikonal points
  int points_leaf = -1;
  int n_eik_points = 0;

  Mat colors;        // R x 3 values
  Mat opacity_v;     // R x 1
  Mat trans_end;     // R x 1
  Mat depth;         // R x 1
  Mat normals;       // R x 3, renormalized composite
  Mat weights;       // R x N merged sample weights
  std::vector<RaySamples> samples;  // per ray
};

template <class S>
ChunkGraph<S> build_render_chunk(ad::Tape<S>& tape, TapeBinder<S>& bind,
                                 const FieldModel<S>& model, const RenderSettings& rs,
                                 std::span<const Ray> rays, std::span<const uint64_t> ray_seeds,
                                 int protos_geo, int protos_app, int protos_bg,
                                 bool with_eikonal);

}  // namespace detail

struct RenderedImage {
  ImageU8 color;
  FloatBuffer depth;   // 1 channel
  FloatBuffer normal;  // 3 channels, raw components
};

// Batch renderer over a fixed model state. All results are pure functions of
// (parameters, rays, seed); chunking and thread count do not affect values.
template <class S>
class Renderer {
 public:
  Renderer(const FieldModel<S>& model, const RenderSettings& rs);

  RenderOutput render_ray(const Ray& ray, uint64_t seed) const;
  std::vector<RenderOutput> render_rays(std::span<const Ray> rays,
                                        std::span<const uint64_t> ray_seeds) const;
  RenderedImage render_image(const Camera& cam, uint64_t seed) const;

 private:
  const FieldModel<S>& model_;
  RenderSettings rs_;
  typename ad::Tape<S>::Mat protos_geo_, protos_app_, protos_bg_;
};

extern template class Renderer<float>;
extern template class Renderer<double>;

}  // namespace coco
