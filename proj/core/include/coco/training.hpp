#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "coco/fields.hpp"
#include "coco/rendering.hpp"
#include "coco/run_config.hpp"
#include "coco/scene.hpp"

namespace coco {

// ---- losses (reference implementations over plain values) ----

// (1/K) sum_k || pred_k - gt_k ||_1 over the three channels.
double rgb_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt);

// (1/N) sum (||grad f(x_i)|| - 1)^2 with exact field gradients.
template <class S>
double eikonal_loss(const FieldModel<S>& model, const Eigen::MatrixXd& points);

double total_loss(double rgb, double eik, double lambda);

// Binary cross-entropy between ray opacity (sum of weights) and the mask,
// with opacities clamped to [1e-5, 1-1e-5].
double mask_loss(const Eigen::VectorXd& opacity, const std::vector<uint8_t>& gt_mask);

// ---- batches ----

struct RayBatch {
  std::vector<Ray> rays;
  std::vector<uint64_t> ray_seeds;
  Eigen::MatrixXd gt_colors;  // K x 3 in [0,1]
  std::vector<uint8_t> gt_mask;  // empty when the scene has no masks
};

// K distinct (train view, pixel) pairs drawn uniformly with a PRNG keyed by
// (seed, step). Ray seeds are keyed by (seed, step, view, pixel).
RayBatch sample_ray_batch(const Scene& scene, int rays, uint64_t seed, int64_t step);

// ---- optimization ----

struct StepMetrics {
  double loss = 0.0;
  double rgb = 0.0;
  double eik = 0.0;
  double mask = 0.0;
  double batch_psnr = 0.0;
};

template <class S>
class TrainState {
 public:
  TrainState(FieldModel<S> model, RenderSettings rsettings, TrainConfig tcfg,
             nlohmann::json config_snapshot);

  // Renders the batch, evaluates the total loss and applies one Adam update
  // (beta1 0.9, beta2 0.999, eps 1e-8) to every trainable parameter.
  // Throws divergence_error on a non-finite loss.
  StepMetrics train_step(const RayBatch& batch);

  FieldModel<S>& model() { return model_; }
  const FieldModel<S>& model() const { return model_; }
  const RenderSettings& render_settings() const { return rsettings_; }

  // Scene-derived settings are not stored in checkpoints; re-apply them when
  // resuming or rendering against a scene.
  void set_scene_settings(const Scene& scene) {
    rsettings_.background_mode = scene.background_mode;
    rsettings_.background_color = scene.background_color;
    rsettings_.scene_radius = scene.scene_radius;
  }
  const TrainConfig& train_config() const { return tcfg_; }
  const nlohmann::json& config_snapshot() const { return snapshot_; }
  int64_t step() const { return step_; }

  void save_checkpoint(const std::string& path) const;
  static TrainState<S> load_checkpoint(const std::string& path);

 private:
  FieldModel<S> model_;
  RenderSettings rsettings_;
  TrainConfig tcfg_;
  nlohmann::json snapshot_;
  std::vector<typename ad::Tape<S>::Mat> adam_m_, adam_v_;
  int64_t step_ = 0;
};

// ---- per-scene optimization loop ----

struct FitResult {
  int64_t steps_run = 0;
  StepMetrics last;
  std::string checkpoint_path;  // final checkpoint
};

// Runs train_step for cfg.train.steps, appending JSON-lines metrics to
// <out_dir>/metrics.jsonl and writing periodic checkpoints plus
// <out_dir>/checkpoint.ckpt. Resumes from the rolling checkpoint when
// `resume` is set. A lock file guards out_dir against concurrent writers.
template <class S>
FitResult fit_scene(const Scene& scene, const RunConfig& cfg, bool resume);

// Dispatches on cfg.train.precision.
FitResult fit_scene_auto(const Scene& scene, const RunConfig& cfg, bool resume);

extern template class TrainState<float>;
extern template class TrainState<double>;
extern template double eikonal_loss(const FieldModel<float>&, const Eigen::MatrixXd&);
extern template double eikonal_loss(const FieldModel<double>&, const Eigen::MatrixXd&);
extern template FitResult fit_scene<float>(const Scene&, const RunConfig&, bool);
extern template FitResult fit_scene<double>(const Scene&, const RunConfig&, bool);

}  // namespace coco
