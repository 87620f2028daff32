#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>

#include "coco/attention.hpp"
#include "coco/autodiff.hpp"
#include "coco/codebook.hpp"
#include "coco/params.hpp"
#include "coco/rng.hpp"

namespace coco {

// Architecture hyperparameters. Defaults follow the reference configuration:
// query/feature width 128 over 4 heads, feed-forward 256, 256 query
// embeddings, 3 self-attention blocks, 1 geometry / 2 appearance
// cross-attention blocks, positional encoding with 6 (position) and 4
// (direction) frequencies.
struct ModelConfig {
  int width = 128;         // query embedding dim S == coordinate feature width C
  int heads = 4;
  int d_ff = 256;
  int hidden_width = 256;  // post-attention MLP width
  int feature_dim = 256;   // geometry feature z
  int num_queries = 256;   // M
  int self_layers = 3;     // L
  int t_geometry = 1;
  int t_appearance = 2;
  int n_freq_pos = 6;
  int n_freq_dir = 4;
  bool mlp_only = false;
  bool use_codebook_attention = true;
  bool learnable_codebook = false;
  bool normalize_codebook = false;
  bool background_field = false;
  double softplus_sharpness = 100.0;
  double init_laplace_beta = 0.1;
  double init_radius = 0.5;

  int head_dim() const { return width / heads; }
  AttentionConfig attention(int cross_layers) const {
    return AttentionConfig{heads, head_dim(), d_ff, self_layers, cross_layers};
  }
  void validate() const;
};

// Parameter indices for one CoCo branch: query embeddings + codebook
// attention producing prototypes, a positional-encoding lift, coordinate
// attention, and an MLP head.
struct BranchParams {
  int queries = -1;
  CodebookAttentionParams codebook_attn;
  CoordinateAttentionParams coord_attn;
  int lift_w = -1, lift_b = -1;
  int h1_w = -1, h1_b = -1;
  int h2_w = -1, h2_b = -1;
  int head_w = -1, head_b = -1;
};

// Background radiance field: a CoCo density branch over inverse-depth
// augmented points plus a plain MLP mapping (feature, encoded direction) to
// color.
struct BackgroundParams {
  BranchParams geo;
  int app_h1_w = -1, app_h1_b = -1;
  int app_h2_w = -1, app_h2_b = -1;
  int app_out_w = -1, app_out_b = -1;
};

// Laplace-CDF density mapping: sigma = (1/beta) * Psi_beta(-s) where
// Psi_beta is the CDF of a zero-mean Laplace distribution with scale beta.
// Monotone decreasing in s, range (0, 1/beta), value 1/(2 beta) at s = 0.
double sdf_to_density(double sdf, double beta);

// All learnable state for a scene: three CoCo branches (geometry,
// appearance, optional background), the shared prior codebook entries and
// the Laplace scale (stored as its log so positivity is structural).
template <class S>
class FieldModel {
 public:
  using Mat = typename ad::Tape<S>::Mat;

  FieldModel(const ModelConfig& cfg, const Codebook& prior, uint64_t seed);

  ModelConfig config;
  ParamStore<S> params;
  int codebook_param = -1;
  int log_beta = -1;
  BranchParams geometry_br;
  BranchParams appearance_br;
  std::optional<BackgroundParams> background_br;

  S laplace_beta() const { return std::exp(params.values[log_beta](0, 0)); }

  // ---- tape builders ----

  // Prototypes for a branch; -1 in MLP-only mode (no attention at all).
  int build_prototypes(ad::Tape<S>& t, TapeBinder<S>& bind, const BranchParams& br) const;

  struct GeometryNodes {
    int sdf = -1;            // N x 1
    int feature = -1;        // N x feature_dim
    int attn_features = -1;  // N x width, after coordinate attention
  };
  GeometryNodes build_geometry(ad::Tape<S>& t, TapeBinder<S>& bind, int points,
                               int protos) const;

  struct AppearanceNodes {
    int rgb = -1;            // N x 3, in (0,1)
    int attn_features = -1;  // N x width
  };
  // `normal` and `feature` are graph nodes so shading gradients flow back
  // into the geometry branch.
  AppearanceNodes build_appearance(ad::Tape<S>& t, TapeBinder<S>& bind, int points, int normal,
                                   int viewdir, int feature, int protos) const;

  struct BackgroundNodes {
    int density = -1;  // N x 1, nonnegative
    int rgb = -1;      // N x 3
  };
  BackgroundNodes build_background(ad::Tape<S>& t, TapeBinder<S>& bind, int points4,
                                   int viewdir, int protos) const;

  // sigma node (N x 1) from an sdf node using the learnable Laplace scale.
  int build_density(ad::Tape<S>& t, TapeBinder<S>& bind, int sdf) const;

  // ---- plain evaluation (builds a scratch tape) ----

  Mat prototype_values(const BranchParams& br) const;

  // sdf (N x 1), optional features (N x F) and exact spatial gradients (N x 3).
  void eval_geometry(const Eigen::Ref<const Mat>& points, Mat* sdf, Mat* features,
                     Mat* gradients) const;

  Mat eval_appearance(const Eigen::Ref<const Mat>& points, const Eigen::Ref<const Mat>& normals,
                      const Eigen::Ref<const Mat>& viewdirs,
                      const Eigen::Ref<const Mat>& features) const;

  void eval_background(const Eigen::Ref<const Mat>& points4,
                       const Eigen::Ref<const Mat>& viewdirs, Mat* density, Mat* rgb) const;

 private:
  void init_parameters(const Codebook& prior, uint64_t seed);

  BranchParams make_branch(const std::string& name, int input_dim, int head_out, int codebook_dim,
                           int cross_layers, bool geometric, Rng& rng);
};

// Unit surface normal at x from the exact field gradient. Throws
// invalid_argument when the gradient norm falls below 1e-8.
template <class S>
Eigen::Vector3d surface_normal(const FieldModel<S>& model, const Eigen::Vector3d& x);

// Builds a freshly initialized model whose SDF approximates a centered
// sphere of the given radius (variance-scaled hidden layers, biased output
// head, zeroed attention output projections).
template <class S>
FieldModel<S> geometric_initialize(const ModelConfig& cfg, const Codebook& prior, double radius,
                                   uint64_t seed);

extern template class FieldModel<float>;
extern template class FieldModel<double>;
extern template Eigen::Vector3d surface_normal(const FieldModel<float>&, const Eigen::Vector3d&);
extern template Eigen::Vector3d surface_normal(const FieldModel<double>&, const Eigen::Vector3d&);
extern template FieldModel<float> geometric_initialize(const ModelConfig&, const Codebook&,
                                                       double, uint64_t);
extern template FieldModel<double> geometric_initialize(const ModelConfig&, const Codebook&,
                                                        double, uint64_t);

}  // namespace coco
