#include "coco/fields.hpp"

#include <cmath>

#include "coco/errors.hpp"
#include "coco/geom.hpp"

namespace coco {

void ModelConfig::validate() const {
  if (width < 1 || heads < 1) throw invalid_argument("model: width and heads must be >= 1");
  if (width % heads != 0) throw invalid_argument("model: width must be divisible by heads");
  if (num_queries < 1) throw invalid_argument("model: num_queries must be >= 1");
  if (self_layers < 0) throw invalid_argument("model: L must be >= 0");
  if (t_geometry < 1 || t_appearance < 1) throw invalid_argument("model: T must be >= 1");
  if (n_freq_pos < 0 || n_freq_dir < 0) throw invalid_argument("model: n_freq must be >= 0");
  if (hidden_width < 1 || feature_dim < 1 || d_ff < 1) {
    throw invalid_argument("model: widths must be >= 1");
  }
  if (init_laplace_beta <= 0.0) throw invalid_argument("model: laplace beta must be > 0");
}

double sdf_to_density(double sdf, double beta) {
  if (beta <= 0.0) throw invalid_argument("sdf_to_density: beta must be > 0");
  const double e = std::exp(-std::abs(sdf) / beta);
  const double psi = sdf >= 0.0 ? 0.5 * e : 1.0 - 0.5 * e;
  return psi / beta;
}

namespace {

int encoding_dim(int n, int n_freqs, bool include_input) {
  return n * ((include_input ? 1 : 0) + 2 * n_freqs);
}

}  // namespace

template <class S>
FieldModel<S>::FieldModel(const ModelConfig& cfg, const Codebook& prior, uint64_t seed)
    : config(cfg) {
  config.validate();
  if (prior.size() < 1 || prior.dim() < 1) {
    throw invalid_argument("FieldModel: empty codebook");
  }
  init_parameters(prior, seed);
}

template <class S>
void FieldModel<S>::init_parameters(const Codebook& prior, uint64_t seed) {
  Rng rng(derive_seed({seed, 0xF1E1D5ULL}));

  Mat entries = prior.entries.template cast<S>();
  if (config.normalize_codebook) {
    for (int i = 0; i < entries.rows(); ++i) {
      const S n = entries.row(i).norm();
      if (n > S(0)) entries.row(i) /= n;
    }
  }
  codebook_param = params.add("codebook", std::move(entries), config.learnable_codebook);
  log_beta = params.add("laplace.log_beta",
                        Mat::Constant(1, 1, S(std::log(config.init_laplace_beta))));

  const int pos_dim = encoding_dim(3, config.n_freq_pos, true);
  const int dir_dim = encoding_dim(3, config.n_freq_dir, true);

  geometry_br = make_branch("geometry", pos_dim, 1 + config.feature_dim, prior.dim(),
                            config.t_geometry, true, rng);
  appearance_br = make_branch("appearance", pos_dim + 3 + dir_dim + config.feature_dim, 3,
                              prior.dim(), config.t_appearance, false, rng);

  if (config.background_field) {
    BackgroundParams bg;
    const int pos4_dim = encoding_dim(4, config.n_freq_pos, true);
    bg.geo = make_branch("background", pos4_dim, 1 + config.feature_dim, prior.dim(), 1, false,
                         rng);
    auto normal_mat = [&](int r, int c, double stddev) {
      Mat m(r, c);
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) m(i, j) = S(rng.normal(0.0, stddev));
      }
      return m;
    };
    const int h = config.hidden_width;
    const int in = config.feature_dim + dir_dim;
    bg.app_h1_w = params.add("background.app.h1.w", normal_mat(in, h, 1.0 / std::sqrt(in)));
    bg.app_h1_b = params.add("background.app.h1.b", Mat::Zero(1, h));
    bg.app_h2_w = params.add("background.app.h2.w", normal_mat(h, h, 1.0 / std::sqrt(h)));
    bg.app_h2_b = params.add("background.app.h2.b", Mat::Zero(1, h));
    bg.app_out_w = params.add("background.app.out.w", normal_mat(h, 3, 1.0 / std::sqrt(h)));
    bg.app_out_b = params.add("background.app.out.b", Mat::Zero(1, 3));
    background_br = bg;
  }

  // Calibrate the SDF head bias so the zero level set sits at init_radius
  // (absorbs the softplus offsets that a closed form would have to track).
  {
    const int n_probe = 64;
    Mat probes(n_probe, 3);
    for (int i = 0; i < n_probe; ++i) {
      probes.row(i) =
          (fibonacci_direction(i, n_probe) * config.init_radius).cast<S>().transpose();
    }
    Mat sdf;
    eval_geometry(probes, &sdf, nullptr, nullptr);
    params.values[geometry_br.head_b](0, 0) -= sdf.col(0).mean();
  }

  if (!params.all_finite()) throw invalid_argument("FieldModel: non-finite initialization");
}

template <class S>
BranchParams FieldModel<S>::make_branch(const std::string& name, int input_dim, int head_out,
                                        int codebook_dim, int cross_layers, bool geometric,
                                        Rng& rng) {
  BranchParams br;
  auto normal_mat = [&](int r, int c, double mean, double stddev) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) m(i, j) = S(rng.normal(mean, stddev));
    }
    return m;
  };

  if (!config.mlp_only) {
    br.queries = params.add(name + ".queries",
                            normal_mat(config.num_queries, config.width, 0.0, 0.02));
    if (config.use_codebook_attention) {
      br.codebook_attn = make_codebook_attention_params(
          params, name + ".cba", config.width, codebook_dim, config.attention(0), rng);
    }
    br.coord_attn = make_coordinate_attention_params(
        params, name + ".coord", config.width, config.width, config.attention(cross_layers),
        rng);
  }

  const int w = config.width;
  const int h = config.hidden_width;

  if (geometric) {
    // Sphere initialization. The lift projects x onto antithetic pairs of
    // Fibonacci-sphere directions, the hidden layers pass activations
    // through, and the head averages them, so the MLP path computes
    // approximately c * sum_j |u_j . x| = ||x||. The output bias is then
    // calibrated numerically so the zero level set sits at the requested
    // radius. Encoded frequencies start at zero weight; small noise breaks
    // exact unit symmetry.
    Mat lift = normal_mat(input_dim, w, 0.0, 1e-3);
    lift.topRows(3).setZero();
    for (int j = 0; j < w; ++j) {
      const Eigen::Vector3d u = fibonacci_direction(j, w);
      for (int d = 0; d < 3; ++d) lift(d, j) = S(u[d]);
    }
    br.lift_w = params.add(name + ".lift.w", std::move(lift));
    br.lift_b = params.add(name + ".lift.b", Mat::Zero(1, w));

    Mat h1 = normal_mat(w, h, 0.0, 1e-3);
    for (int j = 0; j < h; ++j) h1(j % w, j) += S(1);
    br.h1_w = params.add(name + ".h1.w", std::move(h1));
    br.h1_b = params.add(name + ".h1.b", Mat::Zero(1, h));

    Mat h2 = normal_mat(h, h, 0.0, 1e-3);
    for (int j = 0; j < h; ++j) h2(j, j) += S(1);
    br.h2_w = params.add(name + ".h2.w", std::move(h2));
    br.h2_b = params.add(name + ".h2.b", Mat::Zero(1, h));

    // sum_j |u_j . x| over n directions ~= (n/2) ||x||, replicated h/w times.
    const double gain = 4.0 / double(h);
    Mat head = normal_mat(h, head_out, 0.0, 1e-4);
    head.col(0).array() += S(gain);
    br.head_w = params.add(name + ".head.w", std::move(head));
    Mat head_b = Mat::Zero(1, head_out);
    br.head_b = params.add(name + ".head.b", std::move(head_b));
  } else {
    br.lift_w = params.add(name + ".lift.w",
                           normal_mat(input_dim, w, 0.0, 1.0 / std::sqrt(double(input_dim))));
    br.lift_b = params.add(name + ".lift.b", Mat::Zero(1, w));
    br.h1_w = params.add(name + ".h1.w", normal_mat(w, h, 0.0, 1.0 / std::sqrt(double(w))));
    br.h1_b = params.add(name + ".h1.b", Mat::Zero(1, h));
    br.h2_w = params.add(name + ".h2.w", normal_mat(h, h, 0.0, 1.0 / std::sqrt(double(h))));
    br.h2_b = params.add(name + ".h2.b", Mat::Zero(1, h));
    br.head_w = params.add(name + ".head.w",
                           normal_mat(h, head_out, 0.0, 1.0 / std::sqrt(double(h))));
    br.head_b = params.add(name + ".head.b", Mat::Zero(1, head_out));
  }
  return br;
}

template <class S>
int FieldModel<S>::build_prototypes(ad::Tape<S>& t, TapeBinder<S>& bind,
                                    const BranchParams& br) const {
  if (config.mlp_only) return -1;
  const int q = bind(br.queries);
  if (!config.use_codebook_attention) return q;
  const int cb = bind(codebook_param);
  return tape_codebook_attention(t, q, cb, br.codebook_attn, config.attention(0), bind);
}

template <class S>
typename FieldModel<S>::GeometryNodes FieldModel<S>::build_geometry(ad::Tape<S>& t,
                                                                    TapeBinder<S>& bind,
                                                                    int points,
                                                                    int protos) const {
  GeometryNodes out;
  const S beta = S(config.softplus_sharpness);
  const int pe = tape_positional_encoding(t, points, config.n_freq_pos, true);
  int h = tape_linear(t, pe, bind(geometry_br.lift_w), bind(geometry_br.lift_b));
  if (!config.mlp_only) {
    h = tape_coordinate_attention(t, h, protos, geometry_br.coord_attn,
                                  config.attention(config.t_geometry), bind);
  }
  out.attn_features = h;
  h = t.softplus(tape_linear(t, h, bind(geometry_br.h1_w), bind(geometry_br.h1_b)), beta);
  h = t.softplus(tape_linear(t, h, bind(geometry_br.h2_w), bind(geometry_br.h2_b)), beta);
  const int head = tape_linear(t, h, bind(geometry_br.head_w), bind(geometry_br.head_b));
  out.sdf = t.slice_cols(head, 0, 1);
  out.feature = t.slice_cols(head, 1, config.feature_dim);
  return out;
}

template <class S>
typename FieldModel<S>::AppearanceNodes FieldModel<S>::build_appearance(
    ad::Tape<S>& t, TapeBinder<S>& bind, int points, int normal, int viewdir, int feature,
    int protos) const {
  AppearanceNodes out;
  const int pe_x = tape_positional_encoding(t, points, config.n_freq_pos, true);
  const int pe_d = tape_positional_encoding(t, viewdir, config.n_freq_dir, true);
  const int query =
      t.concat_cols(t.concat_cols(pe_x, normal), t.concat_cols(pe_d, feature));
  int h = tape_linear(t, query, bind(appearance_br.lift_w), bind(appearance_br.lift_b));
  if (!config.mlp_only) {
    h = tape_coordinate_attention(t, h, protos, appearance_br.coord_attn,
                                  config.attention(config.t_appearance), bind);
  }
  out.attn_features = h;
  h = t.relu(tape_linear(t, h, bind(appearance_br.h1_w), bind(appearance_br.h1_b)));
  h = t.relu(tape_linear(t, h, bind(appearance_br.h2_w), bind(appearance_br.h2_b)));
  out.rgb = t.sigmoid(tape_linear(t, h, bind(appearance_br.head_w), bind(appearance_br.head_b)));
  return out;
}

template <class S>
typename FieldModel<S>::BackgroundNodes FieldModel<S>::build_background(ad::Tape<S>& t,
                                                                        TapeBinder<S>& bind,
                                                                        int points4, int viewdir,
                                                                        int protos) const {
  if (!background_br) throw invalid_argument("build_background: model has no background field");
  const BackgroundParams& bg = *background_br;
  BackgroundNodes out;

  const int pe = tape_positional_encoding(t, points4, config.n_freq_pos, true);
  int h = tape_linear(t, pe, bind(bg.geo.lift_w), bind(bg.geo.lift_b));
  if (!config.mlp_only) {
    h = tape_coordinate_attention(t, h, protos, bg.geo.coord_attn, config.attention(1), bind);
  }
  h = t.relu(tape_linear(t, h, bind(bg.geo.h1_w), bind(bg.geo.h1_b)));
  h = t.relu(tape_linear(t, h, bind(bg.geo.h2_w), bind(bg.geo.h2_b)));
  const int head = tape_linear(t, h, bind(bg.geo.head_w), bind(bg.geo.head_b));
  out.density = t.softplus(t.slice_cols(head, 0, 1), S(1));
  const int feature = t.slice_cols(head, 1, config.feature_dim);

  const int pe_d = tape_positional_encoding(t, viewdir, config.n_freq_dir, true);
  int a = t.concat_cols(feature, pe_d);
  a = t.relu(tape_linear(t, a, bind(bg.app_h1_w), bind(bg.app_h1_b)));
  a = t.relu(tape_linear(t, a, bind(bg.app_h2_w), bind(bg.app_h2_b)));
  out.rgb = t.sigmoid(tape_linear(t, a, bind(bg.app_out_w), bind(bg.app_out_b)));
  return out;
}

template <class S>
int FieldModel<S>::build_density(ad::Tape<S>& t, TapeBinder<S>& bind, int sdf) const {
  const int n = int(t.val(sdf).rows());
  const int inv_beta = t.exp_(t.neg(bind(log_beta)));
  const int inv_beta_col = t.bfull(inv_beta, n, 1);

  // Branch masks from the current sdf values; the Laplace CDF is C^1 so the
  // two branch derivatives agree at s = 0.
  Mat negative(n, 1), sign_flip(n, 1);
  const Mat& s = t.val(sdf);
  for (int i = 0; i < n; ++i) {
    const bool neg = s(i, 0) < S(0);
    negative(i, 0) = neg ? S(1) : S(0);
    sign_flip(i, 0) = neg ? S(-1) : S(1);
  }
  const int e = t.exp_(t.neg(t.mul(t.abs_(sdf), inv_beta_col)));
  const int psi = t.add(t.constant(std::move(negative)),
                        t.mul(t.constant(std::move(sign_flip)), t.scale(e, S(0.5))));
  return t.mul(psi, inv_beta_col);
}

template <class S>
typename FieldModel<S>::Mat FieldModel<S>::prototype_values(const BranchParams& br) const {
  if (config.mlp_only) throw invalid_argument("prototype_values: MLP-only model");
  ad::Tape<S> t;
  TapeBinder<S> bind(t, params);
  return t.val(build_prototypes(t, bind, br));
}

template <class S>
void FieldModel<S>::eval_geometry(const Eigen::Ref<const Mat>& points, Mat* sdf, Mat* features,
                                  Mat* gradients) const {
  if (points.cols() != 3) throw invalid_argument("eval_geometry: points must be N x 3");
  if (!points.allFinite()) throw invalid_argument("eval_geometry: non-finite input");
  ad::Tape<S> t;
  TapeBinder<S> bind(t, params);
  const int protos = build_prototypes(t, bind, geometry_br);
  const int x = t.leaf(points, gradients != nullptr);
  const auto g = build_geometry(t, bind, x, protos);
  if (sdf) *sdf = t.val(g.sdf);
  if (features) *features = t.val(g.feature);
  if (gradients) {
    const auto ids = ad::grad_graph(t, t.total_sum(g.sdf), {x});
    *gradients = t.val(ids[0]);
  }
}

template <class S>
typename FieldModel<S>::Mat FieldModel<S>::eval_appearance(
    const Eigen::Ref<const Mat>& points, const Eigen::Ref<const Mat>& normals,
    const Eigen::Ref<const Mat>& viewdirs, const Eigen::Ref<const Mat>& features) const {
  if (points.rows() != normals.rows() || points.rows() != viewdirs.rows() ||
      points.rows() != features.rows()) {
    throw invalid_argument("eval_appearance: row count mismatch");
  }
  if (features.cols() != config.feature_dim) {
    throw invalid_argument("eval_appearance: feature width mismatch");
  }
  ad::Tape<S> t;
  TapeBinder<S> bind(t, params);
  const int protos = build_prototypes(t, bind, appearance_br);
  const auto a = build_appearance(t, bind, t.constant(points), t.constant(normals),
                                  t.constant(viewdirs), t.constant(features), protos);
  return t.val(a.rgb);
}

template <class S>
void FieldModel<S>::eval_background(const Eigen::Ref<const Mat>& points4,
                                    const Eigen::Ref<const Mat>& viewdirs, Mat* density,
                                    Mat* rgb) const {
  if (points4.cols() != 4) throw invalid_argument("eval_background: points must be N x 4");
  ad::Tape<S> t;
  TapeBinder<S> bind(t, params);
  const int protos = background_br ? build_prototypes(t, bind, background_br->geo) : -1;
  const auto b = build_background(t, bind, t.constant(points4), t.constant(viewdirs), protos);
  if (density) *density = t.val(b.density);
  if (rgb) *rgb = t.val(b.rgb);
}

template <class S>
Eigen::Vector3d surface_normal(const FieldModel<S>& model, const Eigen::Vector3d& x) {
  typename FieldModel<S>::Mat pts(1, 3), grad;
  pts << S(x.x()), S(x.y()), S(x.z());
  model.eval_geometry(pts, nullptr, nullptr, &grad);
  Eigen::Vector3d g = grad.row(0).template cast<double>();
  const double n = g.norm();
  if (n < 1e-8) throw invalid_argument("surface_normal: degenerate gradient");
  return g / n;
}

template <class S>
FieldModel<S> geometric_initialize(const ModelConfig& cfg, const Codebook& prior, double radius,
                                   uint64_t seed) {
  if (radius <= 0.0) throw invalid_argument("geometric_initialize: radius must be > 0");
  ModelConfig c = cfg;
  c.init_radius = radius;
  return FieldModel<S>(c, prior, seed);
}

template class FieldModel<float>;
template class FieldModel<double>;
template Eigen::Vector3d surface_normal(const FieldModel<float>&, const Eigen::Vector3d&);
template Eigen::Vector3d surface_normal(const FieldModel<double>&, const Eigen::Vector3d&);
template FieldModel<float> geometric_initialize(const ModelConfig&, const Codebook&, double,
                                                uint64_t);
template FieldModel<double> geometric_initialize(const ModelConfig&, const Codebook&, double,
                                                 uint64_t);

}  // namespace coco
