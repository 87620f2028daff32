#include "coco/rendering.hpp"

#include <algorithm>
#include <cmath>

#include "coco/errors.hpp"

namespace coco {

std::vector<Ray> generate_rays(const Camera& cam,
                               const std::vector<std::pair<int, int>>& pixel_rows_cols,
                               double near, double far) {
  cam.validate();
  const Eigen::Matrix3d k_inv = cam.intrinsics.inverse();
  const Eigen::Matrix3d rot = cam.rotation();
  const Eigen::Vector3d origin = cam.center();

  std::vector<Ray> rays;
  rays.reserve(pixel_rows_cols.size());
  for (const auto& [row, col] : pixel_rows_cols) {
    if (row < 0 || row >= cam.height || col < 0 || col >= cam.width) {
      throw invalid_argument("generate_rays: pixel out of bounds");
    }
    const Eigen::Vector3d pix(col + 0.5, row + 0.5, 1.0);
    Ray ray;
    ray.origin = origin;
    ray.direction = (rot * (k_inv * pix)).normalized();
    ray.near = near;
    ray.far = far;
    rays.push_back(ray);
  }
  return rays;
}

Ray ray_through_pixel(const Camera& cam, int row, int col, double near, double far) {
  return generate_rays(cam, {{row, col}}, near, far)[0];
}

std::optional<std::pair<double, double>> sphere_ray_bounds(const Ray& ray, double radius) {
  // |o + t d| = radius with unit d.
  const double b = ray.origin.dot(ray.direction);
  const double c = ray.origin.squaredNorm() - radius * radius;
  const double disc = b * b - c;
  if (disc <= 0.0) return std::nullopt;
  const double s = std::sqrt(disc);
  const double t0 = -b - s;
  const double t1 = -b + s;
  if (t1 <= 0.0) return std::nullopt;
  return std::make_pair(std::max(0.0, t0), t1);
}

void assign_ray_bounds(Ray& ray, const RenderSettings& rs) {
  if (rs.sampling.near && rs.sampling.far) {
    ray.near = *rs.sampling.near;
    ray.far = *rs.sampling.far;
    if (!(ray.near < ray.far) || ray.near < 0.0) {
      throw invalid_argument("assign_ray_bounds: need 0 <= near < far");
    }
    return;
  }
  const double radius = rs.scene_radius * rs.sampling.sphere_pad;
  if (auto bounds = sphere_ray_bounds(ray, radius)) {
    ray.near = bounds->first;
    ray.far = bounds->second;
  } else {
    // Miss: keep a sliver at the closest approach so the foreground pass is
    // well-formed but contributes nothing.
    const double t = std::max(1e-4, -ray.origin.dot(ray.direction));
    ray.near = t - 1e-4;
    ray.far = t + 1e-4;
  }
}

RaySamples stratified_samples(const Ray& ray, int n, bool jitter, uint64_t seed) {
  if (n < 2) throw invalid_argument("stratified_samples: n must be >= 2");
  RaySamples out;
  out.t.resize(n);
  const double width = (ray.far - ray.near) / n;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const double u = jitter ? rng.uniform() : 0.5;
    out.t[i] = ray.near + width * (i + u);
  }
  out.points.resize(n, 3);
  out.delta.resize(n);
  for (int i = 0; i < n; ++i) {
    out.points.row(i) = (ray.origin + out.t[i] * ray.direction).transpose();
    out.delta[i] = (i + 1 < n ? out.t[i + 1] : ray.far) - out.t[i];
  }
  return out;
}

RaySamples importance_samples(const Ray& ray, const RaySamples& coarse,
                              const Eigen::VectorXd& weights, int n, uint64_t seed) {
  const int nc = int(coarse.t.size());
  if (weights.size() != nc) throw invalid_argument("importance_samples: weight count mismatch");
  if ((weights.array() < 0.0).any()) {
    throw invalid_argument("importance_samples: negative weights");
  }

  // Piecewise-constant PDF over the coarse bins [t_i, t_{i+1}) with the last
  // bin ending at far; a small floor keeps the CDF invertible everywhere.
  Eigen::VectorXd mass = weights.array() + 1e-5;
  std::vector<double> cdf(nc + 1, 0.0);
  for (int i = 0; i < nc; ++i) cdf[i + 1] = cdf[i] + mass[i];
  const double total = cdf[nc];

  Rng rng(seed);
  std::vector<double> merged(coarse.t.data(), coarse.t.data() + nc);
  merged.reserve(nc + n);
  for (int s = 0; s < n; ++s) {
    const double u = rng.uniform() * total;
    const int bin =
        int(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin()) - 1;
    const int b = std::min(bin, nc - 1);
    const double lo = coarse.t[b];
    const double hi = b + 1 < nc ? coarse.t[b + 1] : ray.far;
    const double frac = (u - cdf[b]) / mass[b];
    merged.push_back(lo + frac * (hi - lo));
  }
  std::sort(merged.begin(), merged.end());
  merged.erase(std::unique(merged.begin(), merged.end()), merged.end());

  RaySamples out;
  const int m = int(merged.size());
  out.t = Eigen::Map<Eigen::VectorXd>(merged.data(), m);
  out.points.resize(m, 3);
  out.delta.resize(m);
  for (int i = 0; i < m; ++i) {
    out.points.row(i) = (ray.origin + out.t[i] * ray.direction).transpose();
    out.delta[i] = (i + 1 < m ? out.t[i + 1] : ray.far) - out.t[i];
  }
  return out;
}

double alpha_from_density(double sigma, double delta) {
  if (sigma < 0.0 || delta < 0.0) throw invalid_argument("alpha_from_density: negative input");
  return -std::expm1(-sigma * delta);
}

RenderOutput composite(const Eigen::VectorXd& alphas, const Eigen::MatrixXd& colors) {
  const int n = int(alphas.size());
  if (colors.rows() != n || colors.cols() != 3) {
    throw invalid_argument("composite: colors must be N x 3");
  }
  RenderOutput out;
  out.weights.resize(n);
  double trans = 1.0;
  for (int i = 0; i < n; ++i) {
    const double a = alphas[i];
    if (a < 0.0 || a > 1.0) throw invalid_argument("composite: alpha out of [0,1]");
    out.weights[i] = a * trans;
    out.color += out.weights[i] * colors.row(i).transpose();
    trans *= 1.0 - a;
  }
  out.transmittance_end = trans;
  return out;
}

Eigen::Vector3d blend_background(const RenderOutput& fg, const Eigen::Vector3d& bg_color) {
  return fg.color + fg.transmittance_end * bg_color;
}

namespace detail {

template <class S>
ChunkGraph<S> build_render_chunk(ad::Tape<S>& tape, TapeBinder<S>& bind,
                                 const FieldModel<S>& model, const RenderSettings& rs,
                                 std::span<const Ray> rays, std::span<const uint64_t> ray_seeds,
                                 int protos_geo, int protos_app, int protos_bg,
                                 bool with_eikonal) {
  using Mat = typename ad::Tape<S>::Mat;
  const int R = int(rays.size());
  const int N = rs.sampling.merged();
  if (R < 1) throw invalid_argument("build_render_chunk: empty chunk");

  ChunkGraph<S> out;
  out.samples.resize(R);

  // Coarse pass: plain geometry evaluation drives the importance
  // distribution; no gradients are needed here.
  {
    Eigen::MatrixXd coarse_pts(R * rs.sampling.n_coarse, 3);
    std::vector<RaySamples> coarse(R);
    for (int r = 0; r < R; ++r) {
      coarse[r] = stratified_samples(rays[r], rs.sampling.n_coarse, true,
                                     derive_seed({ray_seeds[r], 1}));
      coarse_pts.middleRows(r * rs.sampling.n_coarse, rs.sampling.n_coarse) = coarse[r].points;
    }
    ad::Tape<S> scratch;
    TapeBinder<S> scratch_bind(scratch, model.params);
    const int pts = scratch.constant(coarse_pts.cast<S>());
    int pg = -1;
    if (!model.config.mlp_only) {
      pg = scratch.constant(tape.val(protos_geo));
    }
    const auto geo = model.build_geometry(scratch, scratch_bind, pts, pg);
    const int sigma = model.build_density(scratch, scratch_bind, geo.sdf);
    const Mat& sig = scratch.val(sigma);

    for (int r = 0; r < R; ++r) {
      const int nc = rs.sampling.n_coarse;
      Eigen::VectorXd alphas(nc);
      for (int i = 0; i < nc; ++i) {
        alphas[i] =
            alpha_from_density(double(sig(r * nc + i, 0)), coarse[r].delta[i]);
      }
      Eigen::VectorXd w(nc);
      double trans = 1.0;
      for (int i = 0; i < nc; ++i) {
        w[i] = alphas[i] * trans;
        trans *= 1.0 - alphas[i];
      }
      if (rs.sampling.n_fine > 0) {
        out.samples[r] = importance_samples(rays[r], coarse[r], w, rs.sampling.n_fine,
                                            derive_seed({ray_seeds[r], 2}));
      } else {
        out.samples[r] = coarse[r];
      }
    }
  }

  // Rectangular merged layout (ray-major): deduplicated merges are padded at
  // the far plane with zero spacing, which contributes nothing.
  const int P = R * N;
  Eigen::MatrixXd pts_d(P, 3);
  Mat delta(P, 1), dirs(P, 3), tvals(P, 1);
  for (int r = 0; r < R; ++r) {
    const RaySamples& ms = out.samples[r];
    const int m = int(ms.t.size());
    for (int i = 0; i < N; ++i) {
      const int row = r * N + i;
      if (i < m) {
        pts_d.row(row) = ms.points.row(i);
        delta(row, 0) = S(i + 1 < m ? ms.delta[i] : rays[r].far - ms.t[i]);
        tvals(row, 0) = S(ms.t[i]);
      } else {
        pts_d.row(row) = (rays[r].origin + rays[r].far * rays[r].direction).transpose();
        delta(row, 0) = S(0);
        tvals(row, 0) = S(rays[r].far);
      }
      dirs.row(row) = rays[r].direction.cast<S>().transpose();
    }
  }

  // Eikonal points: the ray samples themselves plus an equal number of
  // uniform draws inside the scene sphere.
  int n_extra = 0;
  if (with_eikonal) {
    n_extra = P;
    Rng rng(derive_seed({ray_seeds[0], 0xE1CULL}));
    Eigen::MatrixXd extra(n_extra, 3);
    for (int i = 0; i < n_extra; ++i) {
      while (true) {
        const double x = rng.uniform(-1.0, 1.0);
        const double y = rng.uniform(-1.0, 1.0);
        const double z = rng.uniform(-1.0, 1.0);
        if (x * x + y * y + z * z <= 1.0) {
          extra.row(i) = rs.scene_radius * Eigen::RowVector3d(x, y, z);
          break;
        }
      }
    }
    Eigen::MatrixXd all(P + n_extra, 3);
    all << pts_d, extra;
    pts_d = std::move(all);
  }

  const int x = tape.leaf(pts_d.cast<S>(), true);
  out.points_leaf = x;
  const auto geo = model.build_geometry(tape, bind, x, protos_geo);

  // Exact spatial gradient as graph nodes (normals + eikonal).
  const int grad = ad::grad_graph(tape, tape.total_sum(geo.sdf), {x})[0];
  const int grad_norm = tape.sqrt_(tape.add_scalar(tape.row_sum(tape.square(grad)), S(1e-12)));
  if (with_eikonal) {
    out.eik_sq_sum = tape.total_sum(tape.square(tape.add_scalar(grad_norm, S(-1))));
    out.n_eik_points = P + n_extra;
  }

  const int sdf_rays = with_eikonal ? tape.slice_rows(geo.sdf, 0, P) : geo.sdf;
  const int grad_rays = with_eikonal ? tape.slice_rows(grad, 0, P) : grad;
  const int norm_rays = with_eikonal ? tape.slice_rows(grad_norm, 0, P) : grad_norm;
  const int feat_rays = with_eikonal ? tape.slice_rows(geo.feature, 0, P) : geo.feature;
  const int normals = tape.mul(grad_rays, tape.bcol(tape.inv(norm_rays), 3));

  const int dirs_node = tape.constant(dirs);
  const auto app =
      model.build_appearance(tape, bind, with_eikonal ? tape.slice_rows(x, 0, P) : x, normals,
                             dirs_node, feat_rays, protos_app);

  // sigma -> per-sample optical depth -> transmittance, weights.
  const int sigma = model.build_density(tape, bind, sdf_rays);
  const int optical = tape.clamp(tape.mul(sigma, tape.constant(delta)), S(0), S(80));
  const int neg_od = tape.neg(tape.reshape(optical, R, N));
  Mat upper = Mat::Zero(N, N);
  for (int j = 0; j < N; ++j) {
    for (int i = j + 1; i < N; ++i) upper(j, i) = S(1);
  }
  const int excl_sum = tape.matmul(neg_od, tape.constant(std::move(upper)));
  const int trans = tape.exp_(excl_sum);
  const int alpha = tape.sub(tape.constant(Mat::Ones(R, N)), tape.exp_(neg_od));
  const int weights = tape.mul(alpha, trans);
  const int trans_end = tape.exp_(tape.row_sum(neg_od));
  out.opacity = tape.row_sum(weights);

  int fg_color[3];
  for (int c = 0; c < 3; ++c) {
    const int ch = tape.reshape(tape.slice_cols(app.rgb, c, 1), R, N);
    fg_color[c] = tape.row_sum(tape.mul(weights, ch));
  }

  // Background: constant color scaled by residual transmittance, or a second
  // compositing pass through the background field over a bounded far shell.
  if (rs.background_mode == BackgroundMode::kConstant || !model.background_br) {
    for (int c = 0; c < 3; ++c) {
      out.color[c] = tape.add(fg_color[c], tape.scale(trans_end, S(rs.background_color[c])));
    }
  } else {
    const int nb = rs.sampling.n_background;
    const int Q = R * nb;
    Eigen::MatrixXd bg_pts4(Q, 4);
    Mat bg_delta(Q, 1), bg_dirs(Q, 3);
    for (int r = 0; r < R; ++r) {
      Rng rng(derive_seed({ray_seeds[r], 3}));
      // Inverse-distance spacing over [shell, bg_far].
      const double shell = std::max(rays[r].far, rs.scene_radius);
      const double inv_lo = 1.0 / rs.sampling.bg_far;
      const double inv_hi = 1.0 / shell;
      std::vector<double> ts(nb);
      for (int i = 0; i < nb; ++i) {
        const double u = (i + rng.uniform()) / nb;
        ts[i] = 1.0 / (inv_hi + u * (inv_lo - inv_hi));
      }
      for (int i = 0; i < nb; ++i) {
        const int row = r * nb + i;
        const Eigen::Vector3d p = rays[r].origin + ts[i] * rays[r].direction;
        const double dist = std::max(p.norm(), 1e-9);
        // Inverted-sphere coordinates: unit direction plus inverse radius.
        bg_pts4.row(row) << p.x() / dist, p.y() / dist, p.z() / dist, rs.scene_radius / dist;
        bg_delta(row, 0) = S((i + 1 < nb ? ts[i + 1] : rs.sampling.bg_far) - ts[i]);
        bg_dirs.row(row) = rays[r].direction.cast<S>().transpose();
      }
    }
    const auto bg = model.build_background(tape, bind, tape.constant(bg_pts4.cast<S>()),
                                           tape.constant(bg_dirs), protos_bg);
    const int bg_od =
        tape.clamp(tape.mul(bg.density, tape.constant(bg_delta)), S(0), S(80));
    const int bg_neg = tape.neg(tape.reshape(bg_od, R, nb));
    Mat bg_upper = Mat::Zero(nb, nb);
    for (int j = 0; j < nb; ++j) {
      for (int i = j + 1; i < nb; ++i) bg_upper(j, i) = S(1);
    }
    const int bg_trans = tape.exp_(tape.matmul(bg_neg, tape.constant(std::move(bg_upper))));
    const int bg_alpha = tape.sub(tape.constant(Mat::Ones(R, nb)), tape.exp_(bg_neg));
    const int bg_w = tape.mul(bg_alpha, bg_trans);
    for (int c = 0; c < 3; ++c) {
      const int ch = tape.reshape(tape.slice_cols(bg.rgb, c, 1), R, nb);
      const int bg_c = tape.row_sum(tape.mul(bg_w, ch));
      out.color[c] = tape.add(fg_color[c], tape.mul(trans_end, bg_c));
    }
  }

  // Value outputs.
  out.colors.resize(R, 3);
  for (int c = 0; c < 3; ++c) out.colors.col(c) = tape.val(out.color[c]);
  out.opacity_v = tape.val(out.opacity);
  out.trans_end = tape.val(trans_end);
  out.weights = tape.val(weights);

  const Mat& w_v = out.weights;
  const Mat& n_v = tape.val(normals);
  out.depth.resize(R, 1);
  out.normals.resize(R, 3);
  for (int r = 0; r < R; ++r) {
    double d = 0.0;
    Eigen::Vector3d nsum = Eigen::Vector3d::Zero();
    for (int i = 0; i < N; ++i) {
      const int row = r * N + i;
      d += double(w_v(r, i)) * double(tvals(row, 0));
      nsum += double(w_v(r, i)) * n_v.row(row).template cast<double>().transpose();
    }
    out.depth(r, 0) = S(d);
    const double nn = nsum.norm();
    if (nn > 1e-9) nsum /= nn;
    out.normals.row(r) = nsum.cast<S>().transpose();
  }
  return out;
}

template ChunkGraph<float> build_render_chunk(ad::Tape<float>&, TapeBinder<float>&,
                                              const FieldModel<float>&, const RenderSettings&,
                                              std::span<const Ray>, std::span<const uint64_t>,
                                              int, int, int, bool);
template ChunkGraph<double> build_render_chunk(ad::Tape<double>&, TapeBinder<double>&,
                                               const FieldModel<double>&, const RenderSettings&,
                                               std::span<const Ray>, std::span<const uint64_t>,
                                               int, int, int, bool);

}  // namespace detail

template <class S>
Renderer<S>::Renderer(const FieldModel<S>& model, const RenderSettings& rs)
    : model_(model), rs_(rs) {
  if (!model.config.mlp_only) {
    protos_geo_ = model.prototype_values(model.geometry_br);
    protos_app_ = model.prototype_values(model.appearance_br);
    if (rs_.background_mode == BackgroundMode::kField && model.background_br) {
      protos_bg_ = model.prototype_values(model.background_br->geo);
    }
  }
}

template <class S>
std::vector<RenderOutput> Renderer<S>::render_rays(std::span<const Ray> rays,
                                                   std::span<const uint64_t> ray_seeds) const {
  if (rays.size() != ray_seeds.size()) {
    throw invalid_argument("render_rays: seed count mismatch");
  }
  std::vector<RenderOutput> outputs(rays.size());
  const int chunk = std::max(1, rs_.sampling.chunk_rays);
  for (size_t at = 0; at < rays.size(); at += chunk) {
    const size_t n = std::min(size_t(chunk), rays.size() - at);
    std::vector<Ray> bounded(rays.begin() + at, rays.begin() + at + n);
    for (auto& ray : bounded) assign_ray_bounds(ray, rs_);

    ad::Tape<S> tape;
    TapeBinder<S> bind(tape, model_.params);
    int pg = -1, pa = -1, pb = -1;
    if (!model_.config.mlp_only) {
      pg = tape.constant(protos_geo_);
      pa = tape.constant(protos_app_);
      if (protos_bg_.size() > 0) pb = tape.constant(protos_bg_);
    }
    auto chunk_out = detail::build_render_chunk(tape, bind, model_, rs_, bounded,
                                                ray_seeds.subspan(at, n), pg, pa, pb, false);
    for (size_t r = 0; r < n; ++r) {
      RenderOutput& o = outputs[at + r];
      o.color = chunk_out.colors.row(int(r)).template cast<double>().transpose();
      o.transmittance_end = double(chunk_out.trans_end(int(r), 0));
      o.depth = double(chunk_out.depth(int(r), 0));
      o.normal = chunk_out.normals.row(int(r)).template cast<double>().transpose();
      const int m = int(chunk_out.samples[r].t.size());
      o.weights = chunk_out.weights.row(int(r)).head(m).template cast<double>().transpose();
    }
  }
  return outputs;
}

template <class S>
RenderOutput Renderer<S>::render_ray(const Ray& ray, uint64_t seed) const {
  return render_rays(std::span<const Ray>(&ray, 1), std::span<const uint64_t>(&seed, 1))[0];
}

template <class S>
RenderedImage Renderer<S>::render_image(const Camera& cam, uint64_t seed) const {
  cam.validate();
  std::vector<std::pair<int, int>> pixels;
  pixels.reserve(size_t(cam.width) * cam.height);
  for (int row = 0; row < cam.height; ++row) {
    for (int col = 0; col < cam.width; ++col) pixels.emplace_back(row, col);
  }
  std::vector<Ray> rays = generate_rays(cam, pixels, 0.0, 1.0);
  std::vector<uint64_t> seeds(rays.size());
  for (size_t i = 0; i < rays.size(); ++i) {
    // Streams keyed by pixel index, so chunking and order cannot matter.
    seeds[i] = derive_seed({seed, uint64_t(i)});
  }
  const auto outputs = render_rays(rays, seeds);

  RenderedImage img;
  img.color = ImageU8(cam.width, cam.height);
  img.depth.width = cam.width;
  img.depth.height = cam.height;
  img.depth.channels = 1;
  img.depth.data.resize(size_t(cam.width) * cam.height);
  img.normal.width = cam.width;
  img.normal.height = cam.height;
  img.normal.channels = 3;
  img.normal.data.resize(size_t(cam.width) * cam.height * 3);
  for (int row = 0; row < cam.height; ++row) {
    for (int col = 0; col < cam.width; ++col) {
      const RenderOutput& o = outputs[size_t(row) * cam.width + col];
      img.color.set(row, col, o.color);
      img.depth.at(row, col, 0) = float(o.depth);
      for (int c = 0; c < 3; ++c) img.normal.at(row, col, c) = float(o.normal[c]);
    }
  }
  return img;
}

template class Renderer<float>;
template class Renderer<double>;

}  // namespace coco
