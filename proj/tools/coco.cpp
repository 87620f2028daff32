// Command-line surface: dataset synthesis, codebook preparation, training,
// rendering, evaluation and export. Exit codes: 0 success, 2 configuration
// error, 3 runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"

#include "coco/codebook.hpp"
#include "coco/errors.hpp"
#include "coco/geom.hpp"
#include "coco/mesh.hpp"
#include "coco/metrics.hpp"
#include "coco/rendering.hpp"
#include "coco/run_config.hpp"
#include "coco/synthetic.hpp"
#include "coco/training.hpp"

namespace fs = std::filesystem;
using namespace coco;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct LoadedModel {
  std::optional<FieldModel<float>> f32;
  std::optional<FieldModel<double>> f64;
  RunConfig config;
  int64_t step = 0;
};

LoadedModel load_model(const std::string& checkpoint) {
  LoadedModel lm;
  // The checkpoint stores float32 payloads; reload in the precision the run
  // was trained with so renders match training exactly.
  auto probe = TrainState<float>::load_checkpoint(checkpoint);
  lm.config = parse_run_config(probe.config_snapshot());
  lm.step = probe.step();
  if (lm.config.train.precision == "float64") {
    auto state = TrainState<double>::load_checkpoint(checkpoint);
    lm.f64.emplace(std::move(state.model()));
  } else {
    lm.f32.emplace(std::move(probe.model()));
  }
  return lm;
}

RenderSettings settings_for(const RunConfig& cfg, const Scene& scene) {
  RenderSettings rs;
  rs.sampling = cfg.sampling;
  rs.background_mode = scene.background_mode;
  rs.background_color = scene.background_color;
  rs.scene_radius = scene.scene_radius;
  return rs;
}

void write_render_outputs(const RenderedImage& img, const std::string& stem) {
  write_png(img.color, stem + "_rgb.png");
  write_float_buffer(img.depth, stem + "_depth.raw");
  write_float_buffer(img.normal, stem + "_normal.raw");

  // 8-bit previews: depth normalized to its finite range, normals mapped
  // from [-1,1] to [0,1].
  float dmin = 1e30f, dmax = -1e30f;
  for (float d : img.depth.data) {
    dmin = std::min(dmin, d);
    dmax = std::max(dmax, d);
  }
  const float dspan = dmax > dmin ? dmax - dmin : 1.0f;
  ImageU8 depth_png(img.depth.width, img.depth.height);
  ImageU8 normal_png(img.normal.width, img.normal.height);
  for (int r = 0; r < img.depth.height; ++r) {
    for (int c = 0; c < img.depth.width; ++c) {
      const double v = (img.depth.at(r, c, 0) - dmin) / dspan;
      depth_png.set(r, c, Eigen::Vector3d(v, v, v));
      normal_png.set(r, c, Eigen::Vector3d(0.5 * (img.normal.at(r, c, 0) + 1.0),
                                           0.5 * (img.normal.at(r, c, 1) + 1.0),
                                           0.5 * (img.normal.at(r, c, 2) + 1.0)));
    }
  }
  write_png(depth_png, stem + "_depth.png");
  write_png(normal_png, stem + "_normal.png");
}

int cmd_make_synthetic(const std::string& spec_path, const std::string& out_dir,
                       const std::string& preset, int views, int image_size) {
  SyntheticSpec spec = preset == "two_primitive" ? SyntheticSpec::two_primitive_scene()
                                                 : SyntheticSpec::sphere_scene();
  if (!spec_path.empty()) spec = load_synthetic_spec(spec_path);
  if (views > 0) spec.n_views = views;
  if (image_size > 0) spec.image_size = image_size;
  spec.validate();
  const Scene scene = synthesize_scene(spec, out_dir);
  save_synthetic_spec(spec, (fs::path(out_dir) / "synthetic_spec.json").string());
  std::cerr << "wrote " << scene.num_views() << " views (" << spec.image_size << "x"
            << spec.image_size << ") to " << out_dir << "\n";
  return 0;
}

int cmd_make_codebook(const std::string& out_path, const std::string& mode, uint64_t seed, int E,
                      int D, const std::string& scene_dir) {
  Codebook cb;
  if (mode == "synth") {
    cb = synthesize_codebook(seed, E, D);
  } else if (mode == "patch") {
    if (scene_dir.empty()) throw config_error("make-codebook: patch mode needs --scene");
    const Scene scene = load_scene(scene_dir);
    cb = patch_prior_codebook(scene, E, D, seed);
  } else {
    throw config_error("make-codebook: mode must be synth or patch");
  }
  save_codebook(cb, out_path);
  std::cerr << "wrote " << cb.size() << "x" << cb.dim() << " codebook (" << cb.source_tag
            << ") to " << out_path << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              bool resume) {
  const RunConfig cfg = load_run_config(config_path, overrides);
  if (cfg.scene_dir.empty()) throw config_error("train: scene_dir is required");
  if (cfg.out_dir.empty()) throw config_error("train: out_dir is required");
  const Scene scene = load_scene(cfg.scene_dir);
  const FitResult result = fit_scene_auto(scene, cfg, resume);
  std::cerr << "trained " << result.steps_run << " steps; final loss " << result.last.loss
            << " batch psnr " << result.last.batch_psnr << "\n";
  std::cout << result.checkpoint_path << "\n";
  return 0;
}

template <class S>
int render_views(const FieldModel<S>& model, const RunConfig& cfg, const Scene& scene,
                 const std::vector<int>& views, int orbit, const std::string& out_dir,
                 uint64_t seed) {
  const RenderSettings rs = settings_for(cfg, scene);
  Renderer<S> renderer(model, rs);
  fs::create_directories(out_dir);
  char stem[64];
  for (int view : views) {
    if (view < 0 || view >= scene.num_views()) {
      throw invalid_argument("render: view index out of range");
    }
    const auto img = renderer.render_image(scene.cameras[view], derive_seed({seed, uint64_t(view)}));
    std::snprintf(stem, sizeof(stem), "view_%03d", view);
    write_render_outputs(img, (fs::path(out_dir) / stem).string());
    std::cerr << "rendered view " << view << "\n";
  }
  for (int k = 0; k < orbit; ++k) {
    // Orbit cameras reuse the first camera's intrinsics on a horizontal ring.
    Camera cam = scene.cameras.at(0);
    const double angle = 2.0 * M_PI * k / orbit;
    const double dist = cam.center().norm();
    const Eigen::Vector3d eye(dist * std::cos(angle), dist * std::sin(angle), 0.35 * dist);
    cam.camera_to_world.setIdentity();
    cam.camera_to_world.block<3, 3>(0, 0) = look_at_rotation(eye, Eigen::Vector3d::Zero());
    cam.camera_to_world.block<3, 1>(0, 3) = eye;
    const auto img = renderer.render_image(cam, derive_seed({seed, 0xF0 + uint64_t(k)}));
    std::snprintf(stem, sizeof(stem), "orbit_%03d", k);
    write_render_outputs(img, (fs::path(out_dir) / stem).string());
    std::cerr << "rendered orbit frame " << k << "\n";
  }
  return 0;
}

int cmd_render(const std::string& checkpoint, const std::string& scene_dir,
               std::vector<int> views, int orbit, const std::string& out_dir, uint64_t seed) {
  LoadedModel lm = load_model(checkpoint);
  const std::string sdir = scene_dir.empty() ? lm.config.scene_dir : scene_dir;
  if (sdir.empty()) throw config_error("render: no scene directory (config or --scene)");
  const Scene scene = load_scene(sdir);
  if (views.empty() && orbit == 0) views = {scene.test_split.empty() ? 0 : scene.test_split[0]};
  if (lm.f64) {
    return render_views(*lm.f64, lm.config, scene, views, orbit, out_dir, seed);
  }
  return render_views(*lm.f32, lm.config, scene, views, orbit, out_dir, seed);
}

template <class S>
MetricReport eval_model(const FieldModel<S>& model, const RunConfig& cfg, const Scene& scene,
                        const std::string& split_name, uint64_t seed) {
  const std::vector<int>& split =
      split_name == "train" ? scene.train_split : scene.test_split;
  return evaluate_scene(model, scene, split, settings_for(cfg, scene), seed);
}

int cmd_eval(const std::string& checkpoint, const std::string& scene_dir, std::string split,
             const std::string& report_path, const std::string& compare, uint64_t seed) {
  LoadedModel lm = load_model(checkpoint);
  const std::string sdir = scene_dir.empty() ? lm.config.scene_dir : scene_dir;
  if (sdir.empty()) throw config_error("eval: no scene directory (config or --scene)");
  const Scene scene = load_scene(sdir);
  if (split.empty()) split = lm.config.eval.split;

  const MetricReport report = lm.f64 ? eval_model(*lm.f64, lm.config, scene, split, seed)
                                     : eval_model(*lm.f32, lm.config, scene, split, seed);
  std::printf("mean PSNR %.3f dB  mean SSIM %.4f  (%zu views, %s split)\n", report.mean_psnr,
              report.mean_ssim, report.per_view.size(), split.c_str());

  if (!compare.empty()) {
    LoadedModel other = load_model(compare);
    const MetricReport ref = other.f64 ? eval_model(*other.f64, other.config, scene, split, seed)
                                       : eval_model(*other.f32, other.config, scene, split, seed);
    std::printf("%-8s %12s %12s %12s %12s\n", "view", "psnr", "psnr(ref)", "ssim", "ssim(ref)");
    for (size_t i = 0; i < report.per_view.size(); ++i) {
      std::printf("%-8d %12.3f %12.3f %12.4f %12.4f\n", report.per_view[i].view,
                  report.per_view[i].psnr, ref.per_view[i].psnr, report.per_view[i].ssim,
                  ref.per_view[i].ssim);
    }
    std::printf("delta    %12.3f %12s %12.4f\n", report.mean_psnr - ref.mean_psnr, "",
                report.mean_ssim - ref.mean_ssim);
  }

  if (!report_path.empty()) {
    std::ofstream out(report_path, std::ios::trunc);
    if (!out) throw io_error("eval: cannot open '" + report_path + "'");
    out << report.to_json().dump(2) << "\n";
  }
  return 0;
}

template <class S>
Eigen::VectorXd batch_sdf_eval(const FieldModel<S>& model, const Eigen::MatrixXd& pts) {
  typename FieldModel<S>::Mat sdf;
  model.eval_geometry(pts.cast<S>(), &sdf, nullptr, nullptr);
  return sdf.col(0).template cast<double>();
}

int cmd_export(const std::string& checkpoint, const std::string& what, const std::string& out,
               int grid_res, double bound, int count, uint64_t seed) {
  LoadedModel lm = load_model(checkpoint);
  if (what == "mesh") {
    Aabb box;
    box.min = Eigen::Vector3d::Constant(-bound);
    box.max = Eigen::Vector3d::Constant(bound);
    BatchSdf fn;
    if (lm.f64) {
      const auto* m = &*lm.f64;
      fn = [m](const Eigen::MatrixXd& p) { return batch_sdf_eval(*m, p); };
    } else {
      const auto* m = &*lm.f32;
      fn = [m](const Eigen::MatrixXd& p) { return batch_sdf_eval(*m, p); };
    }
    const TriangleMesh mesh = extract_mesh(fn, grid_res, box);
    write_obj(mesh, out);
    std::cerr << "wrote " << mesh.vertices.size() << " vertices, " << mesh.triangles.size()
              << " triangles to " << out << "\n";
    return 0;
  }
  if (what == "features" || what == "features-appearance") {
    // Sample points near the zero level set by projecting sphere samples
    // along the SDF gradient.
    Rng rng(derive_seed({seed, 0xFEA7ULL}));
    Eigen::MatrixXd pts(count, 3);
    for (int i = 0; i < count; ++i) {
      Eigen::Vector3d p;
      do {
        p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
      } while (p.squaredNorm() > 1.0);
      pts.row(i) = p.transpose();
    }
    auto project = [&]<class S2>(const FieldModel<S2>& model) {
      typename FieldModel<S2>::Mat sdf, grad;
      for (int iter = 0; iter < 4; ++iter) {
        model.eval_geometry(pts.cast<S2>(), &sdf, nullptr, &grad);
        for (int i = 0; i < count; ++i) {
          Eigen::Vector3d g = grad.row(i).template cast<double>();
          const double n = g.norm();
          if (n > 1e-9) pts.row(i) -= double(sdf(i, 0)) * (g / n).transpose();
        }
      }
    };
    const FeatureBranch branch =
        what == "features" ? FeatureBranch::kGeometry : FeatureBranch::kAppearance;
    Eigen::MatrixXd features;
    if (lm.f64) {
      project(*lm.f64);
      features = export_features(*lm.f64, pts, branch, out);
    } else {
      project(*lm.f32);
      features = export_features(*lm.f32, pts, branch, out);
    }
    std::cerr << "wrote " << features.rows() << " feature rows to " << out << "\n";
    return 0;
  }
  throw config_error("export: unknown target '" + what + "' (mesh | features | features-appearance)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CoCo-INR: codebook/coordinate-attention implicit neural reconstruction"};
  app.require_subcommand(1);

  // make-synthetic
  auto* mk = app.add_subcommand("make-synthetic", "Generate a synthetic calibrated scene");
  std::string mk_spec, mk_out, mk_preset = "sphere";
  int mk_views = 0, mk_size = 0;
  mk->add_option("--spec", mk_spec, "Synthetic spec JSON (overrides preset)");
  mk->add_option("--preset", mk_preset, "sphere | two_primitive")
      ->check(CLI::IsMember({"sphere", "two_primitive"}));
  mk->add_option("--out", mk_out, "Output scene directory")->required();
  mk->add_option("--views", mk_views, "Override number of views");
  mk->add_option("--size", mk_size, "Override image size");

  // make-codebook
  auto* mc = app.add_subcommand("make-codebook", "Write a CBK1 prior codebook");
  std::string mc_out, mc_mode = "synth", mc_scene;
  uint64_t mc_seed = 0;
  int mc_E = 16384, mc_D = 256;
  mc->add_option("--out", mc_out, "Output .cbk path")->required();
  mc->add_option("--mode", mc_mode, "synth | patch")->check(CLI::IsMember({"synth", "patch"}));
  mc->add_option("--seed", mc_seed, "Seed");
  mc->add_option("--entries,-E", mc_E, "Number of prototypes E");
  mc->add_option("--dim,-D", mc_D, "Prototype dimension D");
  mc->add_option("--scene", mc_scene, "Scene directory (patch mode)");

  // train
  auto* tr = app.add_subcommand("train", "Optimize a scene from a run config");
  std::string tr_config;
  std::vector<std::string> tr_set;
  bool tr_resume = false;
  tr->add_option("--config", tr_config, "Run config JSON");
  tr->add_option("--set", tr_set, "Dotted-path overrides, e.g. train.steps=500");
  tr->add_flag("--resume", tr_resume, "Continue from the rolling checkpoint");

  // render
  auto* rd = app.add_subcommand("render", "Render views from a checkpoint");
  std::string rd_ckpt, rd_scene, rd_out = ".";
  std::vector<int> rd_views;
  int rd_orbit = 0;
  uint64_t rd_seed = 0;
  rd->add_option("--checkpoint", rd_ckpt)->required();
  rd->add_option("--scene", rd_scene, "Scene directory (defaults to the checkpoint's)");
  rd->add_option("--view", rd_views, "View indices to render");
  rd->add_option("--orbit", rd_orbit, "Render an n-frame orbit");
  rd->add_option("--out", rd_out, "Output directory");
  rd->add_option("--seed", rd_seed, "Sampling seed");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate PSNR/SSIM on a split");
  std::string ev_ckpt, ev_scene, ev_split, ev_report, ev_compare;
  uint64_t ev_seed = 0;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--scene", ev_scene, "Scene directory (defaults to the checkpoint's)");
  ev->add_option("--split", ev_split, "train | test");
  ev->add_option("--report", ev_report, "Write the MetricReport JSON here");
  ev->add_option("--compare", ev_compare, "Second checkpoint for a side-by-side delta");
  ev->add_option("--seed", ev_seed, "Sampling seed");

  // export
  auto* ex = app.add_subcommand("export", "Export a mesh or feature CSV");
  std::string ex_ckpt, ex_what = "mesh", ex_out;
  int ex_grid = 128, ex_count = 1000;
  double ex_bound = 1.1;
  uint64_t ex_seed = 0;
  ex->add_option("--checkpoint", ex_ckpt)->required();
  ex->add_option("--what", ex_what, "mesh | features | features-appearance");
  ex->add_option("--out", ex_out)->required();
  ex->add_option("--grid", ex_grid, "Marching grid resolution");
  ex->add_option("--bound", ex_bound, "Half-extent of the extraction box");
  ex->add_option("--count", ex_count, "Number of feature points");
  ex->add_option("--seed", ex_seed, "Point sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    if (*mk) return cmd_make_synthetic(mk_spec, mk_out, mk_preset, mk_views, mk_size);
    if (*mc) return cmd_make_codebook(mc_out, mc_mode, mc_seed, mc_E, mc_D, mc_scene);
    if (*tr) return cmd_train(tr_config, tr_set, tr_resume);
    if (*rd) return cmd_render(rd_ckpt, rd_scene, rd_views, rd_orbit, rd_out, rd_seed);
    if (*ev) return cmd_eval(ev_ckpt, ev_scene, ev_split, ev_report, ev_compare, ev_seed);
    if (*ex) return cmd_export(ex_ckpt, ex_what, ex_out, ex_grid, ex_bound, ex_count, ex_seed);
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
