#include "coco/metrics.hpp"

#include <cmath>
#include <fstream>

#include "coco/errors.hpp"

namespace coco {

namespace {

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

Eigen::MatrixXd channel(const ImageU8& img, int c) {
  Eigen::MatrixXd m(img.height, img.width);
  for (int r = 0; r < img.height; ++r) {
    for (int col = 0; col < img.width; ++col) m(r, col) = img.at(r, col)[c] / 255.0;
  }
  return m;
}

}  // namespace

double psnr(const ImageU8& a, const ImageU8& b) {
  if (a.width != b.width || a.height != b.height) {
    throw invalid_argument("psnr: image shapes differ");
  }
  double sum = 0.0;
  for (size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = (a.pixels[i] - b.pixels[i]) / 255.0;
    sum += d * d;
  }
  return psnr_from_mse(sum / double(a.pixels.size()));
}

double psnr(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw invalid_argument("psnr: shapes differ");
  }
  const double mse = (a - b).array().square().mean();
  return psnr_from_mse(mse);
}

double ssim(const ImageU8& a, const ImageU8& b) {
  if (a.width != b.width || a.height != b.height) {
    throw invalid_argument("ssim: image shapes differ");
  }
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  if (a.width < kWin || a.height < kWin) {
    throw invalid_argument("ssim: image smaller than the 11x11 window");
  }

  Eigen::VectorXd kernel(kWin);
  for (int i = 0; i < kWin; ++i) {
    const double d = i - (kWin - 1) / 2.0;
    kernel[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
  }
  kernel /= kernel.sum();

  // Separable valid-region convolution.
  auto blur = [&](const Eigen::MatrixXd& m) {
    Eigen::MatrixXd tmp(m.rows(), m.cols() - kWin + 1);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c + kWin <= m.cols(); ++c) {
        tmp(r, c) = m.row(r).segment(c, kWin).dot(kernel);
      }
    }
    Eigen::MatrixXd out(m.rows() - kWin + 1, tmp.cols());
    for (Eigen::Index c = 0; c < tmp.cols(); ++c) {
      for (Eigen::Index r = 0; r + kWin <= tmp.rows(); ++r) {
        out(r, c) = tmp.col(c).segment(r, kWin).dot(kernel);
      }
    }
    return out;
  };

  const double c1 = 0.01 * 0.01;
  const double c2 = 0.03 * 0.03;
  double total = 0.0;
  for (int ch = 0; ch < 3; ++ch) {
    const Eigen::MatrixXd x = channel(a, ch);
    const Eigen::MatrixXd y = channel(b, ch);
    const Eigen::MatrixXd mu_x = blur(x);
    const Eigen::MatrixXd mu_y = blur(y);
    const Eigen::MatrixXd xx = blur(x.cwiseProduct(x)) - mu_x.cwiseProduct(mu_x);
    const Eigen::MatrixXd yy = blur(y.cwiseProduct(y)) - mu_y.cwiseProduct(mu_y);
    const Eigen::MatrixXd xy = blur(x.cwiseProduct(y)) - mu_x.cwiseProduct(mu_y);

    const auto num = (2.0 * mu_x.cwiseProduct(mu_y).array() + c1) * (2.0 * xy.array() + c2);
    const auto den = (mu_x.array().square() + mu_y.array().square() + c1) *
                     (xx.array() + yy.array() + c2);
    total += (num / den).mean();
  }
  return total / 3.0;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json doc;
  doc["per_view"] = nlohmann::json::array();
  for (const auto& v : per_view) {
    doc["per_view"].push_back({{"view", v.view}, {"psnr", v.psnr}, {"ssim", v.ssim}});
  }
  doc["mean_psnr"] = mean_psnr;
  doc["mean_ssim"] = mean_ssim;
  doc["lpips"] = nullptr;  // populated externally when a perceptual metric is available
  return doc;
}

template <class S>
MetricReport evaluate_scene(const FieldModel<S>& model, const Scene& scene,
                            const std::vector<int>& split, const RenderSettings& rs,
                            uint64_t seed) {
  if (split.empty()) throw invalid_argument("evaluate_scene: empty split");
  Renderer<S> renderer(model, rs);
  MetricReport report;
  for (int view : split) {
    if (view < 0 || view >= scene.num_views()) {
      throw invalid_argument("evaluate_scene: view index out of range");
    }
    const RenderedImage rendered =
        renderer.render_image(scene.cameras[view], derive_seed({seed, uint64_t(view)}));
    ViewMetrics vm;
    vm.view = view;
    vm.psnr = psnr(rendered.color, scene.images[view]);
    vm.ssim = ssim(rendered.color, scene.images[view]);
    report.per_view.push_back(vm);
    report.mean_psnr += vm.psnr;
    report.mean_ssim += vm.ssim;
  }
  report.mean_psnr /= double(report.per_view.size());
  report.mean_ssim /= double(report.per_view.size());
  return report;
}

template <class S>
Eigen::MatrixXd export_features(const FieldModel<S>& model, const Eigen::MatrixXd& points,
                                FeatureBranch which, const std::string& csv_path) {
  using Mat = typename ad::Tape<S>::Mat;
  if (points.cols() != 3) throw invalid_argument("export_features: points must be N x 3");
  const int n = int(points.rows());
  const Mat pts = points.cast<S>();

  Mat feats;
  if (which == FeatureBranch::kGeometry) {
    ad::Tape<S> t;
    TapeBinder<S> bind(t, model.params);
    const int protos = model.build_prototypes(t, bind, model.geometry_br);
    const auto geo = model.build_geometry(t, bind, t.constant(pts), protos);
    feats = t.val(geo.attn_features);
  } else {
    // Appearance queries need normals, features and a view direction; use
    // the geometry field's outputs and the inward direction -n.
    Mat feature, grad;
    model.eval_geometry(pts, nullptr, &feature, &grad);
    Mat normals(n, 3), dirs(n, 3);
    for (int i = 0; i < n; ++i) {
      Eigen::Vector3d g = grad.row(i).template cast<double>();
      const double norm = g.norm();
      if (norm > 1e-12) g /= norm;
      normals.row(i) = g.cast<S>().transpose();
      dirs.row(i) = (-g).cast<S>().transpose();
    }
    ad::Tape<S> t;
    TapeBinder<S> bind(t, model.params);
    const int protos = model.build_prototypes(t, bind, model.appearance_br);
    const auto app = model.build_appearance(t, bind, t.constant(pts), t.constant(normals),
                                            t.constant(dirs), t.constant(feature), protos);
    feats = t.val(app.attn_features);
  }

  Eigen::MatrixXd out(n, 3 + feats.cols());
  out.leftCols(3) = points;
  out.rightCols(feats.cols()) = feats.template cast<double>();

  if (!csv_path.empty()) {
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw io_error("export_features: cannot open '" + csv_path + "'");
    csv.precision(9);
    for (int i = 0; i < n; ++i) {
      for (Eigen::Index c = 0; c < out.cols(); ++c) {
        csv << out(i, c) << (c + 1 < out.cols() ? "," : "");
      }
      csv << "\n";
    }
    if (!csv) throw io_error("export_features: write failed for '" + csv_path + "'");
  }
  return out;
}

template MetricReport evaluate_scene(const FieldModel<float>&, const Scene&,
                                     const std::vector<int>&, const RenderSettings&, uint64_t);
template MetricReport evaluate_scene(const FieldModel<double>&, const Scene&,
                                     const std::vector<int>&, const RenderSettings&, uint64_t);
template Eigen::MatrixXd export_features(const FieldModel<float>&, const Eigen::MatrixXd&,
                                         FeatureBranch, const std::string&);
template Eigen::MatrixXd export_features(const FieldModel<double>&, const Eigen::MatrixXd&,
                                         FeatureBranch, const std::string&);

}  // namespace coco
