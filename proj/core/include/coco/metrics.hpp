#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "coco/fields.hpp"
#include "coco/image.hpp"
#include "coco/rendering.hpp"
#include "coco/scene.hpp"

#include "json.hpp"

namespace coco {

// 10 log10(1 / MSE) over all channels of [0,1] images; identical images
// report the 99 dB cap.
double psnr(const ImageU8& a, const ImageU8& b);
double psnr(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);  // any [0,1] arrays

// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
// C2 = 0.03^2, computed per channel over the valid region and averaged.
// Requires min(width, height) >= 11.
double ssim(const ImageU8& a, const ImageU8& b);

struct ViewMetrics {
  int view = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::vector<ViewMetrics> per_view;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;

  nlohmann::json to_json() const;  // reserves an optional "lpips" slot
};

// Renders every view of the split and scores it against the stored image.
template <class S>
MetricReport evaluate_scene(const FieldModel<S>& model, const Scene& scene,
                            const std::vector<int>& split, const RenderSettings& rs,
                            uint64_t seed);

// Post-coordinate-attention feature vectors for the requested branch, one row
// per point: x, y, z, then the feature components. For the appearance branch
// the auxiliary inputs come from the geometry field (normal from the exact
// gradient, canonical view direction -n, geometry feature z).
enum class FeatureBranch { kGeometry, kAppearance };

template <class S>
Eigen::MatrixXd export_features(const FieldModel<S>& model, const Eigen::MatrixXd& points,
                                FeatureBranch which, const std::string& csv_path);

extern template MetricReport evaluate_scene(const FieldModel<float>&, const Scene&,
                                            const std::vector<int>&, const RenderSettings&,
                                            uint64_t);
extern template MetricReport evaluate_scene(const FieldModel<double>&, const Scene&,
                                            const std::vector<int>&, const RenderSettings&,
                                            uint64_t);
extern template Eigen::MatrixXd export_features(const FieldModel<float>&, const Eigen::MatrixXd&,
                                                FeatureBranch, const std::string&);
extern template Eigen::MatrixXd export_features(const FieldModel<double>&, const Eigen::MatrixXd&,
                                                FeatureBranch, const std::string&);

}  // namespace coco
