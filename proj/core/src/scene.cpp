#include "coco/scene.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "coco/errors.hpp"

#include "json.hpp"

namespace coco {

namespace fs = std::filesystem;
using nlohmann::json;

void Camera::validate() const {
  if (width < 1 || height < 1) throw invalid_argument("camera: non-positive dimensions");
  if (intrinsics(0, 0) <= 0.0 || intrinsics(1, 1) <= 0.0) {
    throw invalid_argument("camera: focal entries must be positive");
  }
  if (std::abs(intrinsics.determinant()) < 1e-12) {
    throw invalid_argument("camera: singular intrinsics");
  }
  const Eigen::Matrix3d r = rotation();
  if ((r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-5) {
    throw invalid_argument("camera: rotation block not orthonormal within 1e-5");
  }
  const Eigen::RowVector4d bottom = camera_to_world.row(3);
  if ((bottom - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-9) {
    throw invalid_argument("camera: camera_to_world bottom row must be (0,0,0,1)");
  }
}

bool Scene::has_masks() const {
  return !masks.empty() && std::all_of(masks.begin(), masks.end(),
                                       [](const auto& m) { return m.has_value(); });
}

void Scene::validate() const {
  if (cameras.size() != images.size()) {
    throw invalid_argument("scene: cameras and images disagree");
  }
  if (!masks.empty() && masks.size() != images.size()) {
    throw invalid_argument("scene: masks and images disagree");
  }
  if (scene_radius <= 0.0) throw invalid_argument("scene: scene_radius must be > 0");
  for (size_t i = 0; i < cameras.size(); ++i) {
    cameras[i].validate();
    if (cameras[i].width != images[i].width || cameras[i].height != images[i].height) {
      throw invalid_argument("scene: image dimensions do not match camera " + std::to_string(i));
    }
    if (!masks.empty() && masks[i] &&
        (masks[i]->width != images[i].width || masks[i]->height != images[i].height)) {
      throw invalid_argument("scene: mask dimensions do not match view " + std::to_string(i));
    }
  }
  std::set<int> seen;
  for (int idx : train_split) {
    if (idx < 0 || idx >= num_views()) throw invalid_argument("scene: train index out of range");
    seen.insert(idx);
  }
  for (int idx : test_split) {
    if (idx < 0 || idx >= num_views()) throw invalid_argument("scene: test index out of range");
    if (seen.count(idx)) {
      throw invalid_argument("scene: splits overlap at view " + std::to_string(idx));
    }
  }
}

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, int rows, int cols, const std::string& what) {
  Eigen::MatrixXd m(rows, cols);
  if (!j.is_array() || int(j.size()) != rows) {
    throw format_error("scene.json: " + what + " must be a " + std::to_string(rows) + "x" +
                       std::to_string(cols) + " row-major array");
  }
  for (int r = 0; r < rows; ++r) {
    if (!j[r].is_array() || int(j[r].size()) != cols) {
      throw format_error("scene.json: " + what + " row " + std::to_string(r) + " malformed");
    }
    for (int c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

}  // namespace

Scene load_scene(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream in(root / "scene.json");
  if (!in) throw io_error("load_scene: missing '" + (root / "scene.json").string() + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw format_error("load_scene: bad scene.json: " + std::string(e.what()));
  }

  Scene scene;
  try {
    scene.normalization = matrix_from_json(doc.at("normalization"), 4, 4, "normalization");
    scene.scene_radius = doc.at("scene_radius").get<double>();
    const auto& bg = doc.at("background");
    if (bg.is_string() && bg.get<std::string>() == "field") {
      scene.background_mode = BackgroundMode::kField;
    } else if (bg.is_array() && bg.size() == 3) {
      scene.background_mode = BackgroundMode::kConstant;
      scene.background_color = {bg[0].get<double>(), bg[1].get<double>(), bg[2].get<double>()};
    } else {
      throw format_error("load_scene: background must be [r,g,b] or \"field\"");
    }

    for (const auto& view : doc.at("views")) {
      Camera cam;
      cam.intrinsics = matrix_from_json(view.at("intrinsics"), 3, 3, "intrinsics");
      cam.camera_to_world = matrix_from_json(view.at("camera_to_world"), 4, 4, "camera_to_world");
      // Normalization maps raw world coordinates into the unit-sphere frame.
      cam.camera_to_world = scene.normalization * cam.camera_to_world;
      ImageU8 img = read_png((root / view.at("image").get<std::string>()).string());
      cam.width = img.width;
      cam.height = img.height;
      scene.cameras.push_back(cam);
      scene.images.push_back(std::move(img));
      if (view.contains("mask")) {
        scene.masks.push_back(read_png_mask((root / view.at("mask").get<std::string>()).string()));
      } else {
        scene.masks.push_back(std::nullopt);
      }
    }

    const auto& splits = doc.at("splits");
    scene.train_split = splits.at("train").get<std::vector<int>>();
    scene.test_split = splits.at("test").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw format_error("load_scene: bad scene.json: " + std::string(e.what()));
  }

  scene.validate();
  return scene;
}

void write_scene(const Scene& scene, const std::string& dir) {
  scene.validate();
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root, ec);

  json doc;
  doc["normalization"] = matrix_to_json(scene.normalization);
  doc["scene_radius"] = scene.scene_radius;
  if (scene.background_mode == BackgroundMode::kField) {
    doc["background"] = "field";
  } else {
    doc["background"] = {scene.background_color.x(), scene.background_color.y(),
                         scene.background_color.z()};
  }
  doc["views"] = json::array();
  char name[64];
  for (int i = 0; i < scene.num_views(); ++i) {
    json view;
    std::snprintf(name, sizeof(name), "view_%03d.png", i);
    write_png(scene.images[i], (root / name).string());
    view["image"] = name;
    if (!scene.masks.empty() && scene.masks[i]) {
      std::snprintf(name, sizeof(name), "mask_%03d.png", i);
      write_png_mask(*scene.masks[i], (root / name).string());
      view["mask"] = name;
    }
    view["intrinsics"] = matrix_to_json(scene.cameras[i].intrinsics);
    view["camera_to_world"] = matrix_to_json(scene.cameras[i].camera_to_world);
    doc["views"].push_back(view);
  }
  doc["splits"] = {{"train", scene.train_split}, {"test", scene.test_split}};

  std::ofstream out(root / "scene.json", std::ios::trunc);
  if (!out) throw io_error("write_scene: cannot open scene.json for writing");
  out << doc.dump(2) << "\n";
  if (!out) throw io_error("write_scene: write failed");
}

}  // namespace coco
