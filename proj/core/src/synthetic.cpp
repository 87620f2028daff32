#include "coco/synthetic.hpp"

#include <cmath>
#include <fstream>

#include "coco/errors.hpp"
#include "coco/geom.hpp"
#include "coco/rendering.hpp"

#include "json.hpp"

namespace coco {

using nlohmann::json;

SyntheticSpec SyntheticSpec::sphere_scene() {
  SyntheticSpec spec;
  SdfPrimitive sphere;
  sphere.kind = SdfPrimitive::Kind::kSphere;
  sphere.center = Eigen::Vector3d::Zero();
  sphere.half_extent = Eigen::Vector3d::Constant(0.5);
  sphere.albedo = Eigen::Vector3d(0.75, 0.72, 0.68);
  spec.primitives = {sphere};
  return spec;
}

SyntheticSpec SyntheticSpec::two_primitive_scene() {
  SyntheticSpec spec;
  SdfPrimitive sphere;
  sphere.kind = SdfPrimitive::Kind::kSphere;
  sphere.center = Eigen::Vector3d(-0.25, 0.0, 0.12);
  sphere.half_extent = Eigen::Vector3d::Constant(0.38);
  sphere.albedo = Eigen::Vector3d(0.8, 0.45, 0.3);
  SdfPrimitive box;
  box.kind = SdfPrimitive::Kind::kBox;
  box.center = Eigen::Vector3d(0.32, 0.05, -0.18);
  box.half_extent = Eigen::Vector3d(0.26, 0.3, 0.22);
  box.albedo = Eigen::Vector3d(0.35, 0.55, 0.8);
  spec.primitives = {sphere, box};
  return spec;
}

void SyntheticSpec::validate() const {
  if (primitives.empty()) throw invalid_argument("synthetic spec: no primitives");
  if (n_views < 1) throw invalid_argument("synthetic spec: n_views must be >= 1");
  if (image_size < 8) throw invalid_argument("synthetic spec: image_size must be >= 8");
  if (ambient < 0.0 || ambient > 1.0) throw invalid_argument("synthetic spec: ambient in [0,1]");
  for (const auto& prim : primitives) {
    const double reach = prim.kind == SdfPrimitive::Kind::kSphere
                             ? prim.center.norm() + prim.radius()
                             : prim.center.norm() + prim.half_extent.norm();
    if (reach > 1.0 + 1e-9) {
      throw invalid_argument("synthetic spec: primitive extends outside the unit sphere");
    }
  }
}

namespace {

double primitive_sdf(const SdfPrimitive& prim, const Eigen::Vector3d& p) {
  const Eigen::Vector3d q = p - prim.center;
  if (prim.kind == SdfPrimitive::Kind::kSphere) {
    return q.norm() - prim.radius();
  }
  // Exact box SDF.
  const Eigen::Vector3d d = q.cwiseAbs() - prim.half_extent;
  const Eigen::Vector3d outside = d.cwiseMax(0.0);
  const double inside = std::min(0.0, d.maxCoeff());
  return outside.norm() + inside;
}

}  // namespace

double analytic_sdf(const SyntheticSpec& spec, const Eigen::Vector3d& p) {
  double best = std::numeric_limits<double>::max();
  for (const auto& prim : spec.primitives) best = std::min(best, primitive_sdf(prim, p));
  return best;
}

Eigen::Vector3d analytic_albedo(const SyntheticSpec& spec, const Eigen::Vector3d& p) {
  double best = std::numeric_limits<double>::max();
  Eigen::Vector3d albedo = spec.primitives.front().albedo;
  for (const auto& prim : spec.primitives) {
    const double d = primitive_sdf(prim, p);
    if (d < best) {
      best = d;
      albedo = prim.albedo;
    }
  }
  return albedo;
}

std::optional<TraceHit> sphere_trace(const SyntheticSpec& spec, const Ray& ray) {
  if (std::abs(ray.direction.norm() - 1.0) > 1e-6) {
    throw invalid_argument("sphere_trace: direction must be unit length");
  }
  double t = ray.near;
  for (int iter = 0; iter < 512 && t <= ray.far; ++iter) {
    const Eigen::Vector3d p = ray.origin + t * ray.direction;
    const double d = analytic_sdf(spec, p);
    if (std::abs(d) < 1e-5) {
      TraceHit hit;
      hit.point = p;
      hit.depth = t;
      // Central-difference gradient of the union SDF.
      const double h = 1e-5;
      Eigen::Vector3d g;
      for (int k = 0; k < 3; ++k) {
        Eigen::Vector3d dp = Eigen::Vector3d::Zero();
        dp[k] = h;
        g[k] = (analytic_sdf(spec, p + dp) - analytic_sdf(spec, p - dp)) / (2 * h);
      }
      hit.normal = g.normalized();
      return hit;
    }
    t += d;
  }
  return std::nullopt;
}

Eigen::Vector3d lambert_shade(const Eigen::Vector3d& albedo, const Eigen::Vector3d& normal,
                              const Eigen::Vector3d& light_dir, double ambient) {
  const double diffuse = std::max(0.0, normal.dot(light_dir));
  Eigen::Vector3d rgb = albedo * (ambient + (1.0 - ambient) * diffuse);
  return rgb.cwiseMin(1.0).cwiseMax(0.0);
}

Scene synthesize_scene(const SyntheticSpec& spec, const std::string& out_dir) {
  spec.validate();
  Scene scene;
  scene.scene_radius = 1.0;
  scene.background_mode = BackgroundMode::kConstant;
  scene.background_color = spec.background_color;

  const int size = spec.image_size;
  const double focal = spec.focal_px > 0.0 ? spec.focal_px : 1.2 * size;

  for (int v = 0; v < spec.n_views; ++v) {
    Camera cam;
    cam.width = size;
    cam.height = size;
    cam.intrinsics << focal, 0, size / 2.0, 0, focal, size / 2.0, 0, 0, 1;
    const Eigen::Vector3d eye = spec.camera_distance * fibonacci_direction(v, spec.n_views);
    cam.camera_to_world.setIdentity();
    cam.camera_to_world.block<3, 3>(0, 0) = look_at_rotation(eye, Eigen::Vector3d::Zero());
    cam.camera_to_world.block<3, 1>(0, 3) = eye;

    ImageU8 img(size, size);
    MaskU8 mask(size, size);
    for (int row = 0; row < size; ++row) {
      for (int col = 0; col < size; ++col) {
        Ray ray = ray_through_pixel(cam, row, col, 0.0, spec.camera_distance + 2.0);
        const auto hit = sphere_trace(spec, ray);
        if (hit) {
          const Eigen::Vector3d albedo = analytic_albedo(spec, hit->point);
          img.set(row, col, lambert_shade(albedo, hit->normal, spec.light_dir, spec.ambient));
          mask.set(row, col, true);
        } else {
          img.set(row, col, spec.background_color);
          mask.set(row, col, false);
        }
      }
    }
    scene.cameras.push_back(cam);
    scene.images.push_back(std::move(img));
    scene.masks.push_back(std::move(mask));
    if (v % 2 == 0) {
      scene.train_split.push_back(v);
    } else {
      scene.test_split.push_back(v);
    }
  }
  if (scene.test_split.empty()) scene.test_split = scene.train_split;  // single-view corner case
  if (!out_dir.empty()) write_scene(scene, out_dir);
  return scene;
}

SyntheticSpec load_synthetic_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("load_synthetic_spec: cannot open '" + path + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw format_error("load_synthetic_spec: " + std::string(e.what()));
  }
  SyntheticSpec spec;
  try {
    if (doc.contains("preset")) {
      const std::string preset = doc["preset"].get<std::string>();
      if (preset == "sphere") {
        spec = SyntheticSpec::sphere_scene();
      } else if (preset == "two_primitive") {
        spec = SyntheticSpec::two_primitive_scene();
      } else {
        throw format_error("load_synthetic_spec: unknown preset '" + preset + "'");
      }
    }
    if (doc.contains("primitives")) {
      spec.primitives.clear();
      for (const auto& p : doc["primitives"]) {
        SdfPrimitive prim;
        const std::string kind = p.at("kind").get<std::string>();
        if (kind == "sphere") {
          prim.kind = SdfPrimitive::Kind::kSphere;
          prim.half_extent.setConstant(p.at("radius").get<double>());
        } else if (kind == "box") {
          prim.kind = SdfPrimitive::Kind::kBox;
          const auto he = p.at("half_extent").get<std::vector<double>>();
          if (he.size() != 3) throw format_error("box half_extent must have 3 entries");
          prim.half_extent = Eigen::Vector3d(he[0], he[1], he[2]);
        } else {
          throw format_error("load_synthetic_spec: unknown primitive kind '" + kind + "'");
        }
        const auto c = p.at("center").get<std::vector<double>>();
        const auto a = p.at("albedo").get<std::vector<double>>();
        if (c.size() != 3 || a.size() != 3) {
          throw format_error("center/albedo must have 3 entries");
        }
        prim.center = Eigen::Vector3d(c[0], c[1], c[2]);
        prim.albedo = Eigen::Vector3d(a[0], a[1], a[2]);
        spec.primitives.push_back(prim);
      }
    }
    if (doc.contains("light_dir")) {
      const auto l = doc["light_dir"].get<std::vector<double>>();
      if (l.size() != 3) throw format_error("light_dir must have 3 entries");
      spec.light_dir = Eigen::Vector3d(l[0], l[1], l[2]).normalized();
    }
    if (doc.contains("ambient")) spec.ambient = doc["ambient"].get<double>();
    if (doc.contains("n_views")) spec.n_views = doc["n_views"].get<int>();
    if (doc.contains("image_size")) spec.image_size = doc["image_size"].get<int>();
    if (doc.contains("camera_distance")) spec.camera_distance = doc["camera_distance"].get<double>();
    if (doc.contains("focal_px")) spec.focal_px = doc["focal_px"].get<double>();
    if (doc.contains("background_color")) {
      const auto b = doc["background_color"].get<std::vector<double>>();
      if (b.size() != 3) throw format_error("background_color must have 3 entries");
      spec.background_color = Eigen::Vector3d(b[0], b[1], b[2]);
    }
    if (doc.contains("seed")) spec.seed = doc["seed"].get<uint64_t>();
  } catch (const json::exception& e) {
    throw format_error("load_synthetic_spec: " + std::string(e.what()));
  }
  spec.validate();
  return spec;
}

void save_synthetic_spec(const SyntheticSpec& spec, const std::string& path) {
  json doc;
  doc["primitives"] = json::array();
  for (const auto& p : spec.primitives) {
    json prim;
    if (p.kind == SdfPrimitive::Kind::kSphere) {
      prim["kind"] = "sphere";
      prim["radius"] = p.radius();
    } else {
      prim["kind"] = "box";
      prim["half_extent"] = {p.half_extent.x(), p.half_extent.y(), p.half_extent.z()};
    }
    prim["center"] = {p.center.x(), p.center.y(), p.center.z()};
    prim["albedo"] = {p.albedo.x(), p.albedo.y(), p.albedo.z()};
    doc["primitives"].push_back(prim);
  }
  doc["light_dir"] = {spec.light_dir.x(), spec.light_dir.y(), spec.light_dir.z()};
  doc["ambient"] = spec.ambient;
  doc["n_views"] = spec.n_views;
  doc["image_size"] = spec.image_size;
  doc["camera_distance"] = spec.camera_distance;
  doc["focal_px"] = spec.focal_px;
  doc["background_color"] = {spec.background_color.x(), spec.background_color.y(),
                             spec.background_color.z()};
  doc["seed"] = spec.seed;

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io_error("save_synthetic_spec: cannot open '" + path + "'");
  out << doc.dump(2) << "\n";
}

}  // namespace coco
