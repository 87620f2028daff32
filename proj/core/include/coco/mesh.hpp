#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

namespace coco {

struct TriangleMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<Eigen::Vector3i> triangles;

  bool empty() const { return triangles.empty(); }
};

struct Aabb {
  Eigen::Vector3d min{-1.0, -1.0, -1.0};
  Eigen::Vector3d max{1.0, 1.0, 1.0};
};

// Batched SDF evaluator: N x 3 points in, N signed distances out.
using BatchSdf = std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>;

// Marching cubes at iso-level 0 over a grid_res^3 lattice spanning `bounds`.
// Returns an empty mesh when the field has no sign change. grid_res >= 8.
TriangleMesh extract_mesh(const BatchSdf& sdf, int grid_res, const Aabb& bounds);

// ASCII OBJ with v/f records (1-based indices).
void write_obj(const TriangleMesh& mesh, const std::string& path);

}  // namespace coco
