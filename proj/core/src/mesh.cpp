#include "coco/mesh.hpp"

#include <array>
#include <cstdint>
#include <fstream>
#include <unordered_map>

#include "coco/errors.hpp"

namespace coco {

namespace {

// Cube corner offsets; corner k of the cell at (i,j,k).
constexpr int kCorner[8][3] = {
    {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1},
};

// Six-tetrahedron decomposition of a cube around the 0-6 diagonal. Every
// cell uses the same split so faces between cells match exactly.
constexpr int kTets[6][4] = {
    {0, 5, 1, 6}, {0, 1, 2, 6}, {0, 2, 3, 6}, {0, 3, 7, 6}, {0, 7, 4, 6}, {0, 4, 5, 6},
};

struct GridIndexer {
  int res;
  int64_t operator()(int x, int y, int z) const {
    return (int64_t(z) * res + y) * res + x;
  }
};

}  // namespace

TriangleMesh extract_mesh(const BatchSdf& sdf, int grid_res, const Aabb& bounds) {
  if (grid_res < 8) throw invalid_argument("extract_mesh: grid_res must be >= 8");
  for (int d = 0; d < 3; ++d) {
    if (!(bounds.min[d] < bounds.max[d])) {
      throw invalid_argument("extract_mesh: degenerate bounds");
    }
  }

  const int R = grid_res;
  const GridIndexer idx{R};
  const Eigen::Vector3d span = bounds.max - bounds.min;
  auto grid_point = [&](int x, int y, int z) -> Eigen::Vector3d {
    return bounds.min + Eigen::Vector3d(span.x() * x / (R - 1), span.y() * y / (R - 1),
                                        span.z() * z / (R - 1));
  };

  // Sample the lattice one z-slab at a time.
  std::vector<double> values(int64_t(R) * R * R);
  Eigen::MatrixXd pts(R * R, 3);
  for (int z = 0; z < R; ++z) {
    int at = 0;
    for (int y = 0; y < R; ++y) {
      for (int x = 0; x < R; ++x) {
        pts.row(at++) = grid_point(x, y, z).transpose();
      }
    }
    const Eigen::VectorXd v = sdf(pts);
    for (int k = 0; k < R * R; ++k) values[idx(k % R, k / R, z)] = v[k];
  }

  TriangleMesh mesh;
  std::unordered_map<uint64_t, int> edge_vertex;

  // Interpolated zero crossing on the lattice edge (a, b); vertices are
  // shared between all tetrahedra touching the edge.
  auto crossing = [&](int64_t ia, int64_t ib, const Eigen::Vector3d& pa,
                      const Eigen::Vector3d& pb, double fa, double fb) -> int {
    const uint64_t key = ia < ib ? (uint64_t(ia) << 32 | uint64_t(ib))
                                 : (uint64_t(ib) << 32 | uint64_t(ia));
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    const double t = fa / (fa - fb);
    const int v = int(mesh.vertices.size());
    mesh.vertices.push_back(pa + t * (pb - pa));
    edge_vertex.emplace(key, v);
    return v;
  };

  auto emit = [&](int a, int b, int c, const Eigen::Vector3d& outward) {
    const Eigen::Vector3d n = (mesh.vertices[b] - mesh.vertices[a])
                                  .cross(mesh.vertices[c] - mesh.vertices[a]);
    if (n.dot(outward) >= 0.0) {
      mesh.triangles.emplace_back(a, b, c);
    } else {
      mesh.triangles.emplace_back(a, c, b);
    }
  };

  for (int z = 0; z + 1 < R; ++z) {
    for (int y = 0; y + 1 < R; ++y) {
      for (int x = 0; x + 1 < R; ++x) {
        int64_t corner_idx[8];
        Eigen::Vector3d corner_pos[8];
        double corner_val[8];
        for (int c = 0; c < 8; ++c) {
          const int cx = x + kCorner[c][0];
          const int cy = y + kCorner[c][1];
          const int cz = z + kCorner[c][2];
          corner_idx[c] = idx(cx, cy, cz);
          corner_pos[c] = grid_point(cx, cy, cz);
          corner_val[c] = values[corner_idx[c]];
        }
        for (const auto& tet : kTets) {
          int inside[4], n_in = 0, outside[4], n_out = 0;
          for (int k = 0; k < 4; ++k) {
            if (corner_val[tet[k]] < 0.0) {
              inside[n_in++] = tet[k];
            } else {
              outside[n_out++] = tet[k];
            }
          }
          if (n_in == 0 || n_in == 4) continue;

          // Outward reference: from the mean of inside corners toward the
          // mean of outside corners (SDF increases outward).
          Eigen::Vector3d in_c = Eigen::Vector3d::Zero(), out_c = Eigen::Vector3d::Zero();
          for (int k = 0; k < n_in; ++k) in_c += corner_pos[inside[k]];
          for (int k = 0; k < n_out; ++k) out_c += corner_pos[outside[k]];
          const Eigen::Vector3d outward = out_c / n_out - in_c / n_in;

          auto cross_iv = [&](int i, int o) {
            return crossing(corner_idx[i], corner_idx[o], corner_pos[i], corner_pos[o],
                            corner_val[i], corner_val[o]);
          };

          if (n_in == 1) {
            emit(cross_iv(inside[0], outside[0]), cross_iv(inside[0], outside[1]),
                 cross_iv(inside[0], outside[2]), outward);
          } else if (n_in == 3) {
            emit(cross_iv(inside[0], outside[0]), cross_iv(inside[1], outside[0]),
                 cross_iv(inside[2], outside[0]), outward);
          } else {
            // Two in, two out: the crossing quad splits into two triangles.
            const int v00 = cross_iv(inside[0], outside[0]);
            const int v01 = cross_iv(inside[0], outside[1]);
            const int v10 = cross_iv(inside[1], outside[0]);
            const int v11 = cross_iv(inside[1], outside[1]);
            emit(v00, v01, v11, outward);
            emit(v00, v11, v10, outward);
          }
        }
      }
    }
  }
  return mesh;
}

void write_obj(const TriangleMesh& mesh, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io_error("write_obj: cannot open '" + path + "'");
  out.precision(9);
  for (const auto& v : mesh.vertices) {
    out << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
  }
  for (const auto& t : mesh.triangles) {
    out << "f " << t.x() + 1 << " " << t.y() + 1 << " " << t.z() + 1 << "\n";
  }
  if (!out) throw io_error("write_obj: write failed for '" + path + "'");
}

}  // namespace coco
