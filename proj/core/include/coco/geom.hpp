#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace coco {

// i-th of n near-uniform directions on the unit sphere (spherical Fibonacci
// spiral).
inline Eigen::Vector3d fibonacci_direction(int i, int n) {
  const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
  const double z = n <= 1 ? 0.0 : 1.0 - (2.0 * i + 1.0) / n;
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  const double theta = 2.0 * M_PI * i / golden;
  return {r * std::cos(theta), r * std::sin(theta), z};
}

// Camera-to-world rotation for a camera at `eye` looking at `target`.
// Camera frame: x right, y down, z forward.
inline Eigen::Matrix3d look_at_rotation(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                                        const Eigen::Vector3d& up = {0.0, 0.0, 1.0}) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d right = forward.cross(up);
  if (right.norm() < 1e-8) right = forward.cross(Eigen::Vector3d(0.0, 1.0, 0.0));
  right.normalize();
  const Eigen::Vector3d down = forward.cross(right).normalized();
  Eigen::Matrix3d rot;
  rot.col(0) = right;
  rot.col(1) = down;
  rot.col(2) = forward;
  return rot;
}

}  // namespace coco
