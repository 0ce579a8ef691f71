#pragma once

#include <cmath>

#include <Eigen/Dense>

namespace srblab::testing {

// Double-integrator CARE with Q = diag(q, 0), R = 1, solved by Newton-Kleinman
// iteration from a stabilizing gain; returns K = B' P.
inline Eigen::Vector2d care_double_integrator(double q) {
  Eigen::Matrix2d A;
  A << 0, 1, 0, 0;
  const Eigen::Vector2d B(0, 1);
  Eigen::Matrix2d Q = Eigen::Matrix2d::Zero();
  Q(0, 0) = q;
  Eigen::RowVector2d K(2.0 * std::sqrt(q), 4.0 * std::pow(q, 0.25));
  for (int it = 0; it < 100; ++it) {
    const Eigen::Matrix2d Ac = A - B * K;
    const Eigen::Matrix2d At = Ac.transpose();
    // vec(At P + P Ac) = (I (x) At + Ac' (x) I) vec(P), column-major vec.
    Eigen::Matrix4d L = Eigen::Matrix4d::Zero();
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        L.block<2, 2>(2 * j, 2 * j) += (i == j ? 1.0 : 0.0) * At;
        L.block<2, 2>(2 * i, 2 * j) += Ac(j, i) * Eigen::Matrix2d::Identity();
      }
    const Eigen::Matrix2d rhs = -(Q + K.transpose() * K);
    const Eigen::Vector4d p = L.fullPivLu().solve(Eigen::Map<const Eigen::Vector4d>(rhs.data()));
    const Eigen::Matrix2d P = Eigen::Map<const Eigen::Matrix2d>(p.data());
    const Eigen::RowVector2d next = B.transpose() * P;
    const bool done = (next - K).norm() <= 1e-15 * next.norm();
    K = next;
    if (done) break;
  }
  return K.transpose();
}

}  // namespace srblab::testing
