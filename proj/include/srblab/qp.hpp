#pragma once

#include <vector>

#include "srblab/spatial.hpp"

namespace srblab {

/// Linearized friction cone: k unit edges e_i = normalize(n + mu t_i).
struct FrictionBasis {
  Vec3 normal = Vec3::UnitY();
  double mu = 0.8;
  std::vector<Vec3> edges;

  /// 3 x k matrix whose columns are the edges.
  Eigen::Matrix<double, 3, Eigen::Dynamic> matrix() const;
};

/// Tangents t_i are spaced evenly starting from the direction of normal x tangent_hint.
FrictionBasis friction_basis(const Vec3& normal, double mu, int k, const Vec3& tangent_hint);
/// Uses the global z-axis as the tangent hint (x-axis when the normal is near z).
FrictionBasis friction_basis(const Vec3& normal, double mu, int k = 4);

/// Block-diagonal (3 n_c) x (k n_c) matrix stacking one basis per contact point.
MatX stack_friction_bases(const std::vector<FrictionBasis>& bases);

/// min 1/2 x'Hx + g'x  s.t.  A_eq x = b_eq,  x_i >= 0 where nonneg_mask[i].
struct QPProblem {
  MatX H;
  VecX g;
  MatX A_eq;
  VecX b_eq;
  std::vector<bool> nonneg_mask;

  int dim() const { return static_cast<int>(g.size()); }
};

struct QPSolution {
  VecX x;
  VecX eq_multipliers;      // nu:  Hx + g = A_eq' nu + mu_bounds
  VecX bound_multipliers;   // mu_bounds, length d, zero for inactive or unmasked entries
  std::vector<int> active_bounds;
  double objective = 0.0;   // 1/2 x'Hx + g'x
  int iterations = 0;
};

struct KKTResiduals {
  double stationarity = 0.0;
  double equality = 0.0;
  double min_bounded = 0.0;      // min over masked x_i (0 when no mask)
  double min_bound_multiplier = 0.0;
  double complementarity = 0.0;  // max |x_i mu_i|
};

KKTResiduals kkt_residuals(const QPProblem& problem, const QPSolution& solution);

struct QPOptions {
  int max_iterations = 200;
};

/// Dual active-set solver (Goldfarb-Idnani) for strictly convex dense QPs.
/// Keeps its factorization buffers between calls; not shareable across threads.
class QPSolver {
 public:
  explicit QPSolver(QPOptions options = {}) : options_(options) {}

  QPSolution solve(const QPProblem& problem);

 private:
  bool add_constraint(int n, int& iq, double& r_norm);
  void delete_constraint(int n, int n_eq, int& iq, int l);

  QPOptions options_;
  MatX J_, R_;
  VecX d_, z_, r_, u_;
  std::vector<int> active_;
};

QPSolution solve_qp(const QPProblem& problem, QPOptions options = {});

/// Contact-force QP over x = (qdd, lambda):
///   M qdd + b = Jf' Fe + Jc' B lambda,  lambda >= 0,
///   minimize |qdd - qdd_d|^2 + w_lambda |lambda|^2.
QPProblem assemble_srb_qp(const Mat6& M, const Vec6& b, const MatX& Jc, const MatX& B, const MatX& Jf,
                          const Vec3& Fe, const Vec6& qdd_desired, double w_lambda);

}  // namespace srblab
