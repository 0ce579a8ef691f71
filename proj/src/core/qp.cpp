#include "srblab/qp.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "srblab/error.hpp"

namespace srblab {

Eigen::Matrix<double, 3, Eigen::Dynamic> FrictionBasis::matrix() const {
  Eigen::Matrix<double, 3, Eigen::Dynamic> m(3, static_cast<int>(edges.size()));
  for (std::size_t i = 0; i < edges.size(); ++i) m.col(static_cast<int>(i)) = edges[i];
  return m;
}

FrictionBasis friction_basis(const Vec3& normal, double mu, int k, const Vec3& tangent_hint) {
  if (!(mu > 0.0)) fail(ErrorCode::InvalidInput, "friction_basis: mu must be positive");
  if (k < 3) fail(ErrorCode::InvalidInput, "friction_basis: need at least 3 edges");
  if (std::abs(normal.norm() - 1.0) > 1e-9) fail(ErrorCode::InvalidInput, "friction_basis: normal must be unit length");
  const Vec3 cross = normal.cross(tangent_hint);
  if (cross.norm() < 1e-9) fail(ErrorCode::InvalidInput, "friction_basis: tangent hint parallel to normal");
  const Vec3 t1 = cross.normalized();
  const Vec3 t2 = t1.cross(normal);
  FrictionBasis basis;
  basis.normal = normal;
  basis.mu = mu;
  basis.edges.reserve(k);
  for (int i = 0; i < k; ++i) {
    const double phi = 2.0 * std::numbers::pi * i / k;
    basis.edges.push_back((normal + mu * (std::cos(phi) * t1 + std::sin(phi) * t2)).normalized());
  }
  return basis;
}

FrictionBasis friction_basis(const Vec3& normal, double mu, int k) {
  const Vec3 hint = std::abs(normal.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  return friction_basis(normal, mu, k, hint);
}

MatX stack_friction_bases(const std::vector<FrictionBasis>& bases) {
  int cols = 0;
  for (const auto& b : bases) cols += static_cast<int>(b.edges.size());
  MatX B = MatX::Zero(3 * static_cast<int>(bases.size()), cols);
  int c = 0;
  for (std::size_t i = 0; i < bases.size(); ++i) {
    const int k = static_cast<int>(bases[i].edges.size());
    B.block(3 * static_cast<int>(i), c, 3, k) = bases[i].matrix();
    c += k;
  }
  return B;
}

KKTResiduals kkt_residuals(const QPProblem& p, const QPSolution& s) {
  KKTResiduals r;
  VecX grad = p.H * s.x + p.g - s.bound_multipliers;
  if (p.A_eq.rows() > 0) {
    grad -= p.A_eq.transpose() * s.eq_multipliers;
    r.equality = (p.A_eq * s.x - p.b_eq).cwiseAbs().maxCoeff();
  }
  r.stationarity = grad.cwiseAbs().maxCoeff();
  bool any = false;
  for (int i = 0; i < p.dim(); ++i) {
    if (!p.nonneg_mask[i]) continue;
    r.min_bounded = any ? std::min(r.min_bounded, s.x[i]) : s.x[i];
    r.min_bound_multiplier = any ? std::min(r.min_bound_multiplier, s.bound_multipliers[i]) : s.bound_multipliers[i];
    r.complementarity = std::max(r.complementarity, std::abs(s.x[i] * s.bound_multipliers[i]));
    any = true;
  }
  return r;
}

// Givens-based update of R and J after appending a constraint whose
// transformed normal is held in d_ (QuadProg-style bookkeeping).
bool QPSolver::add_constraint(int n, int& iq, double& r_norm) {
  for (int j = n - 1; j >= iq + 1; --j) {
    double cc = d_[j - 1], ss = d_[j];
    const double h = std::hypot(cc, ss);
    if (h == 0.0) continue;
    d_[j] = 0.0;
    ss /= h;
    cc /= h;
    if (cc < 0.0) {
      cc = -cc;
      ss = -ss;
      d_[j - 1] = -h;
    } else {
      d_[j - 1] = h;
    }
    const double xny = ss / (1.0 + cc);
    for (int k = 0; k < n; ++k) {
      const double t1 = J_(k, j - 1), t2 = J_(k, j);
      J_(k, j - 1) = t1 * cc + t2 * ss;
      J_(k, j) = xny * (t1 + J_(k, j - 1)) - t2;
    }
  }
  ++iq;
  for (int i = 0; i < iq; ++i) R_(i, iq - 1) = d_[i];
  if (std::abs(d_[iq - 1]) <= std::numeric_limits<double>::epsilon() * r_norm) return false;
  r_norm = std::max(r_norm, std::abs(d_[iq - 1]));
  return true;
}

void QPSolver::delete_constraint(int n, int n_eq, int& iq, int l) {
  int qq = -1;
  for (int i = n_eq; i < iq; ++i) {
    if (active_[i] == l) {
      qq = i;
      break;
    }
  }
  if (qq < 0) fail(ErrorCode::State, "qp: constraint to drop is not active");
  for (int i = qq; i < iq - 1; ++i) {
    active_[i] = active_[i + 1];
    u_[i] = u_[i + 1];
    R_.col(i) = R_.col(i + 1);
  }
  active_[iq - 1] = active_[iq];
  u_[iq - 1] = u_[iq];
  active_[iq] = 0;
  u_[iq] = 0.0;
  for (int j = 0; j < iq; ++j) R_(j, iq - 1) = 0.0;
  --iq;
  if (iq == 0) return;
  for (int j = qq; j < iq; ++j) {
    double cc = R_(j, j), ss = R_(j + 1, j);
    const double h = std::hypot(cc, ss);
    if (h == 0.0) continue;
    cc /= h;
    ss /= h;
    R_(j + 1, j) = 0.0;
    if (cc < 0.0) {
      R_(j, j) = -h;
      cc = -cc;
      ss = -ss;
    } else {
      R_(j, j) = h;
    }
    const double xny = ss / (1.0 + cc);
    for (int k = j + 1; k < iq; ++k) {
      const double t1 = R_(j, k), t2 = R_(j + 1, k);
      R_(j, k) = t1 * cc + t2 * ss;
      R_(j + 1, k) = xny * (t1 + R_(j, k)) - t2;
    }
    for (int k = 0; k < n; ++k) {
      const double t1 = J_(k, j), t2 = J_(k, j + 1);
      J_(k, j) = t1 * cc + t2 * ss;
      J_(k, j + 1) = xny * (J_(k, j) + t1) - t2;
    }
  }
}

QPSolution QPSolver::solve(const QPProblem& p) {
  const int n = p.dim();
  const int n_eq = static_cast<int>(p.A_eq.rows());
  if (n == 0) fail(ErrorCode::InvalidInput, "qp: empty problem");
  if (p.H.rows() != n || p.H.cols() != n) fail(ErrorCode::InvalidInput, "qp: hessian dimension mismatch");
  if (n_eq > 0 && (p.A_eq.cols() != n || p.b_eq.size() != n_eq))
    fail(ErrorCode::InvalidInput, "qp: equality dimension mismatch");
  if (static_cast<int>(p.nonneg_mask.size()) != n) fail(ErrorCode::InvalidInput, "qp: mask dimension mismatch");
  if (n_eq > n) fail(ErrorCode::InvalidInput, "qp: more equality rows than variables");
  if (!p.H.allFinite() || !p.g.allFinite() || !p.A_eq.allFinite() || !p.b_eq.allFinite())
    fail(ErrorCode::InvalidInput, "qp: non-finite problem data");
  if ((p.H - p.H.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, p.H.cwiseAbs().maxCoeff()))
    fail(ErrorCode::InvalidInput, "qp: hessian is not symmetric");

  std::vector<int> bounded;
  for (int i = 0; i < n; ++i)
    if (p.nonneg_mask[i]) bounded.push_back(i);
  const int n_in = static_cast<int>(bounded.size());

  Eigen::LLT<MatX> llt(p.H);
  if (llt.info() != Eigen::Success) fail(ErrorCode::InvalidInput, "qp: hessian is not positive definite");
  const MatX L = llt.matrixL();
  J_ = L.triangularView<Eigen::Lower>().solve(MatX::Identity(n, n)).transpose();
  R_ = MatX::Zero(n, n);
  d_ = VecX::Zero(n);
  z_ = VecX::Zero(n);
  r_ = VecX::Zero(n + 1);
  u_ = VecX::Zero(n + 1);
  active_.assign(n + 1, 0);

  const double c1 = p.H.trace();
  const double c2 = J_.trace();
  const double eps = std::numeric_limits<double>::epsilon();
  const double inf = std::numeric_limits<double>::infinity();
  double r_norm = 1.0;
  int iq = 0;

  VecX x = -llt.solve(p.g);

  auto update_step = [&](const VecX& np) {
    d_.noalias() = J_.transpose() * np;
    z_.setZero();
    for (int j = iq; j < n; ++j) z_ += J_.col(j) * d_[j];
    for (int i = iq - 1; i >= 0; --i) {
      double sum = 0.0;
      for (int j = i + 1; j < iq; ++j) sum += R_(i, j) * r_[j];
      r_[i] = (d_[i] - sum) / R_(i, i);
    }
  };

  for (int i = 0; i < n_eq; ++i) {
    const VecX np = p.A_eq.row(i).transpose();
    update_step(np);
    double t2 = 0.0;
    const double znp = z_.dot(np);
    if (z_.squaredNorm() > eps) t2 = (p.b_eq[i] - np.dot(x)) / znp;
    x += t2 * z_;
    u_[iq] = t2;
    for (int k = 0; k < iq; ++k) u_[k] -= t2 * r_[k];
    active_[i] = -i - 1;
    if (!add_constraint(n, iq, r_norm))
      fail(ErrorCode::Infeasible, "qp: equality constraints are linearly dependent or inconsistent");
  }
  if (n_eq > 0 && (p.A_eq * x - p.b_eq).cwiseAbs().maxCoeff() > 1e-8 * (1.0 + p.b_eq.cwiseAbs().maxCoeff()))
    fail(ErrorCode::Infeasible, "qp: equality system is infeasible");

  std::vector<int> iai(n_in);
  std::vector<char> excluded(n_in, 0);
  VecX s = VecX::Zero(n_in);
  VecX u_old(n + 1), x_old(n);
  std::vector<int> a_old(n + 1);
  for (int i = 0; i < n_in; ++i) iai[i] = i;

  int iterations = 0;
  int inner = 0;
  const int inner_cap = 50 * options_.max_iterations + 10 * n;
  int ip = 0;
  VecX np(n);

  for (;;) {  // step 1
    if (++iterations > options_.max_iterations)
      fail(ErrorCode::NonConvergence, "qp: iteration cap exceeded");
    for (int i = n_eq; i < iq; ++i) iai[active_[i]] = -1;
    double psi = 0.0;
    for (int i = 0; i < n_in; ++i) {
      excluded[i] = 0;
      s[i] = x[bounded[i]];
      psi += std::min(0.0, s[i]);
    }
    if (std::abs(psi) <= n_in * eps * c1 * c2 * 100.0) break;
    for (int i = 0; i < iq; ++i) {
      u_old[i] = u_[i];
      a_old[i] = active_[i];
    }
    x_old = x;

    bool done = false;
    bool restart = false;
    while (!restart) {  // step 2: pick the most violated constraint, lowest index on ties
      double ss = 0.0;
      for (int i = 0; i < n_in; ++i) {
        if (s[i] < ss && iai[i] != -1 && !excluded[i]) {
          ss = s[i];
          ip = i;
        }
      }
      if (ss >= 0.0) {
        done = true;
        break;
      }
      np.setZero();
      np[bounded[ip]] = 1.0;
      u_[iq] = 0.0;
      active_[iq] = ip;

      for (;;) {  // step 2a
        if (++inner > inner_cap) fail(ErrorCode::NonConvergence, "qp: inner iteration cap exceeded");
        update_step(np);
        int l = 0;
        double t1 = inf;
        for (int k = n_eq; k < iq; ++k) {
          if (r_[k] > 0.0 && u_[k] / r_[k] < t1) {
            t1 = u_[k] / r_[k];
            l = active_[k];
          }
        }
        const double t2 = z_.squaredNorm() > eps ? -s[ip] / z_.dot(np) : inf;
        const double t = std::min(t1, t2);
        if (t >= inf) fail(ErrorCode::Infeasible, "qp: no feasible point satisfies the bounds");
        if (t2 >= inf) {
          for (int k = 0; k < iq; ++k) u_[k] -= t * r_[k];
          u_[iq] += t;
          iai[l] = l;
          delete_constraint(n, n_eq, iq, l);
          continue;
        }
        x += t * z_;
        for (int k = 0; k < iq; ++k) u_[k] -= t * r_[k];
        u_[iq] += t;
        if (std::abs(t - t2) < eps) {
          if (!add_constraint(n, iq, r_norm)) {
            excluded[ip] = 1;
            delete_constraint(n, n_eq, iq, ip);
            for (int i = 0; i < n_in; ++i) iai[i] = i;
            for (int i = n_eq; i < iq; ++i) {
              active_[i] = a_old[i];
              u_[i] = u_old[i];
              iai[active_[i]] = -1;
            }
            x = x_old;
            break;  // back to step 2
          }
          iai[ip] = -1;
          restart = true;
          break;
        }
        iai[l] = l;
        delete_constraint(n, n_eq, iq, l);
        s[ip] = x[bounded[ip]];
      }
    }
    if (done) break;
  }

  QPSolution sol;
  sol.x = x;
  sol.eq_multipliers = VecX::Zero(n_eq);
  sol.bound_multipliers = VecX::Zero(n);
  for (int i = 0; i < iq; ++i) {
    if (active_[i] < 0) {
      sol.eq_multipliers[-active_[i] - 1] = u_[i];
    } else {
      const int var = bounded[active_[i]];
      sol.bound_multipliers[var] = u_[i];
      sol.active_bounds.push_back(var);
    }
  }
  sol.objective = 0.5 * x.dot(p.H * x) + p.g.dot(x);
  sol.iterations = iterations;
  return sol;
}

QPSolution solve_qp(const QPProblem& problem, QPOptions options) {
  QPSolver solver(options);
  return solver.solve(problem);
}

QPProblem assemble_srb_qp(const Mat6& M, const Vec6& b, const MatX& Jc, const MatX& B, const MatX& Jf,
                          const Vec3& Fe, const Vec6& qdd_desired, double w_lambda) {
  if (!(w_lambda > 0.0)) fail(ErrorCode::InvalidInput, "assemble_srb_qp: w_lambda must be positive");
  if (Jc.cols() != 6 && Jc.rows() != 0) fail(ErrorCode::InvalidInput, "assemble_srb_qp: contact Jacobian must have 6 columns");
  if (B.rows() != Jc.rows()) fail(ErrorCode::InvalidInput, "assemble_srb_qp: friction basis rows must match contact Jacobian");
  if (Jf.rows() != 0 && (Jf.rows() != 3 || Jf.cols() != 6))
    fail(ErrorCode::InvalidInput, "assemble_srb_qp: force Jacobian must be 3x6");
  Eigen::SelfAdjointEigenSolver<Mat6> eig(M, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff(), hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12) fail(ErrorCode::InvalidInput, "assemble_srb_qp: mass matrix is degenerate");

  const int nl = static_cast<int>(B.cols());
  const int d = 6 + nl;
  QPProblem p;
  p.H = MatX::Zero(d, d);
  p.H.topLeftCorner<6, 6>() = 2.0 * Mat6::Identity();
  if (nl > 0) p.H.bottomRightCorner(nl, nl).diagonal().setConstant(2.0 * w_lambda);
  p.g = VecX::Zero(d);
  p.g.head<6>() = -2.0 * qdd_desired;
  p.A_eq = MatX::Zero(6, d);
  p.A_eq.leftCols<6>() = M;
  if (nl > 0) p.A_eq.rightCols(nl) = -Jc.transpose() * B;
  p.b_eq = -b;
  if (Jf.rows() == 3) p.b_eq += Jf.transpose() * Fe;
  p.nonneg_mask.assign(d, false);
  for (int i = 6; i < d; ++i) p.nonneg_mask[i] = true;
  return p;
}

}  // namespace srblab
