#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>

#include "srblab/error.hpp"
#include "srblab/fullbody.hpp"

namespace srblab {

namespace {

/// Inverse of the SO(3) left Jacobian: d log(exp(d) exp(phi)) / dd at d = 0.
Mat3 left_jacobian_inverse(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 W = skew(phi);
  double c;
  if (theta < 1e-4) {
    const double t2 = theta * theta;
    c = 1.0 / 12.0 + t2 / 720.0;
  } else {
    c = 1.0 / (theta * theta) - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  }
  return Mat3::Identity() - 0.5 * W + c * W * W;
}

/// Tangent difference of x against y and its Jacobian in the left perturbation of x.
void difference(const FullBodyPose& x, const FullBodyPose& y, VecX& d, MatX& D) {
  d = pose_difference(x, y);
  D = MatX::Identity(d.size(), d.size());
  D.topLeftCorner<3, 3>() = left_jacobian_inverse(d.head<3>());
}

struct Residual {
  VecX r;
  MatX J;
};

Residual residual(const Skeleton& sk, const MMIKTargets& t, const MMIKWeights& w, const FullBodyPose& x,
                  bool want_jacobian) {
  const int n = sk.num_dofs();
  const int nc = static_cast<int>(sk.contacts().size());
  const bool vel = t.x_prev.has_value();
  const int rows = 3 * nc + 6 + (vel ? 6 + 1 + n : 0) + n;
  Residual out;
  out.r = VecX::Zero(rows);
  if (want_jacobian) out.J = MatX::Zero(rows, n);

  const Kinematics kin = fk(sk, x);
  const double sc = std::sqrt(w.w_contact);
  for (int a = 0; a < nc; ++a) {
    out.r.segment<3>(3 * a) = sc * (kin.contacts[a] - t.contacts[a]);
    if (want_jacobian)
      out.J.middleRows(3 * a, 3) = sc * point_jacobian(sk, kin, sk.contacts()[a].link, kin.contacts[a]);
  }
  int row = 3 * nc;

  VecX e;
  MatX De;
  difference(x, t.x_bar, e, De);
  const double sg = std::sqrt(w.w_g);
  out.r.segment<6>(row) = sg * t.A * e;
  if (want_jacobian) out.J.middleRows(row, 6) = sg * t.A * De;
  row += 6;

  if (vel) {
    VecX d;
    MatX Dd;
    difference(x, *t.x_prev, d, Dd);
    d /= t.dt;
    Dd /= t.dt;
    const double sm = std::sqrt(w.w_m);
    out.r.segment<6>(row) = sm * (t.A * d - t.velocity);
    if (want_jacobian) out.J.middleRows(row, 6) = sm * t.A * Dd;
    row += 6;

    if (t.push && w.w_p > 0.0) {
      const double gap = t.push->threshold - t.push->direction.dot(d.segment<3>(3));
      const double sp = std::sqrt(w.w_p);
      if (gap > 0.0) {
        out.r[row] = sp * gap;
        if (want_jacobian) out.J.row(row) = -sp * t.push->direction.transpose() * Dd.middleRows(3, 3);
      }
    }
    row += 1;

    const double sv = std::sqrt(w.w_v);
    out.r.segment(row, n) = sv * (d - t.xdot_bar);
    if (want_jacobian) out.J.middleRows(row, n) = sv * Dd;
    row += n;
  }

  const double sr = std::sqrt(w.w_r);
  out.r.segment(row, n) = sr * e;
  if (want_jacobian) out.J.middleRows(row, n) = sr * De;
  return out;
}

void check_targets(const Skeleton& sk, const MMIKTargets& t, const MMIKWeights& w) {
  require(t.contacts.size() == sk.contacts().size(), "mmik: one contact target per contact point is required");
  require(t.A.rows() == 6 && t.A.cols() == sk.num_dofs(), "mmik: momentum map must be 6 x " + std::to_string(sk.num_dofs()));
  require(t.x_bar.q.size() == sk.num_joint_dofs(), "mmik: desired pose has the wrong number of joints");
  require(!t.x_prev || t.xdot_bar.size() == sk.num_dofs(), "mmik: desired velocity has the wrong size");
  require(t.dt > 0.0, "mmik: time step must be positive");
  require(w.w_contact >= 0.0 && w.w_g >= 0.0 && w.w_m >= 0.0 && w.w_p >= 0.0 && w.w_v >= 0.0 && w.w_r >= 0.0,
          "mmik: weights must be nonnegative");
  bool finite = t.velocity.allFinite() && t.A.allFinite() && t.x_bar.q.allFinite() && t.x_bar.base.p().allFinite();
  for (const auto& c : t.contacts) finite = finite && c.allFinite();
  require(finite, "mmik: targets must be finite");
}

/// Gradient norm below which a cost that no longer changes in floating point is
/// stationary: a step g / |H| lowers the cost by about |g|^2 / |H|, invisible under
/// eps * cost.
double rounding_floor(double cost, const Eigen::Ref<const MatX>& J) {
  const double h = 2.0 * J.colwise().squaredNorm().maxCoeff();
  return 4.0 * std::sqrt(std::numeric_limits<double>::epsilon() * (1.0 + cost) * h);
}

}  // namespace

double one_sided_norm(const Eigen::Ref<const VecX>& v, VecX* grad) {
  const VecX pos = v.cwiseMax(0.0);
  if (grad) *grad = 2.0 * pos;
  return pos.squaredNorm();
}

MMIKTargets build_mmik_targets(const Skeleton& sk, const SRBFrame& frame, double phase_scale, const DeltaTables& deltas,
                               const FullBodyMotion& reference, const MMIKToggles& toggles, const MMIKWeights& weights,
                               const std::optional<ExternalForce>& ext) {
  sk.require_feet();
  const DeltaSample ds = sample_deltas(deltas, frame.psi);
  const RigidTransform target = toggles.com_delta ? frame.T * exp_se3(ds.com) : frame.T;
  const FullBodyPose ref_pose = reference.pose(frame.psi);
  const RigidTransform G = target * com_frame(sk, ref_pose).inverse();

  MMIKTargets t;
  t.x_bar = transform_pose(G, ref_pose);
  t.xdot_bar = reference.velocity(frame.psi) * phase_scale;
  t.xdot_bar.head<3>() = G.R() * t.xdot_bar.head<3>();
  t.xdot_bar.segment<3>(3) = G.R() * t.xdot_bar.segment<3>(3);
  t.contacts.resize(sk.contacts().size());
  for (std::size_t a = 0; a < sk.contacts().size(); ++a) {
    const auto& c = sk.contacts()[a];
    t.contacts[a] = frame.feet[c.foot].apply(ds.contacts[c.foot][c.point]);
  }
  t.velocity = frame.velocity;
  if (toggles.velocity_delta) {
    const Mat3 Ry = yaw_only(frame.T.R());
    t.velocity.head<3>() += Ry * ds.velocity.head<3>();
    t.velocity.tail<3>() += Ry * ds.velocity.tail<3>();
  }
  t.A = centroidal_map(sk, t.x_bar);
  if (ext && ext->force.norm() > 0.0) {
    const double f = ext->force.norm();
    t.push = PushTarget{ext->force / f, weights.push_gain * f};
  }
  return t;
}

double mmik_cost(const Skeleton& sk, const MMIKTargets& t, const MMIKWeights& w, const FullBodyPose& x, VecX* grad) {
  check_targets(sk, t, w);
  const Residual res = residual(sk, t, w, x, grad != nullptr);
  if (grad) *grad = 2.0 * res.J.transpose() * res.r;
  return res.r.squaredNorm();
}

MMIKResult mmik_solve(const Skeleton& sk, const FullBodyPose& x_init, const MMIKTargets& t, const MMIKWeights& w,
                      const MMIKOptions& opt) {
  check_targets(sk, t, w);
  require(opt.max_iterations >= 0, "mmik: max_iterations must be nonnegative");
  const int n = sk.num_dofs();
  const int first = opt.fix_base ? 6 : 0;
  const int m = n - first;

  MMIKResult out;
  FullBodyPose x = x_init;
  Residual res = residual(sk, t, w, x, true);
  double cost = res.r.squaredNorm();
  out.cost_history.push_back(cost);
  double mu = 1e-6;
  for (int it = 0; it < opt.max_iterations; ++it) {
    const MatX J = res.J.rightCols(m);
    const VecX g = 2.0 * J.transpose() * res.r;
    out.grad_norm = g.norm();
    if (out.grad_norm < opt.grad_tol) {
      out.converged = true;
      break;
    }
    MatX H = J.transpose() * J;
    H.diagonal().array() += mu * (1.0 + H.diagonal().array());
    const VecX step = H.ldlt().solve(-J.transpose() * res.r);
    const double slope = g.dot(step);
    double alpha = 1.0;
    bool accepted = false;
    VecX dz = VecX::Zero(n);
    for (int ls = 0; ls < 40 && slope < 0.0; ++ls) {
      dz.tail(m) = alpha * step;
      const FullBodyPose trial = retract(x, dz);
      const Residual r_trial = residual(sk, t, w, trial, false);
      const double c_trial = r_trial.r.squaredNorm();
      if (c_trial <= cost + 1e-4 * alpha * slope) {
        x = trial;
        cost = c_trial;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    out.iterations = it + 1;
    if (!accepted) {
      out.precision_limited = true;
      out.converged = out.grad_norm < std::max(opt.grad_tol, rounding_floor(cost, J));
      break;
    }
    mu = alpha == 1.0 ? std::max(mu / 3.0, 1e-12) : std::min(mu * 4.0, 1e6);
    res = residual(sk, t, w, x, true);
    const double decrease = out.cost_history.back() - cost;
    out.cost_history.push_back(cost);
    if (decrease <= 1e-14 * (1.0 + cost)) {
      // The cost no longer changes in floating point; the gradient left over is rounding.
      out.precision_limited = true;
      out.grad_norm = (2.0 * res.J.rightCols(m).transpose() * res.r).norm();
      out.converged = out.grad_norm < std::max(opt.grad_tol, rounding_floor(cost, res.J.rightCols(m)));
      break;
    }
  }
  if (!out.converged && out.iterations == opt.max_iterations) {
    out.grad_norm = (2.0 * res.J.rightCols(m).transpose() * res.r).norm();
    out.converged = out.grad_norm < opt.grad_tol;
  }
  out.pose = x;
  out.cost = cost;
  const Kinematics kin = fk(sk, x);
  for (std::size_t a = 0; a < t.contacts.size(); ++a)
    out.contact_residual = std::max(out.contact_residual, (kin.contacts[a] - t.contacts[a]).norm());
  if (t.x_prev) {
    const VecX d = pose_difference(x, *t.x_prev) / t.dt;
    out.momentum_residual = (centroidal_map(sk, x) * d - t.velocity).norm();
  }
  return out;
}

ReconstructionReport reconstruct(const Skeleton& sk, const std::vector<SRBState>& traj,
                                 const std::vector<std::optional<ExternalForce>>& forces,
                                 const ReferenceSRBMotion& srb_ref, const FullBodyMotion& reference,
                                 const DeltaTables& deltas, const MMIKWeights& weights, const MMIKToggles& toggles,
                                 const MMIKOptions& options) {
  require(forces.empty() || forces.size() == traj.size(), "reconstruct: one force entry per frame is required");
  ReconstructionReport rep;
  std::vector<double> errors;
  double momentum_sum = 0.0;
  int momentum_count = 0;
  const double ref_rate = srb_ref.phase_rate();
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const SRBState& s = traj[k];
    const SRBFrame frame = srb_frame(s);
    const double scale = s.phase_rate > 0.0 ? s.phase_rate / ref_rate : 1.0;
    const std::optional<ExternalForce> ext = forces.empty() ? std::nullopt : forces[k];
    MMIKTargets t = build_mmik_targets(sk, frame, scale, deltas, reference, toggles, weights, ext);
    if (k > 0) {
      t.x_prev = rep.frames.back().pose;
      const double dt = s.time - traj[k - 1].time;
      t.dt = dt > 0.0 ? dt : 1.0 / 60.0;
    }
    const FullBodyPose init = k > 0 ? rep.frames.back().pose : t.x_bar;
    const MMIKResult r = mmik_solve(sk, init, t, weights, options);

    ReconstructionFrame f;
    f.time = s.time;
    f.pose = r.pose;
    f.cost = r.cost;
    f.iterations = r.iterations;
    f.converged = r.converged;
    const Kinematics kin = fk(sk, r.pose);
    for (std::size_t a = 0; a < t.contacts.size(); ++a) {
      f.contact_errors.push_back((kin.contacts[a] - t.contacts[a]).norm());
      errors.push_back(f.contact_errors.back());
    }
    if (t.x_prev) {
      const DeltaSample ds = sample_deltas(deltas, frame.psi);
      const Mat3 Ry = yaw_only(frame.T.R());
      Vec6 v = frame.velocity;
      v.head<3>() += Ry * ds.velocity.head<3>();
      v.tail<3>() += Ry * ds.velocity.tail<3>();
      const VecX d = pose_difference(r.pose, *t.x_prev) / t.dt;
      f.momentum_residual = (centroidal_map(sk, r.pose) * d - v).norm();
      momentum_sum += f.momentum_residual;
      ++momentum_count;
    }
    if (!r.converged) ++rep.nonconverged;
    rep.frames.push_back(std::move(f));
  }
  if (!errors.empty()) {
    std::sort(errors.begin(), errors.end());
    const std::size_t idx = static_cast<std::size_t>(std::ceil(0.95 * errors.size())) - 1;
    rep.contact_p95 = errors[std::min(idx, errors.size() - 1)];
    rep.contact_max = errors.back();
  }
  rep.momentum_mean = momentum_count > 0 ? momentum_sum / momentum_count : 0.0;
  return rep;
}

}  // namespace srblab
