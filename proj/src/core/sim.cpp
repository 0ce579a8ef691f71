#include "srblab/sim.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <unsupported/Eigen/MatrixFunctions>

#include "srblab/error.hpp"

namespace srblab {

LQRGains lqr_gains(double alpha) {
  require(std::isfinite(alpha), "lqr_gains: alpha must be finite");
  LQRGains g;
  g.alpha = alpha;
  const double k0 = std::pow(10.0, alpha / 2.0);
  g.K = Vec2(k0, std::sqrt(2.0 * k0));
  return g;
}

LQRFilter make_lqr_filter(const LQRGains& gains, double dt) {
  require(dt > 0.0, "lqr filter: dt must be positive");
  LQRFilter f;
  f.gains = gains;
  f.dt = dt;
  Eigen::Matrix2d A;
  A << 0.0, 1.0, -gains.K[0], -gains.K[1];
  f.phi = (A * dt).exp();
  return f;
}

Particle lqr_filter_step(const Particle& s, double target, const LQRFilter& filter) {
  const Eigen::Vector2d e = filter.phi * Eigen::Vector2d(s.value - target, s.velocity);
  return {target + e[0], e[1]};
}

Particle lqr_filter_step(const Particle& s, double target, const LQRGains& gains, double dt) {
  return lqr_filter_step(s, target, make_lqr_filter(gains, dt));
}

VecX Action::vector() const {
  VecX a(kDim);
  a << landing[0], landing[1], velocity.angular, velocity.linear;
  return a;
}

Action Action::from_vector(const Eigen::Ref<const VecX>& a) {
  require(a.size() == kDim, "action: expected 10 entries");
  Action out;
  out.landing[0] = a.segment<2>(0);
  out.landing[1] = a.segment<2>(2);
  out.velocity = Twist(a.segment<3>(4), a.segment<3>(7));
  return out;
}

Twist desired_velocity(const Twist& ref_qdot, const Twist& a_v) { return ref_qdot + a_v; }

Vec6 desired_acceleration(const RigidTransform& T, const RigidTransform& T_hat, const Twist& qdot,
                          const Twist& qdot_desired, double a, double b) {
  return a * log_se3(T.inverse() * T_hat).vector() + b * (qdot_desired - qdot).vector();
}

Vec3 desired_landing_position(const RigidTransform& T, const Vec2& a_s, const Vec3& offset, const Terrain& terrain) {
  const Mat3 Ry = yaw_only(T.R());
  return proj_y(T.p() + Ry * (Vec3(a_s.x(), 0.0, a_s.y()) + offset), terrain);
}

Vec3 desired_landing_position(const SRBState& state, const Vec2& a_s, const RefSample& ref, int foot,
                              const Terrain& terrain) {
  return desired_landing_position(state.T, a_s, foot_offset(ref, foot), terrain);
}

void update_foot_states(SRBState& state, const Action& action, const RefSample& ref_next, const Terrain& terrain,
                        const LQRFilter& filter) {
  const double heading = heading_of(state.T.R());
  for (int j = 0; j < kNumFeet; ++j) {
    FootState& f = state.feet[j];
    const bool want_contact = ref_next.contact[j];
    if (f.mode == FootMode::Contact) {
      if (want_contact) continue;
      f.mode = FootMode::Swing;
      f.particles[0] = {f.position.x(), 0.0};
      f.particles[1] = {f.position.z(), 0.0};
      f.particles[2] = {wrap_angle(f.yaw - heading), 0.0};
    } else if (want_contact) {
      // Touch-down keeps the last swing pose for the whole stance.
      f.mode = FootMode::Contact;
      f.velocity.setZero();
      f.yaw_rate = 0.0;
      continue;
    }
    const Vec3 target = desired_landing_position(state, action.landing[j], ref_next, j, terrain);
    const double theta = f.particles[2].value;
    const double theta_target = theta + wrap_angle(ref_next.foot_yaw[j] - heading - theta);
    f.particles[0] = lqr_filter_step(f.particles[0], target.x(), filter);
    f.particles[1] = lqr_filter_step(f.particles[1], target.z(), filter);
    f.particles[2] = lqr_filter_step(f.particles[2], theta_target, filter);
    f.position = proj_y(Vec3(f.particles[0].value, 0.0, f.particles[1].value), terrain);
    f.velocity = Vec3(f.particles[0].velocity, 0.0, f.particles[1].velocity);
    f.yaw = heading + f.particles[2].value;
    f.yaw_rate = f.particles[2].velocity;
  }
}

double adjust_phase_rate_stride(double ref_rate, double dv, double average_speed, double beta,
                                StrideNormalization mode) {
  if (average_speed <= 0.0) return ref_rate;
  if (mode == StrideNormalization::Literal) return ref_rate * (1.0 + beta * dv * average_speed);
  return ref_rate * (1.0 + beta * dv / average_speed);
}

double adjust_phase_rate_contact(double y, double y_ref, const ReferenceSRBMotion& ref, double psi,
                                 const SimConfig& config) {
  for (int j = 0; j < kNumFeet; ++j)
    for (const auto& iv : ref.contact_intervals[j]) {
      const double since = wrap_angle(psi - iv.touch_down);
      if (since >= 0.0 && since < config.timing_window && y > y_ref + config.late_threshold) return 0.5;
      if (since < 0.0 && since >= -config.timing_window && y < y_ref - config.early_threshold) return 2.0;
    }
  return 1.0;
}

std::array<Vec3, kPointsPerFoot> foot_contact_points(const FootState& foot, const SRBCharacter& character,
                                                     const Terrain& terrain) {
  const RigidTransform F = foot.frame();
  std::array<Vec3, kPointsPerFoot> out;
  for (int k = 0; k < kPointsPerFoot; ++k) out[k] = proj_y(F.apply(character.contact_offsets[k]), terrain);
  return out;
}

Vec6 bias_wrench(const SRBCharacter& c, const RigidTransform& T, const Twist& qdot, double gravity) {
  const Vec3& w = qdot.angular;
  Vec6 b;
  b.head<3>() = w.cross(c.inertia * w);
  b.tail<3>() = c.mass * w.cross(qdot.linear) + c.mass * T.R().transpose() * Vec3(0.0, gravity, 0.0);
  return b;
}

Eigen::Matrix<double, 3, 6> point_jacobian(const RigidTransform& T, const Vec3& point) {
  const Vec3 r = T.R().transpose() * (point - T.p());
  Eigen::Matrix<double, 3, 6> J;
  J.leftCols<3>() = -T.R() * skew(r);
  J.rightCols<3>() = T.R();
  return J;
}

Vec6 spatial_momentum(const SRBCharacter& c, const SRBState& s) {
  const Vec3 L = c.mass * (s.T.R() * s.qdot.linear);
  const Vec3 H = s.T.R() * (c.inertia * s.qdot.angular) + s.T.p().cross(L);
  Vec6 out;
  out << H, L;
  return out;
}

Simulator::Simulator(SimConfig config)
    : config_(config),
      character_(build_srb_character(config.character)),
      lqr_(make_lqr_filter(lqr_gains(config.lqr_alpha), config.dt)) {
  require(config_.dt > 0.0, "sim: dt must be positive");
  require(config_.mu > 0.0, "sim: friction coefficient must be positive");
  require(config_.w_lambda > 0.0, "sim: w_lambda must be positive");
}

SRBState Simulator::reset(const ReferenceSRBMotion& ref, double psi, const Terrain& terrain) const {
  const RefSample r = sample_reference(ref, psi);
  SRBState s;
  s.T = r.T;
  s.qdot = r.qdot;
  s.psi = wrap_phase(psi);
  s.phase_rate = ref.phase_rate();
  const double heading = heading_of(r.T.R());
  for (int j = 0; j < kNumFeet; ++j) {
    FootState& f = s.feet[j];
    f.mode = r.contact[j] ? FootMode::Contact : FootMode::Swing;
    f.position = proj_y(r.foot_position[j], terrain);
    f.yaw = r.foot_yaw[j];
    f.particles[0] = {f.position.x(), 0.0};
    f.particles[1] = {f.position.z(), 0.0};
    f.particles[2] = {wrap_angle(f.yaw - heading), 0.0};
  }
  return s;
}

double Simulator::phase_rate(const SRBState& state, const ReferenceSRBMotion& ref, const Terrain& terrain,
                             double* multiplier) const {
  double rate = ref.phase_rate();
  if (config_.stride_adjustment)
    rate = adjust_phase_rate_stride(rate, state.stride_dv, ref.average_speed, config_.stride_beta, config_.stride_mode);
  double m = 1.0;
  if (config_.contact_timing_adjustment) {
    const RefSample r = sample_reference(ref, state.psi, state.ref_offset);
    // Heights are compared above the ground so that sloped terrain does not read as a missed contact.
    const double ground = proj_y(state.T.p(), terrain).y();
    m = adjust_phase_rate_contact(state.T.p().y() - ground, r.height(), ref, state.psi, config_);
  }
  if (multiplier) *multiplier = m;
  return rate * m;
}

SRBState Simulator::advance(const SRBState& state, const Action& action, const StepTargets& targets,
                            const std::optional<ExternalForce>& ext, const Terrain& terrain, StepInfo* info) {
  const double dt = config_.dt;
  const SRBCharacter& c = character_;
  const RigidTransform& T = state.T;

  const Twist qdot_d = desired_velocity(targets.now.qdot, action.velocity);
  const Vec6 qdd_d = desired_acceleration(T, targets.now.T, state.qdot, qdot_d, config_.pd_a, config_.pd_b);

  std::vector<Vec3> points;
  std::vector<FrictionBasis> bases;
  for (const auto& f : state.feet) {
    if (f.mode != FootMode::Contact) continue;
    for (const Vec3& p : foot_contact_points(f, c, terrain)) {
      points.push_back(p);
      bases.push_back(friction_basis(terrain.normal(p.x(), p.z()), config_.mu, config_.cone_edges));
    }
  }
  const int nc = static_cast<int>(points.size());
  MatX Jc(3 * nc, 6);
  for (int i = 0; i < nc; ++i) Jc.middleRows<3>(3 * i) = point_jacobian(T, points[i]);
  const MatX B = nc > 0 ? stack_friction_bases(bases) : MatX(0, 0);
  MatX Jf(0, 6);
  Vec3 Fe = Vec3::Zero();
  if (ext) {
    Jf = point_jacobian(T, ext->point);
    Fe = ext->force;
  }

  const Mat6 M = c.spatial_inertia();
  const Vec6 b = bias_wrench(c, T, state.qdot, config_.gravity);
  QPSolution sol;
  try {
    sol = solver_.solve(assemble_srb_qp(M, b, Jc, B, Jf, Fe, qdd_d, config_.w_lambda));
  } catch (const Error& e) {
    fail(e.code(), "sim step at t=" + std::to_string(state.time) + " (" + std::to_string(nc) +
                       " contact points): " + e.what());
  }
  const Vec6 qdd = sol.x.head<6>();
  const VecX lambda = sol.x.tail(sol.x.size() - 6);

  // Applied wrench in the body frame, then global force and torque about the COM.
  Vec6 W = Vec6::Zero();
  Vec3 grf = Vec3::Zero();
  double normal = 0.0;
  if (nc > 0) {
    const VecX f = B * lambda;
    W += Jc.transpose() * f;
    for (int i = 0; i < nc; ++i) {
      grf += f.segment<3>(3 * i);
      normal += bases[i].normal.dot(f.segment<3>(3 * i));
    }
  }
  if (ext) W += Jf.transpose() * Fe;
  const Mat3& R = T.R();
  const Vec3 force = R * W.tail<3>() + Vec3(0.0, -c.mass * config_.gravity, 0.0);
  const Vec3 torque = R * W.head<3>();

  // Momentum-form update: global momenta take the impulse, the position uses the
  // average velocity (exact for constant force), and the rotation the average spin.
  const Vec3 L0 = c.mass * (R * state.qdot.linear);
  const Vec3 H0 = R * (c.inertia * state.qdot.angular);
  const Vec3 L1 = L0 + dt * force;
  const Vec3 H1 = H0 + dt * torque;
  const Mat3 Iinv = c.inertia.inverse();
  const Vec3 w0 = R * state.qdot.angular;
  const Vec3 w1 = R * (Iinv * (R.transpose() * H1));
  const Mat3 R1 = exp_so3(0.5 * dt * (w0 + w1)) * R;
  const Vec3 p1 = T.p() + (0.5 * dt / c.mass) * (L0 + L1);

  SRBState next = state;
  next.T = RigidTransform::unchecked(R1, p1);
  next.qdot = Twist(Iinv * (R1.transpose() * H1), R1.transpose() * L1 / c.mass);
  next.time = state.time + dt;
  next.psi = targets.psi_next;
  update_foot_states(next, action, targets.next, terrain, lqr_);

  if (info) {
    info->qdd = qdd;
    info->qdd_desired = qdd_d;
    info->lambda = lambda;
    info->contact_force = grf;
    info->normal_force = normal;
    info->contact_points = nc;
    info->qp_iterations = sol.iterations;
  }
  return next;
}

SRBState Simulator::step(const SRBState& state, const Action& action, const ReferenceSRBMotion& ref,
                         const std::optional<ExternalForce>& ext, const Terrain& terrain, StepInfo* info) {
  double multiplier = 1.0;
  const double rate = phase_rate(state, ref, terrain, &multiplier);
  StepTargets targets;
  targets.now = sample_reference(ref, state.psi, state.ref_offset);
  double psi_next = state.psi + rate * config_.dt;
  RigidTransform offset = state.ref_offset;
  int cycle = state.cycle;
  while (psi_next >= 2.0 * M_PI) {
    psi_next -= 2.0 * M_PI;
    offset = ref.cycle_offset * offset;
    ++cycle;
  }
  targets.psi_next = psi_next;
  targets.next = sample_reference(ref, psi_next, offset);

  SRBState next = advance(state, action, targets, ext, terrain, info);
  next.phase_rate = rate;
  next.ref_offset = offset;
  next.cycle = cycle;
  const Vec3 dp = next.T.p() - state.T.p();
  const Vec3 dp_ref = targets.next.T.p() - targets.now.T.p();
  next.stride_dv = (dp - dp_ref).norm() / config_.dt;
  if (info) info->phase_multiplier = multiplier;
  return next;
}

void write_trajectory_header(std::ostream& out) {
  out << "t,psi,cycle,phase_rate,px,py,pz,qw,qx,qy,qz,wx,wy,wz,vx,vy,vz";
  for (const char* side : {"left", "right"})
    out << ',' << side << "_mode," << side << "_fx," << side << "_fy," << side << "_fz," << side << "_yaw";
  out << ",normal_force,reward,posture,end_effector\n";
}

void write_trajectory_row(std::ostream& out, const TrajectoryRow& row) {
  const SRBState& s = row.state;
  const Eigen::Vector4d q = quaternion_wxyz(s.T.R());
  out << std::setprecision(17) << s.time << ',' << s.psi << ',' << s.cycle << ',' << s.phase_rate;
  for (int i = 0; i < 3; ++i) out << ',' << s.T.p()[i];
  for (int i = 0; i < 4; ++i) out << ',' << q[i];
  for (int i = 0; i < 3; ++i) out << ',' << s.qdot.angular[i];
  for (int i = 0; i < 3; ++i) out << ',' << s.qdot.linear[i];
  for (const auto& f : s.feet) {
    out << ',' << (f.mode == FootMode::Contact ? 1 : 0);
    for (int i = 0; i < 3; ++i) out << ',' << f.position[i];
    out << ',' << f.yaw;
  }
  out << ',' << row.info.normal_force << ',' << row.reward << ',' << row.posture << ',' << row.end_effector << '\n';
}

std::vector<SRBState> read_trajectory_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open trajectory '" + path + "'");
  std::ostringstream expected;
  write_trajectory_header(expected);
  std::string line;
  std::getline(in, line);
  if (line + "\n" != expected.str()) fail(ErrorCode::Parse, "trajectory '" + path + "': unexpected header");
  std::vector<SRBState> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> v;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) {
      char* end = nullptr;
      v.push_back(std::strtod(cell.c_str(), &end));
      if (end == cell.c_str() || *end != '\0')
        fail(ErrorCode::Parse, "trajectory '" + path + "' line " + std::to_string(lineno) + ": bad number '" + cell + "'");
    }
    if (v.size() != 31)
      fail(ErrorCode::Parse, "trajectory '" + path + "' line " + std::to_string(lineno) + ": expected 31 columns");
    SRBState s;
    s.time = v[0];
    s.psi = v[1];
    s.cycle = static_cast<int>(v[2]);
    s.phase_rate = v[3];
    const Eigen::Quaterniond q(v[7], v[8], v[9], v[10]);
    s.T = RigidTransform::unchecked(q.normalized().toRotationMatrix(), Vec3(v[4], v[5], v[6]));
    s.qdot.angular = Vec3(v[11], v[12], v[13]);
    s.qdot.linear = Vec3(v[14], v[15], v[16]);
    for (int j = 0; j < kNumFeet; ++j) {
      const int b = 17 + 5 * j;
      s.feet[j].mode = v[b] != 0.0 ? FootMode::Contact : FootMode::Swing;
      s.feet[j].position = Vec3(v[b + 1], v[b + 2], v[b + 3]);
      s.feet[j].yaw = v[b + 4];
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace srblab
