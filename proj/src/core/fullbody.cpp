#include "srblab/fullbody.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "json_util.hpp"
#include "srblab/error.hpp"

namespace srblab {

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

using detail::json;

int axes_for(JointType t) {
  switch (t) {
    case JointType::Free:
    case JointType::Fixed: return 0;
    case JointType::Revolute: return 1;
    case JointType::Universal: return 2;
    case JointType::Spherical: return 3;
  }
  return 0;
}

JointType parse_joint_type(const std::string& s, const std::string& path) {
  if (s == "free") return JointType::Free;
  if (s == "fixed") return JointType::Fixed;
  if (s == "revolute") return JointType::Revolute;
  if (s == "universal") return JointType::Universal;
  if (s == "spherical") return JointType::Spherical;
  fail(ErrorCode::Parse, "skeleton: field '" + path + "' has unknown joint type '" + s + "'");
}

Mat3 rotate_about(const Vec3& axis, double angle) { return Eigen::AngleAxisd(angle, axis).toRotationMatrix(); }

Vec3 horizontal(const Vec3& p) { return Vec3(p.x(), 0.0, p.z()); }

Vec6 rotate6(const Mat3& R, const Vec6& v) {
  Vec6 out;
  out << R * v.head<3>(), R * v.tail<3>();
  return out;
}

RigidTransform power(const RigidTransform& D, int c) {
  RigidTransform out;
  const RigidTransform step = c >= 0 ? D : D.inverse();
  for (int i = 0; i < std::abs(c); ++i) out = step * out;
  return out;
}

SRBFrame interpolate_frame(const SRBFrame& a, const SRBFrame& b, double s) {
  SRBFrame out = a;
  if (s == 0.0) return out;
  out.psi = (1.0 - s) * a.psi + s * b.psi;
  out.T = RigidTransform::unchecked(slerp(a.T.R(), b.T.R(), s), (1.0 - s) * a.T.p() + s * b.T.p());
  out.velocity = (1.0 - s) * a.velocity + s * b.velocity;
  for (int f = 0; f < kNumFeet; ++f)
    out.feet[f] = RigidTransform::unchecked(slerp(a.feet[f].R(), b.feet[f].R(), s),
                                            (1.0 - s) * a.feet[f].p() + s * b.feet[f].p());
  return out;
}

json vec_json(const Eigen::Ref<const VecX>& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VecX vec_of(const json& j, int n, const std::string& path, const char* what) {
  if (!j.is_array() || static_cast<int>(j.size()) != n)
    fail(ErrorCode::Parse, std::string(what) + ": field '" + path + "' must hold " + std::to_string(n) + " numbers");
  VecX v(n);
  for (int i = 0; i < n; ++i) {
    if (!j[i].is_number()) fail(ErrorCode::Parse, std::string(what) + ": field '" + path + "' must hold numbers");
    v[i] = j[i].get<double>();
  }
  return v;
}

std::string read_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, std::string(what) + ": cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

const char* to_string(JointType type) {
  switch (type) {
    case JointType::Free: return "free";
    case JointType::Fixed: return "fixed";
    case JointType::Revolute: return "revolute";
    case JointType::Universal: return "universal";
    case JointType::Spherical: return "spherical";
  }
  return "?";
}

Skeleton::Skeleton(std::vector<Link> links, std::vector<ContactAttachment> contacts)
    : links_(std::move(links)), contacts_(std::move(contacts)) {
  require(!links_.empty(), "skeleton: no links");
  require(links_[0].joint == JointType::Free && links_[0].parent == -1,
          "skeleton: the first link must be the free-floating root");
  ancestor_dofs_.resize(links_.size());
  for (int i = 0; i < num_links(); ++i) {
    Link& l = links_[i];
    const std::string who = "skeleton: link '" + l.name + "'";
    if (i > 0) {
      require(l.parent >= 0 && l.parent < i, who + " must follow its parent");
      require(l.joint != JointType::Free, who + ": only the root may be free");
      ancestor_dofs_[i] = ancestor_dofs_[l.parent];
    }
    require(static_cast<int>(l.axes.size()) == axes_for(l.joint),
            who + ": " + std::to_string(axes_for(l.joint)) + " axes expected for a " + to_string(l.joint) + " joint");
    for (auto& a : l.axes) {
      require(a.norm() > 1e-9, who + ": zero joint axis");
      a.normalize();
    }
    require(l.mass > 0.0, who + ": mass must be positive");
    require((l.inertia - l.inertia.transpose()).cwiseAbs().maxCoeff() < 1e-10, who + ": inertia must be symmetric");
    require(Eigen::SelfAdjointEigenSolver<Mat3>(l.inertia).eigenvalues().minCoeff() > 0.0,
            who + ": inertia must be positive definite");
    l.dof_index = l.axes.empty() ? -1 : num_joint_dofs_;
    for (std::size_t m = 0; m < l.axes.size(); ++m) {
      ancestor_dofs_[i].push_back(num_joint_dofs_++);
      dof_link_.push_back(i);
    }
    total_mass_ += l.mass;
  }
  for (const auto& c : contacts_) {
    require(c.link >= 0 && c.link < num_links(), "skeleton: contact point on an unknown link");
    require(c.foot >= 0 && c.foot < kNumFeet && c.point >= 0 && c.point < kPointsPerFoot,
            "skeleton: contact point foot/point index out of range");
  }
  for (std::size_t a = 0; a < contacts_.size(); ++a)
    for (std::size_t b = a + 1; b < contacts_.size(); ++b)
      require(contacts_[a].foot != contacts_[b].foot || contacts_[a].point != contacts_[b].point,
              "skeleton: duplicate contact point");
}

int Skeleton::find_link(const std::string& name) const {
  for (int i = 0; i < num_links(); ++i)
    if (links_[i].name == name) return i;
  return -1;
}

int Skeleton::contact_index(int foot, int point) const {
  for (std::size_t a = 0; a < contacts_.size(); ++a)
    if (contacts_[a].foot == foot && contacts_[a].point == point) return static_cast<int>(a);
  return -1;
}

void Skeleton::require_feet() const {
  for (int f = 0; f < kNumFeet; ++f)
    for (int k = 0; k < kPointsPerFoot; ++k)
      require(contact_index(f, k) >= 0, "skeleton: every foot needs a heel and a toe contact point");
}

Skeleton default_skeleton() {
  constexpr double M = 60.0;
  std::vector<Link> links;
  auto add = [&](const std::string& name, const std::string& parent, JointType joint, std::vector<Vec3> axes,
                 const Vec3& offset, double fraction, const Vec3& com, const Vec3& dims) {
    Link l;
    l.name = name;
    l.parent = -1;
    for (std::size_t i = 0; i < links.size(); ++i)
      if (links[i].name == parent) l.parent = static_cast<int>(i);
    l.joint = joint;
    l.axes = std::move(axes);
    l.offset = offset;
    l.mass = fraction * M;
    l.com = com;
    l.inertia = box_inertia(l.mass, dims);
    links.push_back(l);
  };
  const Vec3 X = Vec3::UnitX(), Y = Vec3::UnitY(), Z = Vec3::UnitZ();
  add("pelvis", "", JointType::Free, {}, Vec3::Zero(), 0.142, Vec3::Zero(), Vec3(0.30, 0.20, 0.20));
  add("torso", "pelvis", JointType::Spherical, {X, Z, Y}, Vec3(0, 0.10, 0), 0.436, Vec3(0, 0.28, 0),
      Vec3(0.35, 0.62, 0.22));
  for (int side = 0; side < 2; ++side) {
    const double s = side == 0 ? 1.0 : -1.0;
    const std::string p = side == 0 ? "l_" : "r_";
    add(p + "upper_arm", "torso", JointType::Spherical, {X, Z, Y}, Vec3(0.20 * s, 0.42, 0), 0.028,
        Vec3(0, -0.14, 0), Vec3(0.08, 0.28, 0.08));
    add(p + "forearm", p + "upper_arm", JointType::Revolute, {-X}, Vec3(0, -0.28, 0), 0.022, Vec3(0, -0.16, 0),
        Vec3(0.07, 0.30, 0.07));
  }
  for (int side = 0; side < 2; ++side) {
    const double s = side == 0 ? 1.0 : -1.0;
    const std::string p = side == 0 ? "l_" : "r_";
    add(p + "thigh", "pelvis", JointType::Spherical, {X, Z, Y}, Vec3(0.09 * s, -0.08, 0), 0.100, Vec3(0, -0.19, 0),
        Vec3(0.14, 0.44, 0.14));
    add(p + "shank", p + "thigh", JointType::Revolute, {X}, Vec3(0, -0.44, 0), 0.0465, Vec3(0, -0.19, 0),
        Vec3(0.10, 0.43, 0.10));
    add(p + "foot", p + "shank", JointType::Universal, {X, Z}, Vec3(0, -0.43, 0), 0.0145, Vec3(0, -0.05, 0.05),
        Vec3(0.09, 0.07, 0.24));
  }
  std::vector<ContactAttachment> contacts;
  for (int f = 0; f < kNumFeet; ++f) {
    const int link = [&] {
      for (std::size_t i = 0; i < links.size(); ++i)
        if (links[i].name == (f == kLeft ? "l_foot" : "r_foot")) return static_cast<int>(i);
      return -1;
    }();
    contacts.push_back({link, f, 0, Vec3(0, -0.08, -0.06)});
    contacts.push_back({link, f, 1, Vec3(0, -0.08, 0.16)});
  }
  return Skeleton(std::move(links), std::move(contacts));
}

Skeleton parse_skeleton(const std::string& text) {
  const json j = detail::parse_json(text, "skeleton");
  detail::check_keys(j, {"links", "contact_points"}, "");
  if (!j.contains("links") || !j["links"].is_array()) fail(ErrorCode::Parse, "skeleton: field 'links' must be an array");
  std::vector<Link> links;
  auto index_of = [&](const std::string& name) {
    for (std::size_t i = 0; i < links.size(); ++i)
      if (links[i].name == name) return static_cast<int>(i);
    return -1;
  };
  for (std::size_t i = 0; i < j["links"].size(); ++i) {
    const json& lj = j["links"][i];
    const std::string path = "links[" + std::to_string(i) + "].";
    detail::check_keys(lj, {"name", "mass", "inertia", "com", "parent", "joint"}, path);
    Link l;
    l.name = detail::get_string(lj, "name", path, "");
    if (l.name.empty()) fail(ErrorCode::Parse, "skeleton: field '" + path + "name' is required");
    l.mass = detail::get_number(lj, "mass", path, 0.0);
    l.com = detail::get_vec3(lj, "com", path, Vec3::Zero());
    if (!lj.contains("inertia")) fail(ErrorCode::Parse, "skeleton: field '" + path + "inertia' is required");
    const json& ij = lj["inertia"];
    if (ij.is_array() && ij.size() == 3) {
      l.inertia = vec_of(ij, 3, path + "inertia", "skeleton").asDiagonal();
    } else {
      const VecX v = vec_of(ij, 9, path + "inertia", "skeleton");
      l.inertia = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(v.data());
    }
    const std::string parent = lj.contains("parent") && lj["parent"].is_string() ? lj["parent"].get<std::string>() : "";
    l.parent = parent.empty() ? -1 : index_of(parent);
    if (!parent.empty() && l.parent < 0)
      fail(ErrorCode::Parse, "skeleton: field '" + path + "parent' names unknown or later link '" + parent + "'");
    if (!lj.contains("joint")) fail(ErrorCode::Parse, "skeleton: field '" + path + "joint' is required");
    const json& jj = lj["joint"];
    detail::check_keys(jj, {"type", "axis", "axes", "offset"}, path + "joint.");
    l.joint = parse_joint_type(detail::get_string(jj, "type", path + "joint.", "fixed"), path + "joint.type");
    l.offset = detail::get_vec3(jj, "offset", path + "joint.", Vec3::Zero());
    if (jj.contains("axis")) l.axes.push_back(detail::get_vec3(jj, "axis", path + "joint.", Vec3::UnitX()));
    if (jj.contains("axes")) {
      if (!jj["axes"].is_array()) fail(ErrorCode::Parse, "skeleton: field '" + path + "joint.axes' must be an array");
      for (std::size_t a = 0; a < jj["axes"].size(); ++a)
        l.axes.push_back(vec_of(jj["axes"][a], 3, path + "joint.axes", "skeleton"));
    }
    links.push_back(l);
  }
  std::vector<ContactAttachment> contacts;
  if (j.contains("contact_points")) {
    if (!j["contact_points"].is_array()) fail(ErrorCode::Parse, "skeleton: field 'contact_points' must be an array");
    for (std::size_t i = 0; i < j["contact_points"].size(); ++i) {
      const json& cj = j["contact_points"][i];
      const std::string path = "contact_points[" + std::to_string(i) + "].";
      detail::check_keys(cj, {"link", "foot", "point", "position"}, path);
      ContactAttachment c;
      c.link = index_of(detail::get_string(cj, "link", path, ""));
      if (c.link < 0) fail(ErrorCode::Parse, "skeleton: field '" + path + "link' names an unknown link");
      const std::string foot = detail::get_string(cj, "foot", path, "");
      const std::string point = detail::get_string(cj, "point", path, "");
      if (foot != "left" && foot != "right") fail(ErrorCode::Parse, "skeleton: field '" + path + "foot' must be left or right");
      if (point != "heel" && point != "toe") fail(ErrorCode::Parse, "skeleton: field '" + path + "point' must be heel or toe");
      c.foot = foot == "left" ? kLeft : kRight;
      c.point = point == "heel" ? 0 : 1;
      c.position = detail::get_vec3(cj, "position", path, Vec3::Zero());
      contacts.push_back(c);
    }
  }
  try {
    return Skeleton(std::move(links), std::move(contacts));
  } catch (const Error& e) {
    fail(ErrorCode::Parse, e.what());
  }
}

Skeleton load_skeleton(const std::string& path) { return parse_skeleton(read_file(path, "skeleton")); }

std::string skeleton_json(const Skeleton& sk) {
  json j;
  j["links"] = json::array();
  for (const Link& l : sk.links()) {
    json lj;
    lj["name"] = l.name;
    lj["mass"] = l.mass;
    lj["com"] = vec_json(l.com);
    std::vector<double> I;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) I.push_back(l.inertia(r, c));
    lj["inertia"] = I;
    lj["parent"] = l.parent >= 0 ? sk.links()[l.parent].name : "";
    json jj;
    jj["type"] = to_string(l.joint);
    jj["offset"] = vec_json(l.offset);
    jj["axes"] = json::array();
    for (const auto& a : l.axes) jj["axes"].push_back(vec_json(a));
    lj["joint"] = jj;
    j["links"].push_back(lj);
  }
  j["contact_points"] = json::array();
  for (const auto& c : sk.contacts()) {
    json cj;
    cj["link"] = sk.links()[c.link].name;
    cj["foot"] = c.foot == kLeft ? "left" : "right";
    cj["point"] = c.point == 0 ? "heel" : "toe";
    cj["position"] = vec_json(c.position);
    j["contact_points"].push_back(cj);
  }
  return j.dump(2);
}

FullBodyPose FullBodyPose::zero(const Skeleton& sk) { return {RigidTransform::identity(), VecX::Zero(sk.num_joint_dofs())}; }

VecX pose_difference(const FullBodyPose& a, const FullBodyPose& b) {
  VecX d(6 + a.q.size());
  d.head<3>() = log_so3(a.base.R() * b.base.R().transpose());
  d.segment<3>(3) = a.base.p() - b.base.p();
  d.tail(a.q.size()) = a.q - b.q;
  return d;
}

FullBodyPose retract(const FullBodyPose& x, const Eigen::Ref<const VecX>& dz) {
  FullBodyPose out;
  out.base = RigidTransform::unchecked(exp_so3(dz.head<3>()) * x.base.R(), x.base.p() + dz.segment<3>(3));
  out.q = x.q + dz.tail(x.q.size());
  return out;
}

FullBodyPose transform_pose(const RigidTransform& G, const FullBodyPose& x) { return {G * x.base, x.q}; }

FullBodyPose interpolate_pose(const FullBodyPose& a, const FullBodyPose& b, double s) {
  if (s == 0.0) return a;
  if (s == 1.0) return b;
  return {RigidTransform::unchecked(slerp(a.base.R(), b.base.R(), s), (1.0 - s) * a.base.p() + s * b.base.p()),
          (1.0 - s) * a.q + s * b.q};
}

Kinematics fk(const Skeleton& sk, const FullBodyPose& x) {
  require(x.q.size() == sk.num_joint_dofs(), "fk: pose has " + std::to_string(x.q.size()) + " joint coordinates, skeleton " +
                                                 std::to_string(sk.num_joint_dofs()));
  Kinematics k;
  const int n = sk.num_links();
  k.frames.resize(n);
  k.link_com.resize(n);
  k.dof_axis.resize(sk.num_joint_dofs());
  k.dof_origin.resize(sk.num_joint_dofs());
  k.base = x.base;
  double mass = 0.0;
  for (int i = 0; i < n; ++i) {
    const Link& l = sk.links()[i];
    if (i == 0) {
      k.frames[0] = x.base;
    } else {
      const RigidTransform& P = k.frames[l.parent];
      const Vec3 origin = P.apply(l.offset);
      Mat3 R = P.R();
      for (std::size_t m = 0; m < l.axes.size(); ++m) {
        const int d = l.dof_index + static_cast<int>(m);
        k.dof_axis[d] = R * l.axes[m];
        k.dof_origin[d] = origin;
        R = R * rotate_about(l.axes[m], x.q[d]);
      }
      k.frames[i] = RigidTransform::unchecked(R, origin);
    }
    k.link_com[i] = k.frames[i].apply(l.com);
    k.com += l.mass * k.link_com[i];
    mass += l.mass;
  }
  k.com /= mass;
  for (const auto& c : sk.contacts()) k.contacts.push_back(k.frames[c.link].apply(c.position));
  return k;
}

MatX point_jacobian(const Skeleton& sk, const Kinematics& kin, int link, const Vec3& point) {
  MatX J = MatX::Zero(3, sk.num_dofs());
  J.block<3, 3>(0, 0) = -skew(point - kin.base.p());
  J.block<3, 3>(0, 3).setIdentity();
  for (int d : sk.ancestor_dofs(link)) J.col(6 + d) = kin.dof_axis[d].cross(point - kin.dof_origin[d]);
  return J;
}

MatX angular_jacobian(const Skeleton& sk, const Kinematics& kin, int link) {
  MatX J = MatX::Zero(3, sk.num_dofs());
  J.block<3, 3>(0, 0).setIdentity();
  for (int d : sk.ancestor_dofs(link)) J.col(6 + d) = kin.dof_axis[d];
  return J;
}

Mat6 crb_inertia(const Skeleton& sk, const Kinematics& kin) {
  Mat3 Ic = Mat3::Zero();
  for (int i = 0; i < sk.num_links(); ++i) {
    const Link& l = sk.links()[i];
    const Mat3& R = kin.frames[i].R();
    const Vec3 d = kin.link_com[i] - kin.com;
    Ic += R * l.inertia * R.transpose() + l.mass * (d.squaredNorm() * Mat3::Identity() - d * d.transpose());
  }
  Mat6 I = Mat6::Zero();
  I.topLeftCorner<3, 3>() = 0.5 * (Ic + Ic.transpose());
  I.bottomRightCorner<3, 3>() = sk.total_mass() * Mat3::Identity();
  return I;
}

Mat6 crb_inertia(const Skeleton& sk, const FullBodyPose& x) { return crb_inertia(sk, fk(sk, x)); }

MatX momentum_jacobian(const Skeleton& sk, const Kinematics& kin) {
  MatX J = MatX::Zero(6, sk.num_dofs());
  for (int i = 0; i < sk.num_links(); ++i) {
    const Link& l = sk.links()[i];
    const Mat3& R = kin.frames[i].R();
    const MatX Jv = point_jacobian(sk, kin, i, kin.link_com[i]);
    const MatX Jw = angular_jacobian(sk, kin, i);
    J.topRows<3>() += R * l.inertia * R.transpose() * Jw + l.mass * skew(kin.link_com[i] - kin.com) * Jv;
    J.bottomRows<3>() += l.mass * Jv;
  }
  return J;
}

MatX momentum_jacobian(const Skeleton& sk, const FullBodyPose& x) { return momentum_jacobian(sk, fk(sk, x)); }

MatX centroidal_map(const Skeleton& sk, const FullBodyPose& x) {
  const Kinematics kin = fk(sk, x);
  return crb_inertia(sk, kin).ldlt().solve(momentum_jacobian(sk, kin));
}

RigidTransform com_frame(const Skeleton& sk, const FullBodyPose& x) {
  return RigidTransform::unchecked(x.base.R(), fk(sk, x).com);
}

RigidTransform sole_frame(const Skeleton& sk, const Kinematics& kin, int foot) {
  Vec3 mean = Vec3::Zero();
  int link = -1;
  for (int k = 0; k < kPointsPerFoot; ++k) {
    const int a = sk.contact_index(foot, k);
    require(a >= 0, "sole_frame: foot lacks contact points");
    mean += kin.contacts[a] / kPointsPerFoot;
    link = sk.contacts()[a].link;
  }
  return foot_frame(heading_of(kin.frames[link].R()), mean);
}

FullBodyPose FullBodyMotion::knot(int i) const {
  const int n = size();
  const int c = static_cast<int>(std::floor(static_cast<double>(i) / n));
  const FullBodyPose& p = poses[i - c * n];
  return c == 0 ? p : transform_pose(power(cycle_offset, c), p);
}

FullBodyPose FullBodyMotion::pose(double psi) const {
  require(!poses.empty(), "full-body motion: no poses");
  const double x = wrap_phase(psi) / kTwoPi * size();
  const int i = std::min(static_cast<int>(std::floor(x)), size() - 1);
  return interpolate_pose(knot(i), knot(i + 1), std::clamp(x - i, 0.0, 1.0));
}

VecX FullBodyMotion::velocity(double psi) const {
  require(static_cast<int>(velocities.size()) == size(), "full-body motion: velocity count differs from poses");
  const double x = wrap_phase(psi) / kTwoPi * size();
  const int i = std::min(static_cast<int>(std::floor(x)), size() - 1);
  const double s = std::clamp(x - i, 0.0, 1.0);
  VecX b = velocities[(i + 1) % size()];
  if (i + 1 == size()) b.head<6>() = rotate6(cycle_offset.R(), b.head<6>());
  return s == 0.0 ? velocities[i] : VecX((1.0 - s) * velocities[i] + s * b);
}

FullBodyMotion synth_fullbody_reference(const Skeleton& sk, const ReferenceSRBMotion& ref) {
  sk.require_feet();
  const int n = ref.size();
  const auto dof = [&](const std::string& link, int m) {
    const int i = sk.find_link(link);
    require(i >= 0 && sk.links()[i].dof_index >= 0, "synth_fullbody_reference: skeleton lacks link '" + link + "'");
    return sk.links()[i].dof_index + m;
  };
  const bool humanoid = sk.find_link("torso") >= 0 && sk.find_link("l_upper_arm") >= 0;

  FullBodyMotion out;
  out.cycle_duration = ref.cycle_duration;
  out.cycle_offset = ref.cycle_offset;
  out.name = ref.name;
  out.poses.resize(n);

  MMIKWeights ik;
  ik.w_g = ik.w_m = ik.w_v = ik.w_p = 0.0;
  ik.w_r = 1e-6;
  MMIKOptions opts;
  opts.fix_base = true;
  opts.max_iterations = 200;
  opts.grad_tol = 1e-12;

  FullBodyPose warm;
  for (int i = 0; i < n; ++i) {
    const double psi = kTwoPi * i / n;
    const RefSample r = sample_reference(ref, psi);
    FullBodyPose seed = FullBodyPose::zero(sk);
    seed.base = RigidTransform::unchecked(r.T.R(), r.T.p());
    if (humanoid) {
      seed.q[dof("torso", 0)] = 0.05;
      seed.q[dof("torso", 2)] = 0.12 * std::sin(psi);
      seed.q[dof("l_upper_arm", 0)] = 0.35 * std::cos(psi);
      seed.q[dof("r_upper_arm", 0)] = -0.35 * std::cos(psi);
      seed.q[dof("l_upper_arm", 1)] = 0.12;
      seed.q[dof("r_upper_arm", 1)] = -0.12;
      seed.q[dof("l_forearm", 0)] = 0.45 - 0.1 * std::cos(psi);
      seed.q[dof("r_forearm", 0)] = 0.45 + 0.1 * std::cos(psi);
      for (const char* side : {"l_", "r_"}) {
        const std::string s = side;
        seed.q[dof(s + "thigh", 0)] = -0.2;
        seed.q[dof(s + "shank", 0)] = 0.4;
        seed.q[dof(s + "foot", 0)] = -0.2;
      }
    }

    MMIKTargets t;
    t.x_bar = seed;
    t.xdot_bar = VecX::Zero(sk.num_dofs());
    t.A = MatX::Zero(6, sk.num_dofs());
    t.contacts.resize(sk.contacts().size());
    for (std::size_t a = 0; a < sk.contacts().size(); ++a) {
      const auto& c = sk.contacts()[a];
      double lift = 0.0;
      if (!r.contact[c.foot] && !ref.contact_intervals[c.foot].empty()) {
        const auto& iv = ref.contact_intervals[c.foot][0];
        const double swing = wrap_phase(iv.touch_down - iv.lift_off);
        if (swing > 0.0) lift = 0.06 * std::sin(M_PI * wrap_phase(psi - iv.lift_off) / swing);
      }
      t.contacts[a] = foot_frame(r.foot_yaw[c.foot], r.foot_position[c.foot])
                          .apply(Vec3(c.position.x(), lift, c.position.z() - 0.05));
    }
    // Legs start from the previous knot; joints the feet do not constrain stay at the seed.
    FullBodyPose init = seed;
    if (i > 0)
      for (int d = 0; d < sk.num_joint_dofs(); ++d) {
        const std::string& name = sk.links()[sk.dof_link(d)].name;
        if (name.find("thigh") != std::string::npos || name.find("shank") != std::string::npos ||
            name.find("foot") != std::string::npos)
          init.q[d] = warm.q[d];
      }
    out.poses[i] = mmik_solve(sk, init, t, ik, opts).pose;
    warm = out.poses[i];
  }

  return motion_from_poses(std::move(out.poses), ref.cycle_duration, ref.cycle_offset, ref.name);
}

FullBodyMotion motion_from_poses(std::vector<FullBodyPose> poses, double cycle_duration,
                                 const RigidTransform& cycle_offset, std::string name) {
  require(poses.size() >= 2, "full-body motion: need at least 2 poses per cycle");
  require(cycle_duration > 0.0, "full-body motion: cycle duration must be positive");
  FullBodyMotion out;
  out.cycle_duration = cycle_duration;
  out.cycle_offset = cycle_offset;
  out.name = std::move(name);
  out.poses = std::move(poses);
  const int n = out.size();
  const double h = cycle_duration / n;
  out.velocities.resize(n);
  for (int i = 0; i < n; ++i) out.velocities[i] = pose_difference(out.knot(i + 1), out.knot(i - 1)) / (2.0 * h);
  return out;
}

SRBFrame srb_frame(const SRBState& s) {
  SRBFrame f;
  f.psi = s.psi;
  f.T = s.T;
  f.velocity << s.T.R() * s.qdot.angular, s.T.R() * s.qdot.linear;
  for (int j = 0; j < kNumFeet; ++j) {
    f.feet[j] = s.feet[j].frame();
    f.contact[j] = s.feet[j].mode == FootMode::Contact;
  }
  return f;
}

BaselineMotion collect_cycles(const std::vector<SRBState>& traj, int knots) {
  require(knots >= 2, "collect_cycles: need at least 2 knots");
  require(traj.size() >= 2, "collect_cycles: trajectory too short");
  std::vector<double> unwrapped(traj.size());
  for (std::size_t k = 0; k < traj.size(); ++k) {
    unwrapped[k] = kTwoPi * traj[k].cycle + traj[k].psi;
    if (k > 0) require(unwrapped[k] >= unwrapped[k - 1], "collect_cycles: phase decreases along the trajectory");
  }
  BaselineMotion out;
  const int c0 = static_cast<int>(std::ceil(unwrapped.front() / kTwoPi - 1e-12));
  std::size_t k = 0;
  for (int c = c0; kTwoPi * (c + 1) <= unwrapped.back() + 1e-12; ++c) {
    SRBCycle cycle;
    for (int i = 0; i <= knots; ++i) {
      const double target = kTwoPi * c + kTwoPi * i / knots;
      while (k + 1 < traj.size() && unwrapped[k + 1] < target) ++k;
      const std::size_t k1 = std::min(k + 1, traj.size() - 1);
      const double span = unwrapped[k1] - unwrapped[k];
      const double s = span > 0.0 ? std::clamp((target - unwrapped[k]) / span, 0.0, 1.0) : 0.0;
      SRBFrame f = interpolate_frame(srb_frame(traj[k]), srb_frame(traj[k1]), s);
      f.psi = kTwoPi * i / knots;
      cycle.push_back(f);
    }
    out.cycles.push_back(std::move(cycle));
  }
  if (out.cycles.empty()) fail(ErrorCode::InvalidInput, "collect_cycles: trajectory holds no complete gait cycle");
  return out;
}

SRBCycle srb_cycle_from_fullbody(const Skeleton& sk, const FullBodyMotion& m) {
  sk.require_feet();
  const int n = m.size();
  SRBCycle out;
  for (int i = 0; i <= n; ++i) {
    const FullBodyPose x = m.knot(i);
    VecX xdot = m.velocities[i % n];
    if (i == n) xdot.head<6>() = rotate6(m.cycle_offset.R(), xdot.head<6>());
    const Kinematics kin = fk(sk, x);
    SRBFrame f;
    f.psi = kTwoPi * i / n;
    f.T = RigidTransform::unchecked(x.base.R(), kin.com);
    f.velocity = crb_inertia(sk, kin).ldlt().solve(momentum_jacobian(sk, kin) * xdot);
    for (int j = 0; j < kNumFeet; ++j) {
      f.feet[j] = sole_frame(sk, kin, j);
      f.contact[j] = f.feet[j].p().y() < 0.01;
    }
    out.push_back(f);
  }
  return out;
}

RigidTransform Alignment::transform() const { return RigidTransform::unchecked(rot_y(yaw), translation); }

Alignment align_cycle(const SRBCycle& cycle, const ReferenceSRBMotion& ref) {
  require(cycle.size() >= 3, "align_cycle: incomplete cycle");
  require(static_cast<int>(cycle.size()) == ref.size() + 1,
          "align_cycle: cycle has " + std::to_string(cycle.size()) + " frames, reference needs " +
              std::to_string(ref.size() + 1));
  const Vec3 s0 = horizontal(cycle.front().T.p()), s1 = horizontal(cycle.back().T.p());
  const Vec3 r0 = horizontal(ref.samples[0].T.p());
  const Vec3 r1 = horizontal((ref.cycle_offset * ref.samples[0].T).p());
  const Vec3 ds = s1 - s0, dr = r1 - r0;
  Alignment a;
  if (ds.norm() > 0.05 && dr.norm() > 0.05) {
    a.yaw = wrap_angle(std::atan2(dr.x(), dr.z()) - std::atan2(ds.x(), ds.z()));
  } else {
    double sn = 0.0, cs = 0.0;
    for (int i = 0; i < ref.size(); ++i) {
      const double d = heading_of(ref.samples[i].T.R()) - heading_of(cycle[i].T.R());
      sn += std::sin(d);
      cs += std::cos(d);
    }
    a.yaw = std::atan2(sn, cs);
  }
  a.translation = 0.5 * (r0 + r1) - rot_y(a.yaw) * (0.5 * (s0 + s1));
  a.translation.y() = 0.0;
  return a;
}

SRBCycle apply_alignment(const SRBCycle& cycle, const Alignment& alignment) {
  const RigidTransform G = alignment.transform();
  SRBCycle out = cycle;
  for (auto& f : out) {
    f.T = G * f.T;
    f.velocity = rotate6(G.R(), f.velocity);
    for (auto& F : f.feet) F = G * F;
  }
  return out;
}

BaselineMotion align_baseline(const BaselineMotion& sim, const ReferenceSRBMotion& ref) {
  require(!sim.cycles.empty(), "align_baseline: no complete cycle");
  BaselineMotion out;
  for (const auto& c : sim.cycles) out.cycles.push_back(apply_alignment(c, align_cycle(c, ref)));
  return out;
}

void DeltaTables::validate() const {
  require(cycles >= 1, "delta tables: cycle count must be positive");
  require(!com.empty(), "delta tables: empty");
  require(contacts.size() == com.size() && velocity.size() == com.size(), "delta tables: tables differ in length");
  for (int i = 0; i < size(); ++i) {
    bool ok = com[i].vector().allFinite() && velocity[i].allFinite();
    for (const auto& f : contacts[i])
      for (const auto& c : f) ok = ok && c.allFinite();
    require(ok, "delta tables: non-finite entry at phase index " + std::to_string(i));
  }
}

DeltaSample sample_deltas(const DeltaTables& d, double psi) {
  require(d.size() > 0, "delta tables: empty");
  const int n = d.size();
  const double x = wrap_phase(psi) / kTwoPi * n;
  const int i = std::min(static_cast<int>(std::floor(x)), n - 1);
  const int j = (i + 1) % n;
  const double s = std::clamp(x - i, 0.0, 1.0);
  DeltaSample out;
  out.com = d.com[i] * (1.0 - s) + d.com[j] * s;
  out.velocity = (1.0 - s) * d.velocity[i] + s * d.velocity[j];
  for (int f = 0; f < kNumFeet; ++f)
    for (int k = 0; k < kPointsPerFoot; ++k) out.contacts[f][k] = (1.0 - s) * d.contacts[i][f][k] + s * d.contacts[j][f][k];
  return out;
}

DeltaTables compute_deltas(const BaselineMotion& baseline, const Skeleton& sk, const FullBodyMotion& ref) {
  sk.require_feet();
  require(!baseline.cycles.empty(), "compute_deltas: baseline holds no cycle");
  const int n = ref.size();
  for (const auto& c : baseline.cycles)
    require(static_cast<int>(c.size()) >= n, "compute_deltas: baseline cycle has " + std::to_string(c.size()) +
                                                 " frames, the full-body reference " + std::to_string(n) + " knots");
  const int cn = static_cast<int>(baseline.cycles.size());
  DeltaTables out;
  out.cycles = cn;
  out.com.resize(n);
  out.contacts.resize(n);
  out.velocity.resize(n);
  for (int i = 0; i < n; ++i) {
    const FullBodyPose& x = ref.poses[i];
    const Kinematics kin = fk(sk, x);
    const RigidTransform T_ref = RigidTransform::unchecked(x.base.R(), kin.com);
    const Vec6 v_ref = crb_inertia(sk, kin).ldlt().solve(momentum_jacobian(sk, kin) * ref.velocities[i]);
    Twist com_sum;
    Vec6 vel_sum = Vec6::Zero();
    std::array<std::array<Vec3, kPointsPerFoot>, kNumFeet> c_sum{};
    for (auto& f : c_sum)
      for (auto& c : f) c.setZero();
    for (const auto& cycle : baseline.cycles) {
      const SRBFrame& b = cycle[i];
      com_sum = com_sum + log_se3(b.T.inverse() * T_ref);
      vel_sum += rotate6(yaw_only(b.T.R()).transpose(), v_ref - b.velocity);
      for (int f = 0; f < kNumFeet; ++f)
        for (int k = 0; k < kPointsPerFoot; ++k)
          c_sum[f][k] += b.feet[f].inverse().apply(kin.contacts[sk.contact_index(f, k)]);
    }
    out.com[i] = com_sum * (1.0 / cn);
    out.velocity[i] = vel_sum / cn;
    for (int f = 0; f < kNumFeet; ++f)
      for (int k = 0; k < kPointsPerFoot; ++k) out.contacts[i][f][k] = c_sum[f][k] / cn;
  }
  out.validate();
  return out;
}

std::string deltas_json(const DeltaTables& d) {
  d.validate();
  json j;
  j["format"] = "srblab-deltas";
  j["version"] = 1;
  j["cycles"] = d.cycles;
  j["knots"] = d.size();
  j["phases"] = json::array();
  for (int i = 0; i < d.size(); ++i) {
    json p;
    p["index"] = i;
    p["psi"] = kTwoPi * i / d.size();
    p["com"] = vec_json(d.com[i].vector());
    json c = json::array();
    for (int f = 0; f < kNumFeet; ++f)
      for (int k = 0; k < kPointsPerFoot; ++k) c.push_back(vec_json(d.contacts[i][f][k]));
    p["contacts"] = c;
    p["velocity"] = vec_json(d.velocity[i]);
    j["phases"].push_back(p);
  }
  return j.dump(1);
}

DeltaTables parse_deltas(const std::string& text) {
  const json j = detail::parse_json(text, "delta tables");
  if (!j.is_object() || j.value("format", "") != "srblab-deltas")
    fail(ErrorCode::Parse, "delta tables: missing format tag 'srblab-deltas'");
  if (j.value("version", 0) != 1) fail(ErrorCode::Parse, "delta tables: unsupported version");
  if (!j.contains("phases") || !j["phases"].is_array() || !j.contains("cycles") || !j.contains("knots"))
    fail(ErrorCode::Parse, "delta tables: fields 'cycles', 'knots' and 'phases' are required");
  const int n = j["knots"].get<int>();
  if (n < 1 || static_cast<int>(j["phases"].size()) != n)
    fail(ErrorCode::Parse, "delta tables: 'knots' disagrees with the number of phases");
  DeltaTables d;
  d.cycles = j["cycles"].get<int>();
  d.com.resize(n);
  d.contacts.resize(n);
  d.velocity.resize(n);
  std::vector<bool> seen(n, false);
  for (int e = 0; e < n; ++e) {
    const json& p = j["phases"][e];
    const std::string path = "phases[" + std::to_string(e) + "].";
    if (!p.contains("index") || !p["index"].is_number_integer())
      fail(ErrorCode::Parse, "delta tables: field '" + path + "index' is required");
    const int i = p["index"].get<int>();
    if (i < 0 || i >= n || seen[i]) fail(ErrorCode::Parse, "delta tables: bad or repeated phase index at '" + path + "'");
    seen[i] = true;
    if (!p.contains("com") || !p.contains("velocity") || !p.contains("contacts"))
      fail(ErrorCode::Parse, "delta tables: '" + path + "' needs com, velocity and contacts");
    d.com[i] = Twist(Vec6(vec_of(p["com"], 6, path + "com", "delta tables")));
    d.velocity[i] = vec_of(p["velocity"], 6, path + "velocity", "delta tables");
    const json& c = p["contacts"];
    if (!c.is_array() || static_cast<int>(c.size()) != kNumContactPoints)
      fail(ErrorCode::Parse, "delta tables: field '" + path + "contacts' must hold 4 points");
    for (int f = 0; f < kNumFeet; ++f)
      for (int k = 0; k < kPointsPerFoot; ++k)
        d.contacts[i][f][k] = vec_of(c[f * kPointsPerFoot + k], 3, path + "contacts", "delta tables");
  }
  try {
    d.validate();
  } catch (const Error& e) {
    fail(ErrorCode::Parse, e.what());
  }
  return d;
}

void save_deltas(const DeltaTables& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "delta tables: cannot write '" + path + "'");
  out << deltas_json(d) << "\n";
}

DeltaTables load_deltas(const std::string& path) { return parse_deltas(read_file(path, "delta tables")); }

void write_pose_header(std::ostream& out, const Skeleton& sk) {
  out << "frame,time,px,py,pz,qw,qx,qy,qz";
  for (const Link& l : sk.links())
    for (std::size_t m = 0; m < l.axes.size(); ++m) out << "," << l.name << "_" << m;
  out << "\n";
}

void write_pose_row(std::ostream& out, int frame, double time, const FullBodyPose& x) {
  const Eigen::Vector4d q = quaternion_wxyz(x.base.R());
  std::ostringstream row;
  row << std::setprecision(17) << frame << "," << time;
  for (int i = 0; i < 3; ++i) row << "," << x.base.p()[i];
  for (int i = 0; i < 4; ++i) row << "," << q[i];
  for (int i = 0; i < x.q.size(); ++i) row << "," << x.q[i];
  out << row.str() << "\n";
}

std::vector<FullBodyPose> load_pose_csv(const std::string& path, const Skeleton& sk) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "pose csv: cannot open '" + path + "'");
  std::string line;
  std::getline(in, line);
  std::vector<FullBodyPose> out;
  const int cols = 9 + sk.num_joint_dofs();
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        v.push_back(std::stod(cell));
      } catch (const std::exception&) {
        fail(ErrorCode::Parse, "pose csv: line " + std::to_string(line_no) + " holds a non-number");
      }
    }
    if (static_cast<int>(v.size()) != cols)
      fail(ErrorCode::Parse, "pose csv: line " + std::to_string(line_no) + " has " + std::to_string(v.size()) +
                                 " columns, expected " + std::to_string(cols));
    const Quat q(v[5], v[6], v[7], v[8]);
    FullBodyPose x;
    x.base = RigidTransform::unchecked(q.normalized().toRotationMatrix(), Vec3(v[2], v[3], v[4]));
    x.q = Eigen::Map<const VecX>(v.data() + 9, sk.num_joint_dofs());
    out.push_back(x);
  }
  return out;
}

}  // namespace srblab
