#include "srblab/srb.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "srblab/error.hpp"

namespace srblab {

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

double smoothstep(double u) { return u * u * (3.0 - 2.0 * u); }

template <class V>
V lerp(const V& a, const V& b, double s) {
  return (1.0 - s) * a + s * b;
}

std::array<Vec3, kPointsPerFoot> foot_contacts(const SRBCharacter& c, double yaw, const Vec3& pos) {
  const RigidTransform F = foot_frame(yaw, pos);
  return {F.apply(c.contact_offsets[0]), F.apply(c.contact_offsets[1])};
}

}  // namespace

Mat3 box_inertia(double mass, const Vec3& d) {
  require(mass > 0.0, "srb character: mass must be positive");
  require(d.minCoeff() > 0.0, "srb character: box dimensions must be positive");
  const Vec3 s = d.cwiseAbs2();
  return (mass / 12.0 * Vec3(s.y() + s.z(), s.x() + s.z(), s.x() + s.y())).asDiagonal();
}

Mat6 SRBCharacter::spatial_inertia() const {
  Mat6 M = Mat6::Zero();
  M.topLeftCorner<3, 3>() = inertia;
  M.bottomRightCorner<3, 3>() = mass * Mat3::Identity();
  return M;
}

SRBCharacter build_srb_character(const SRBCharacterConfig& config) {
  require(config.mass > 0.0, "srb character: mass must be positive");
  SRBCharacter c;
  c.mass = config.mass;
  if (config.inertia) {
    const Mat3& I = *config.inertia;
    require((I - I.transpose()).cwiseAbs().maxCoeff() < 1e-10, "srb character: inertia must be symmetric");
    require(Eigen::SelfAdjointEigenSolver<Mat3>(I).eigenvalues().minCoeff() > 0.0,
            "srb character: inertia must be positive definite");
    c.inertia = I;
  } else {
    c.inertia = box_inertia(config.mass, config.box_dims);
  }
  require((config.heel - config.toe).norm() > 1e-6, "srb character: heel and toe offsets coincide");
  c.contact_offsets = {config.heel, config.toe};
  return c;
}

RigidTransform foot_frame(double yaw, const Vec3& position) { return RigidTransform::unchecked(rot_y(yaw), position); }

bool ContactInterval::contains(double psi) const {
  psi = wrap_phase(psi);
  if (touch_down <= lift_off) return psi >= touch_down && psi < lift_off;
  return psi >= touch_down || psi < lift_off;
}

double ReferenceSRBMotion::phase_rate() const { return kTwoPi / cycle_duration; }

bool ReferenceSRBMotion::in_contact(int foot, double psi) const {
  for (const auto& iv : contact_intervals[foot])
    if (iv.contains(psi)) return true;
  return false;
}

void ReferenceSRBMotion::validate() const {
  require(!samples.empty(), "reference motion: no samples");
  require(cycle_duration > 0.0 && sample_rate > 0.0, "reference motion: cycle_duration and sample_rate must be positive");
  require(average_speed >= 0.0, "reference motion: average_speed must be nonnegative");
  const int n = size();
  require(std::abs(cycle_duration * sample_rate - n) < 1e-6,
          "reference motion: sample count does not match cycle_duration * sample_rate");
  for (int i = 0; i < n; ++i) {
    require(std::abs(samples[i].psi - kTwoPi * i / n) < 1e-9, "reference motion: samples are not uniform in phase");
    require(is_rotation(samples[i].T.R(), 1e-6), "reference motion: sample rotation is not orthonormal");
  }
  require(is_rotation(cycle_offset.R(), 1e-6), "reference motion: cycle_offset rotation is not orthonormal");
  for (int f = 0; f < kNumFeet; ++f) {
    const auto& ivs = contact_intervals[f];
    for (const auto& iv : ivs)
      require(iv.touch_down >= 0.0 && iv.touch_down < kTwoPi && iv.lift_off >= 0.0 && iv.lift_off <= kTwoPi &&
                  iv.touch_down != iv.lift_off,
              "reference motion: contact interval outside [0, 2 pi)");
    // Overlap check on a fine grid is exact enough for half-open intervals at knot resolution.
    for (int i = 0; i < 4 * n; ++i) {
      const double psi = kTwoPi * (i + 0.5) / (4 * n);
      int count = 0;
      for (const auto& iv : ivs) count += iv.contains(psi);
      require(count <= 1, "reference motion: overlapping contact intervals");
    }
    for (int i = 0; i < n; ++i) {
      const int j = (i + 1) % n;
      if (!in_contact(f, samples[i].psi) || !in_contact(f, j == 0 ? kTwoPi - 1e-12 : samples[j].psi)) continue;
      bool same = false;
      for (const auto& iv : ivs) same = same || (iv.contains(samples[i].psi) && iv.contains(samples[j].psi));
      if (!same) continue;
      for (int k = 0; k < kPointsPerFoot; ++k) {
        Vec3 next = samples[j].feet[f].contacts[k];
        if (j == 0) next = cycle_offset.apply(next);
        require((next - samples[i].feet[f].contacts[k]).norm() < 1e-6,
                "reference motion: contact point moves during stance");
      }
    }
  }
}

RefSample sample_reference(const ReferenceSRBMotion& motion, double psi) {
  require(!motion.samples.empty(), "reference motion: no samples");
  const int n = motion.size();
  psi = wrap_phase(psi);
  const double x = psi / kTwoPi * n;
  int i = std::min(static_cast<int>(std::floor(x)), n - 1);
  const double s = std::clamp(x - i, 0.0, 1.0);
  const RefKnot& a = motion.samples[i];
  RefKnot b = motion.samples[(i + 1) % n];
  if (i + 1 == n) {
    b.T = motion.cycle_offset * b.T;
    for (auto& f : b.feet) {
      f.position = motion.cycle_offset.apply(f.position);
      for (auto& c : f.contacts) c = motion.cycle_offset.apply(c);
    }
  }

  RefSample out;
  if (s == 0.0) {
    out.T = a.T;
    out.qdot = a.qdot;
  } else {
    out.T = RigidTransform::unchecked(slerp(a.T.R(), b.T.R(), s), lerp(a.T.p(), b.T.p(), s));
    out.qdot = Twist(lerp(a.qdot.vector(), b.qdot.vector(), s));
  }
  const double heading = heading_of(out.T.R());
  for (int f = 0; f < kNumFeet; ++f) {
    const auto& fa = a.feet[f];
    const auto& fb = b.feet[f];
    out.contact[f] = motion.in_contact(f, psi);
    out.foot_position[f] = s == 0.0 ? fa.position : lerp(fa.position, fb.position, s);
    const double rel = s == 0.0 ? fa.yaw : fa.yaw + s * wrap_angle(fb.yaw - fa.yaw);
    out.foot_yaw[f] = heading + rel;
    out.foot_rotation[f] = rot_y(out.foot_yaw[f]);
    for (int k = 0; k < kPointsPerFoot; ++k)
      out.contacts[f][k] = s == 0.0 ? fa.contacts[k] : lerp(fa.contacts[k], fb.contacts[k], s);
  }
  return out;
}

RefSample sample_reference(const ReferenceSRBMotion& motion, double psi, const RigidTransform& offset) {
  RefSample out = sample_reference(motion, psi);
  out.T = offset * out.T;
  const double turn = heading_of(offset.R());
  for (int f = 0; f < kNumFeet; ++f) {
    out.foot_position[f] = offset.apply(out.foot_position[f]);
    out.foot_yaw[f] += turn;
    out.foot_rotation[f] = rot_y(out.foot_yaw[f]);
    for (auto& c : out.contacts[f]) c = offset.apply(c);
  }
  return out;
}

Vec3 foot_offset(const RefSample& sample, int foot) {
  const Mat3 Ry = yaw_only(sample.T.R());
  return Ry.transpose() * (sample.foot_position[foot] - proj_y(sample.T.p()));
}

Vec3 foot_offset(const ReferenceSRBMotion& motion, double psi, int foot) {
  return foot_offset(sample_reference(motion, psi), foot);
}

SynthParams default_synth_params(GaitKind kind) {
  SynthParams p;
  p.kind = kind;
  switch (kind) {
    case GaitKind::InPlaceStep:
      p.speed = 0.0;
      p.cycle_duration = 1.0;
      break;
    case GaitKind::Walk:
      p.speed = 1.0;
      p.cycle_duration = 1.2;
      break;
    case GaitKind::Run:
      p.speed = 3.0;
      p.cycle_duration = 0.7;
      p.bob_amplitude = 0.04;
      p.step_width = 0.12;
      break;
  }
  return p;
}

GaitKind parse_gait_kind(const std::string& name) {
  if (name == "in_place_step") return GaitKind::InPlaceStep;
  if (name == "walk") return GaitKind::Walk;
  if (name == "run") return GaitKind::Run;
  fail(ErrorCode::InvalidInput, "unknown gait kind '" + name + "' (expected in_place_step, walk or run)");
}

const char* to_string(GaitKind kind) {
  switch (kind) {
    case GaitKind::InPlaceStep: return "in_place_step";
    case GaitKind::Walk: return "walk";
    case GaitKind::Run: return "run";
  }
  return "?";
}

ReferenceSRBMotion synth_reference(const SynthParams& p) {
  const double duty = p.duty_factor > 0.0 ? p.duty_factor : (p.kind == GaitKind::Run ? 0.35 : 0.6);
  require(duty > 0.0 && duty < 1.0, "synth_reference: duty factor must lie in (0, 1)");
  require(p.cycle_duration >= 0.2 && p.cycle_duration <= 5.0, "synth_reference: cycle duration out of range");
  require(p.speed >= 0.0 && p.speed <= 12.0, "synth_reference: speed out of range");
  require(p.com_height > 0.3 && p.com_height < 2.0, "synth_reference: com height out of range");
  require(p.kind != GaitKind::InPlaceStep || p.speed == 0.0, "synth_reference: in_place_step requires speed 0");
  if (p.kind != GaitKind::Run && duty < 0.5)
    fail(ErrorCode::InvalidInput, "synth_reference: duty factor below 0.5 leaves both feet swinging");
  const double period = p.cycle_duration;
  const double n_real = period * p.sample_rate;
  const int n = static_cast<int>(std::lround(n_real));
  require(std::abs(n_real - n) < 1e-9 && n >= 8, "synth_reference: cycle_duration * sample_rate must be an integer >= 8");

  const SRBCharacter character = build_srb_character(p.character);
  const double v = p.speed;
  const double stance = duty * period;
  const double w1 = kTwoPi / period;
  const double w2 = 2.0 * w1;
  const double bob_sign = p.kind == GaitKind::Run ? -1.0 : 1.0;
  // Sway of a linear inverted pendulum alternating between feet at +-width/2:
  // s w1^2 = (g / h) (width / 2 - s).
  const double omega2 = 9.8 / p.com_height;
  const double sway = p.sway_amplitude >= 0.0 ? p.sway_amplitude
                                               : omega2 * 0.5 * p.step_width / (w1 * w1 + omega2);
  const std::array<double, kNumFeet> foot_x = {0.5 * p.step_width, -0.5 * p.step_width};
  const std::array<double, kNumFeet> touch_down = {0.0, 0.5 * period};

  ReferenceSRBMotion m;
  m.name = to_string(p.kind);
  m.cycle_duration = period;
  m.sample_rate = p.sample_rate;
  m.average_speed = v;
  m.cycle_offset = RigidTransform::translation(Vec3(0.0, 0.0, v * period));
  for (int f = 0; f < kNumFeet; ++f) {
    const double td = kTwoPi * touch_down[f] / period;
    m.contact_intervals[f].push_back({td, wrap_phase(td + kTwoPi * duty)});
  }

  m.samples.resize(n);
  for (int i = 0; i < n; ++i) {
    const double t = period * i / n;
    // Height peaks at mid-stance for walking (vaulting) and dips for running.
    const double u = t - 0.5 * stance;
    const Vec3 pos(sway * std::cos(w1 * u), p.com_height + bob_sign * p.bob_amplitude * std::cos(w2 * u),
                   v * t);
    const Vec3 vel(-sway * w1 * std::sin(w1 * u), -bob_sign * p.bob_amplitude * w2 * std::sin(w2 * u), v);
    RefKnot& k = m.samples[i];
    k.psi = kTwoPi * i / n;
    k.T = RigidTransform::translation(pos);
    k.qdot = Twist(Vec3::Zero(), vel);
    for (int f = 0; f < kNumFeet; ++f) {
      const double stance_z = v * (touch_down[f] + 0.5 * stance);
      double tau = t - touch_down[f];
      double z = stance_z;
      if (tau < 0.0) {
        tau += period;
        z -= v * period;
      }
      if (tau >= stance) z += v * period * smoothstep((tau - stance) / (period - stance));
      k.feet[f].position = Vec3(foot_x[f], 0.0, z);
      k.feet[f].yaw = 0.0;
      k.feet[f].contacts = foot_contacts(character, 0.0, k.feet[f].position);
    }
  }
  m.validate();
  return m;
}

namespace {

using nlohmann::json;

const json& field(const json& j, const char* key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) fail(ErrorCode::Parse, "reference motion: missing field '" + path + key + "'");
  return j.at(key);
}

Vec3 vec3_of(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) fail(ErrorCode::Parse, "reference motion: field '" + path + "' must hold 3 numbers");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json transform_json(const RigidTransform& T) {
  json a = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a.push_back(T.R()(r, c));
  for (int r = 0; r < 3; ++r) a.push_back(T.p()[r]);
  return a;
}

RigidTransform transform_of(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 12) fail(ErrorCode::Parse, "reference motion: field '" + path + "' must hold 12 numbers");
  Mat3 R;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) R(r, c) = j[3 * r + c].get<double>();
  try {
    return frame_from(R, Vec3(j[9].get<double>(), j[10].get<double>(), j[11].get<double>()));
  } catch (const Error& e) {
    fail(ErrorCode::Parse, "reference motion: field '" + path + "': " + e.what());
  }
}

json vec_json(const Eigen::Ref<const VecX>& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

void save_reference_motion(const ReferenceSRBMotion& m, const std::string& path) {
  json j;
  j["name"] = m.name;
  j["cycle_duration"] = m.cycle_duration;
  j["sample_rate"] = m.sample_rate;
  j["average_speed"] = m.average_speed;
  j["cycle_offset"] = transform_json(m.cycle_offset);
  json samples = json::array();
  for (const auto& k : m.samples) {
    json s;
    s["psi"] = k.psi;
    s["T"] = transform_json(k.T);
    s["qdot"] = vec_json(k.qdot.vector());
    json feet = json::array();
    for (const auto& f : k.feet)
      feet.push_back({{"pos", vec_json(f.position)},
                      {"yaw", f.yaw},
                      {"contacts", {vec_json(f.contacts[0]), vec_json(f.contacts[1])}}});
    s["feet"] = feet;
    samples.push_back(s);
  }
  j["samples"] = samples;
  json intervals = json::array();
  for (const auto& ivs : m.contact_intervals) {
    json a = json::array();
    for (const auto& iv : ivs) a.push_back({iv.touch_down, iv.lift_off});
    intervals.push_back(a);
  }
  j["contact_intervals"] = intervals;
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write reference motion: " + path);
  out << j.dump(1);
}

ReferenceSRBMotion load_reference_motion(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open reference motion: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail(ErrorCode::Parse, "reference motion " + path + ": " + e.what());
  }
  ReferenceSRBMotion m;
  try {
    m.name = j.value("name", std::string());
    m.cycle_duration = field(j, "cycle_duration", "").get<double>();
    m.sample_rate = field(j, "sample_rate", "").get<double>();
    m.average_speed = field(j, "average_speed", "").get<double>();
    if (j.contains("cycle_offset")) m.cycle_offset = transform_of(j["cycle_offset"], "cycle_offset");
    const json& samples = field(j, "samples", "");
    const json& intervals = field(j, "contact_intervals", "");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const std::string sp = "samples[" + std::to_string(i) + "].";
      const json& s = samples[i];
      RefKnot k;
      k.psi = field(s, "psi", sp).get<double>();
      k.T = transform_of(field(s, "T", sp), sp + "T");
      const auto q = field(s, "qdot", sp).get<std::vector<double>>();
      if (q.size() != 6) fail(ErrorCode::Parse, "reference motion: field '" + sp + "qdot' must hold 6 numbers");
      k.qdot = Twist(Vec6(Eigen::Map<const Vec6>(q.data())));
      const json& feet = field(s, "feet", sp);
      if (!feet.is_array() || feet.size() != kNumFeet)
        fail(ErrorCode::Parse, "reference motion: field '" + sp + "feet' must hold 2 feet");
      for (int f = 0; f < kNumFeet; ++f) {
        const std::string fp = sp + "feet[" + std::to_string(f) + "].";
        k.feet[f].position = vec3_of(field(feet[f], "pos", fp), fp + "pos");
        k.feet[f].yaw = field(feet[f], "yaw", fp).get<double>();
        const json& c = field(feet[f], "contacts", fp);
        if (!c.is_array() || c.size() != kPointsPerFoot)
          fail(ErrorCode::Parse, "reference motion: field '" + fp + "contacts' must hold 2 points");
        for (int p = 0; p < kPointsPerFoot; ++p) k.feet[f].contacts[p] = vec3_of(c[p], fp + "contacts");
      }
      m.samples.push_back(k);
    }
    if (!intervals.is_array() || intervals.size() != kNumFeet)
      fail(ErrorCode::Parse, "reference motion: field 'contact_intervals' must hold one list per foot");
    for (int f = 0; f < kNumFeet; ++f)
      for (const auto& iv : intervals[f]) {
        if (!iv.is_array() || iv.size() != 2)
          fail(ErrorCode::Parse, "reference motion: field 'contact_intervals' entries must be [touch_down, lift_off]");
        m.contact_intervals[f].push_back({iv[0].get<double>(), iv[1].get<double>()});
      }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("reference motion: ") + e.what());
  }
  try {
    m.validate();
  } catch (const Error& e) {
    fail(ErrorCode::Parse, e.what());
  }
  return m;
}

}  // namespace srblab
