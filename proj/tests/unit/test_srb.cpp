#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include <json.hpp>

#include "srblab/error.hpp"
#include "srblab/srb.hpp"
#include "test_util.hpp"

using namespace srblab;

TEST_CASE("box inertia") {
  const auto c = build_srb_character();
  CHECK(c.mass == 60.0);
  CHECK(box_inertia(6.0, Vec3(1, 1, 1)).isApprox(Mat3::Identity(), 1e-15));
  // Oracle: I_xx = m (h^2 + d^2) / 12 for a box w x h x d.
  SRBCharacterConfig cfg;
  cfg.box_dims = Vec3(0.3, 0.6, 0.2);
  const auto b = build_srb_character(cfg);
  CHECK(b.inertia(0, 0) == doctest::Approx(60.0 * (0.36 + 0.04) / 12.0));
  CHECK(b.inertia(1, 1) == doctest::Approx(60.0 * (0.09 + 0.04) / 12.0));
  CHECK(b.inertia(2, 2) == doctest::Approx(60.0 * (0.09 + 0.36) / 12.0));
  CHECK(b.inertia(0, 1) == 0.0);
  cfg.box_dims = Vec3(0.3, -0.6, 0.2);
  CHECK_THROWS_AS(build_srb_character(cfg), Error);
  cfg = {};
  cfg.mass = 0.0;
  CHECK_THROWS_AS(build_srb_character(cfg), Error);
}

TEST_CASE("synthetic in-place stepping") {
  const auto m = synth_reference(default_synth_params(GaitKind::InPlaceStep));
  CHECK(m.average_speed == 0.0);
  CHECK(m.size() == 60);
  for (const auto& k : m.samples) CHECK(k.T.p().z() == 0.0);
  CHECK_NOTHROW(m.validate());
}

TEST_CASE("synthetic walk advances speed times duration per cycle") {
  auto p = default_synth_params(GaitKind::Walk);
  p.speed = 1.0;
  p.cycle_duration = 1.2;
  const auto m = synth_reference(p);
  CHECK(m.size() == 72);
  const auto a = sample_reference(m, 0.3);
  const auto b = sample_reference(m, 0.3, m.cycle_offset);
  CHECK(b.T.p().z() - a.T.p().z() == doctest::Approx(1.2));
  CHECK(m.average_speed == 1.0);
}

TEST_CASE("walk rejects a double swing") {
  auto p = default_synth_params(GaitKind::Walk);
  p.duty_factor = 0.4;
  CHECK_THROWS_AS(synth_reference(p), Error);
  auto r = default_synth_params(GaitKind::Run);
  CHECK_NOTHROW(synth_reference(r));
}

TEST_CASE("sample_reference interpolation") {
  const auto m = synth_reference(default_synth_params(GaitKind::Walk));
  for (int i : {0, 5, 33}) {
    const auto s = sample_reference(m, m.samples[i].psi);
    CHECK(s.T.p() == m.samples[i].T.p());
    CHECK(s.qdot == m.samples[i].qdot);
    CHECK(s.foot_position[1] == m.samples[i].feet[1].position);
  }
  const auto s0 = sample_reference(m, 0.0);
  const auto s2 = sample_reference(m, 2.0 * M_PI);
  CHECK(s0.T.p() == s2.T.p());

  const double mid = 0.5 * (m.samples[10].psi + m.samples[11].psi);
  const auto s = sample_reference(m, mid);
  CHECK((s.T.p() - 0.5 * (m.samples[10].T.p() + m.samples[11].T.p())).norm() < 1e-12);
  CHECK((s.qdot.vector() - 0.5 * (m.samples[10].qdot.vector() + m.samples[11].qdot.vector())).norm() < 1e-12);

  // Between the last knot and 2 pi the next cycle's first knot is used.
  const int n = m.size();
  const double tail = 0.5 * (m.samples[n - 1].psi + 2.0 * M_PI);
  const auto t = sample_reference(m, tail);
  const Vec3 expected = 0.5 * (m.samples[n - 1].T.p() + m.cycle_offset.apply(m.samples[0].T.p()));
  CHECK((t.T.p() - expected).norm() < 1e-12);

  ReferenceSRBMotion empty;
  CHECK_THROWS_AS(sample_reference(empty, 0.0), Error);
}

TEST_CASE("slerp midpoint of a turning reference") {
  auto m = synth_reference(default_synth_params(GaitKind::InPlaceStep));
  m.samples[3].T = RigidTransform::unchecked(rot_y(0.2), m.samples[3].T.p());
  m.samples[4].T = RigidTransform::unchecked(rot_y(0.4) * rot_x(0.1), m.samples[4].T.p());
  const auto s = sample_reference(m, 0.5 * (m.samples[3].psi + m.samples[4].psi));
  const Quat qa(m.samples[3].T.R()), qb(m.samples[4].T.R());
  CHECK(rot_distance(s.T.R(), qa.slerp(0.5, qb).toRotationMatrix()) < 1e-9);
}

TEST_CASE("contact flags change exactly at interval end points") {
  const auto m = synth_reference(default_synth_params(GaitKind::Walk));
  for (int f = 0; f < kNumFeet; ++f)
    for (const auto& iv : m.contact_intervals[f]) {
      CHECK(sample_reference(m, iv.touch_down).contact[f]);
      CHECK_FALSE(sample_reference(m, iv.touch_down - 1e-9).contact[f]);
      CHECK_FALSE(sample_reference(m, iv.lift_off).contact[f]);
      CHECK(sample_reference(m, iv.lift_off - 1e-9).contact[f]);
    }
}

TEST_CASE("foot offset") {
  ReferenceSRBMotion m = synth_reference(default_synth_params(GaitKind::InPlaceStep));
  RefSample s = sample_reference(m, 0.0);
  s.T = RigidTransform::translation(Vec3(0, 1, 0));
  s.foot_position[0] = Vec3(0.1, 0, 0);
  CHECK((foot_offset(s, 0) - Vec3(0.1, 0, 0)).norm() < 1e-15);
  s.T = RigidTransform::unchecked(rot_y(M_PI / 2), Vec3(0, 1, 0));
  CHECK((foot_offset(s, 0) - rot_y(-M_PI / 2) * Vec3(0.1, 0, 0)).norm() < 1e-12);
  s.foot_position[0] = Vec3(0, 0, 0);
  CHECK(foot_offset(s, 0).norm() < 1e-15);

  // With identity heading the offset is the horizontal foot position relative to the COM.
  for (int i = 0; i < m.size(); i += 7) {
    const auto r = sample_reference(m, m.samples[i].psi);
    const Vec3 o = foot_offset(m, m.samples[i].psi, 1);
    const Vec3 rel = r.foot_position[1] - Vec3(r.T.p().x(), 0, r.T.p().z());
    CHECK((o - rel).norm() < 1e-12);
  }
}

TEST_CASE("velocities are derivatives of the sampled positions") {
  for (auto kind : {GaitKind::InPlaceStep, GaitKind::Walk, GaitKind::Run}) {
    const auto m = synth_reference(default_synth_params(kind));
    double worst_coarse = 0.0;
    // Analytic velocities versus central differences of the analytic curve at knots.
    for (int i = 1; i + 1 < m.size(); ++i) {
      const double dt = 1.0 / m.sample_rate;
      const Vec3 fd = (m.samples[i + 1].T.p() - m.samples[i - 1].T.p()) / (2 * dt);
      const double err = (fd - m.samples[i].qdot.linear).norm();
      worst_coarse = std::max(worst_coarse, err);
    }
    // O(dt^2) bound: |v'''| dt^2 / 6 with |v'''| <= A w^3 for each sinusoid.
    const auto p = default_synth_params(kind);
    const double w = 2 * M_PI / p.cycle_duration;
    double sway = 0.0;
    for (const auto& k : m.samples) sway = std::max(sway, std::abs(k.T.p().x()));
    const double bound = (sway * std::pow(w, 3) + p.bob_amplitude * std::pow(2 * w, 3)) / 6.0 /
                         (m.sample_rate * m.sample_rate);
    CHECK(worst_coarse <= bound * 1.0001);
  }
}

TEST_CASE("reference motion file round trip") {
  const auto m = synth_reference(default_synth_params(GaitKind::Walk));
  const std::string path = "test_srb_roundtrip.json";
  save_reference_motion(m, path);
  const auto l = load_reference_motion(path);
  REQUIRE(l.size() == m.size());
  CHECK(l.cycle_duration == m.cycle_duration);
  CHECK(l.average_speed == m.average_speed);
  for (int i = 0; i < m.size(); ++i) {
    CHECK((l.samples[i].T.matrix() - m.samples[i].T.matrix()).norm() < 1e-9);
    CHECK(l.samples[i].qdot == m.samples[i].qdot);
    CHECK(l.samples[i].feet[0].contacts[1] == m.samples[i].feet[0].contacts[1]);
  }
  CHECK(l.contact_intervals[1][0].lift_off == m.contact_intervals[1][0].lift_off);

  nlohmann::json j;
  std::ifstream(path) >> j;
  j.erase("contact_intervals");
  std::ofstream(path) << j.dump();
  try {
    load_reference_motion(path);
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Parse);
    CHECK(std::string(e.what()).find("contact_intervals") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("schema arithmetic: 120 samples at 60 Hz") {
  auto p = default_synth_params(GaitKind::Walk);
  p.cycle_duration = 2.0;
  const auto m = synth_reference(p);
  const std::string path = "test_srb_120.json";
  save_reference_motion(m, path);
  const auto l = load_reference_motion(path);
  CHECK(l.size() == 120);
  CHECK(l.cycle_duration == 2.0);
  std::remove(path.c_str());
}
