#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "srblab/error.hpp"
#include "srblab/scenario.hpp"

using namespace srblab;

namespace {

Controller random_controller(GaitKind kind, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PolicyCheckpoint c;
  c.policy.mean = MLP(kObsDim, {16, 16}, Action::kDim);
  c.policy.mean.initialize(rng, 0.05);
  c.policy.log_std = VecX::Constant(Action::kDim, -1.0);
  c.value = MLP(kObsDim, {16}, 1);
  c.value.initialize(rng);
  c.obs_norm = RunningNormalizer(kObsDim);
  return make_controller(c, synth_reference(default_synth_params(kind)), {}, "random");
}

bool same_rows(const std::vector<TrajectoryRow>& a, const std::vector<TrajectoryRow>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const SRBState &x = a[i].state, &y = b[i].state;
    if (!(x.T.p() == y.T.p() && x.T.R() == y.T.R() && x.qdot == y.qdot && x.psi == y.psi)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("push directions and sweep levels") {
  CHECK(push_unit(PushDirection::Behind) == Vec3::UnitZ());
  CHECK(push_unit(PushDirection::Left) == -Vec3::UnitX());
  CHECK(parse_push_direction("right") == PushDirection::Right);
  CHECK_THROWS_AS(parse_push_direction("above"), Error);
  const PushSweep paper;
  const auto f = paper.forces();
  CHECK(f.size() == 39);
  CHECK(f.front() == 100.0);
  CHECK(f.back() == 2000.0);
  CHECK(paper.phases == 20);
  CHECK(paper.trials == 10);
}

TEST_CASE("push grid summaries") {
  PushGrid g;
  g.phases = {0.0, 1.0};
  g.forces = {100, 200, 300, 400, 500};
  g.trials = 10;
  g.successes = {{10, 10, 7, 0, 0}, {10, 6, 8, 1, 0}};
  g.zero_force = {10, 10};
  CHECK(g.always_balanced(0) == 200.0);
  CHECK(g.always_falls(0) == 400.0);
  CHECK(g.inversions(0) == 0);
  CHECK(g.always_balanced(1) == 100.0);
  CHECK(g.always_falls(1) == 500.0);
  CHECK(g.inversions(1) == 1);
  g.successes[1] = {0, 0, 0, 0, 0};
  CHECK(g.always_balanced(1) == 0.0);
  CHECK(g.always_falls(1) == 100.0);
  std::ostringstream csv, summary;
  write_push_grid_csv(csv, g);
  write_push_summary_csv(summary, g);
  const std::string text = csv.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 2 * 6);
  CHECK(summary.str().find("always_balanced_N") != std::string::npos);
}

TEST_CASE("push experiment shape") {
  const Controller c = random_controller(GaitKind::InPlaceStep, 1);
  PushSweep s;
  s.phases = 2;
  s.force_min = 100;
  s.force_max = 300;
  s.force_step = 100;
  s.trials = 2;
  s.window = 0.5;
  s.warmup_min = s.warmup_max = 0.2;
  const PushGrid g = push_experiment(c, s, 7, 2);
  REQUIRE(g.successes.size() == 2);
  CHECK(g.successes[0].size() == 3);
  for (const auto& row : g.successes)
    for (int v : row) CHECK((v >= 0 && v <= 2));
  // Order-independent: a second run with one thread gives the same grid.
  const PushGrid h = push_experiment(c, s, 7, 1);
  CHECK(h.successes == g.successes);
  CHECK(h.zero_force == g.zero_force);
}

TEST_CASE("box penalty contact") {
  BoxConfig cfg;
  BoxState box;
  box.position = Vec3(0.0, 0.5, 1.0);
  // Apart.
  CHECK(box_contact(box, cfg, Vec3(0.0, 0.7, 0.5), Vec3::Zero()).force_on_character.isZero());
  // 1 cm into the near face: the character is pushed back along -z.
  const BoxContact c = box_contact(box, cfg, Vec3(0.0, 0.7, 0.71), Vec3::Zero());
  CHECK(c.penetration == doctest::Approx(0.01));
  CHECK((c.force_on_character - Vec3(0.0, 0.0, -100.0)).norm() < 1e-9);
  // Approaching adds damping.
  const BoxContact d = box_contact(box, cfg, Vec3(0.0, 0.7, 0.71), Vec3(0.0, 0.0, 1.0));
  CHECK(d.force_on_character.z() == doctest::Approx(-200.0));
  // Separating fast enough: no pulling.
  CHECK(box_contact(box, cfg, Vec3(0.0, 0.7, 0.71), Vec3(0.0, 0.0, -5.0)).force_on_character.isZero());
  cfg.mass = 0.0;
  CHECK(box_contact(box, cfg, Vec3(0.0, 0.7, 0.71), Vec3::Zero()).force_on_character.isZero());
}

TEST_CASE("box ground friction") {
  BoxConfig cfg;  // 10 kg, mu 0.5: 49 N breakaway
  const double dt = 1.0 / 60.0;
  BoxState box;
  Vec3 imp = integrate_box(box, cfg, Vec3(0.0, 0.0, 40.0), dt);
  CHECK(box.velocity.isZero());
  CHECK(imp.z() == doctest::Approx(-40.0 * dt));
  imp = integrate_box(box, cfg, Vec3(0.0, 0.0, 69.0), dt);
  CHECK(box.velocity.z() == doctest::Approx(dt * 20.0 / 10.0));
  CHECK(imp.z() == doctest::Approx(-49.0 * dt));
  // Sliding with no push decelerates and stops without reversing.
  box.velocity = Vec3(0.0, 0.0, 0.1);
  for (int k = 0; k < 10; ++k) integrate_box(box, cfg, Vec3::Zero(), dt);
  CHECK(box.velocity.isZero());
}

TEST_CASE("box scenario") {
  const Controller c = random_controller(GaitKind::Walk, 2);
  RolloutOptions opt;
  opt.duration = 2.0;
  BoxConfig none;
  none.mass = 0.0;
  const BoxResult removed = box_experiment(c, none, opt);
  CHECK(same_rows(removed.rollout.rows, rollout(c, opt).rows));

  BoxConfig box;
  box.start_distance = 0.2;  // the hand starts inside the box
  const BoxResult r = box_experiment(c, box, opt);
  CHECK(r.displacement > 0.0);
  CHECK(r.momentum_error < 1e-9);
  bool touched = false;
  for (const auto& row : r.log) touched = touched || row.contact_force.squaredNorm() > 0.0;
  CHECK(touched);
  BoxConfig heavy = box;
  heavy.mass = 30.0;
  const BoxResult h = box_experiment(c, heavy, opt);
  CHECK(h.momentum_error < 1e-9);
  std::ostringstream csv;
  write_box_csv(csv, r.log);
  CHECK(csv.str().find("friction_ix") != std::string::npos);
}

TEST_CASE("rollouts") {
  const Controller c = random_controller(GaitKind::InPlaceStep, 3);
  RolloutOptions opt;
  opt.duration = 1.5;
  opt.stochastic = true;
  opt.seed = 5;
  const RolloutResult a = rollout(c, opt), b = rollout(c, opt);
  CHECK(same_rows(a.rows, b.rows));
  CHECK(a.duration > 0.0);

  // A flat heightfield behaves like the plane.
  opt.stochastic = false;
  const Terrain flat = Terrain::heightfield(-20, -20, 1.0, 41, 41, std::vector<double>(41 * 41, 0.0));
  const TerrainResult t = terrain_experiment(c, flat, opt);
  CHECK(same_rows(t.rollout.rows, rollout(c, opt).rows));
  CHECK_FALSE(t.truncated);

  // Leaving a small heightfield truncates with a note.
  const Controller w = random_controller(GaitKind::Walk, 4);
  const Terrain tiny = Terrain::heightfield(-1, -1, 0.5, 5, 5, std::vector<double>(25, 0.0));
  RolloutOptions far = opt;
  far.duration = 5.0;
  const TerrainResult out = terrain_experiment(w, tiny, far);
  if (!out.rollout.fell) {
    CHECK(out.truncated);
    CHECK(out.rollout.note.find("terrain") != std::string::npos);
  }
  // Facing commands are rejected for a 21-entry policy.
  RolloutOptions facing = opt;
  facing.facing = FacingCommandStream{{{0.0, 1.0}}};
  CHECK_THROWS_AS(rollout(c, facing), Error);
}
