#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "seqgrasp/error.hpp"
#include "seqgrasp/validation.hpp"
#include "support.hpp"

using namespace seqgrasp;
using namespace seqgrasp::validation;
using hand::GraspConfig;
using testsupport::reference_hand;
using testsupport::toy_hand;

namespace {

// The toy pads sit on the planes y = ±0.052 between x = 0.062 and 0.086 at
// rest. This box fills the gap, leaving the pads 0.5 mm off its faces.
constexpr double kPadCenterX = 0.074;
const Vec3 kPadBoxHalf(0.02, 0.0515, 0.01);

const std::shared_ptr<const energy::ObjectModel>& pad_box() {
  static const auto obj = testsupport::box_object(kPadBoxHalf, 96);
  return obj;
}

GraspConfig rest_grasp(const hand::HandSpec& spec, const Vec3& p = Vec3::Zero()) {
  GraspConfig g;
  g.p = p;
  g.theta = spec.rest_pose;
  return g;
}

energy::SceneState scene_with(std::shared_ptr<const energy::ObjectModel> target, const energy::Pose& pose,
                              const hand::HandSpec& spec = toy_hand()) {
  energy::SceneState s;
  s.hand = &spec;
  s.target = std::move(target);
  s.target_pose = pose;
  return s;
}

energy::Pose translation(const Vec3& t) {
  energy::Pose T = energy::Pose::Identity();
  T.translation() = t;
  return T;
}

MassProperties point_mass(double mass, double length) {
  MassProperties m;
  m.mass = mass;
  m.centroid = Vec3::Zero();
  m.length = length;
  return m;
}

std::vector<PointContact> antipodal_pair(double r) {
  return {{Vec3(r, 0, 0), -Vec3::UnitX()}, {Vec3(-r, 0, 0), Vec3::UnitX()}};
}

std::vector<PointContact> rotated(const std::vector<PointContact>& cs, const Eigen::Matrix3d& R) {
  std::vector<PointContact> out;
  for (const PointContact& c : cs) out.push_back({R * c.point, R * c.normal});
  return out;
}

std::vector<Eigen::Matrix3d> cube_rotations() {
  std::vector<Eigen::Matrix3d> out;
  const std::array<std::array<int, 3>, 6> perms{{{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
  for (const auto& p : perms)
    for (int s = 0; s < 8; ++s) {
      Eigen::Matrix3d R = Eigen::Matrix3d::Zero();
      for (int r = 0; r < 3; ++r) R(r, p[static_cast<std::size_t>(r)]) = (s >> r) & 1 ? -1.0 : 1.0;
      if (R.determinant() > 0) out.push_back(R);
    }
  return out;
}

int direction_index(const Vec3& v) {
  for (int d = 0; d < 6; ++d)
    if ((kLoadDirections[static_cast<std::size_t>(d)] - v).norm() < 1e-12) return d;
  return -1;
}

// Minimum residual over all active sets with a nonnegative least-squares solution.
double brute_nnls_residual(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  const Eigen::Index n = A.cols();
  double best = b.norm();
  for (unsigned mask = 1; mask < (1u << n); ++mask) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < n; ++j)
      if (mask & (1u << j)) idx.push_back(j);
    Eigen::MatrixXd Ap(A.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) Ap.col(static_cast<Eigen::Index>(k)) = A.col(idx[k]);
    const Eigen::VectorXd z = Ap.colPivHouseholderQr().solve(b);
    if ((z.array() < 0).any()) continue;
    best = std::min(best, (Ap * z - b).norm());
  }
  return best;
}

}  // namespace

TEST_CASE("pads resting on a fitted box make contact on both sides") {
  const energy::SceneState scene = scene_with(pad_box(), translation(Vec3(kPadCenterX, 0, 0)));
  const ContactCheck c = check_contact(scene, toy_hand().os_catalog[0], rest_grasp(toy_hand()), ValidationParams{});
  CHECK(c.ok);
  CHECK(c.count_a == 3);
  CHECK(c.count_b == 3);
  CHECK(c.steps == 0);
  REQUIRE(c.contacts.size() >= 6);
  // Pad candidates come first; surface points after them may sit on box edges.
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(std::abs(c.contacts[i].normal.y()) - 1.0) < 1e-3);
}

TEST_CASE("closing brings pads onto a narrower box") {
  const Vec3 half(0.02, 0.045, 0.01);
  const auto box = testsupport::box_object(half, 96);
  const energy::SceneState scene = scene_with(box, translation(Vec3(kPadCenterX, 0, 0)));
  const ContactCheck c = check_contact(scene, toy_hand().os_catalog[0], rest_grasp(toy_hand()), ValidationParams{});
  CHECK(c.ok);
  CHECK(c.steps > 0);
  CHECK(c.steps <= ValidationParams{}.close_max_steps);
}

TEST_CASE("a hand far from the object makes no contact") {
  const energy::SceneState scene = scene_with(pad_box(), translation(Vec3(kPadCenterX + 0.1, 0, 0)));
  const ContactCheck c = check_contact(scene, toy_hand().os_catalog[0], rest_grasp(toy_hand()), ValidationParams{});
  CHECK_FALSE(c.ok);
  CHECK(c.contacts.empty());
}

TEST_CASE("closing never leaves the joint limits") {
  const auto sphere = testsupport::sphere_object(0.03);
  Rng rng(1);
  for (const hand::HandSpec* spec : {&toy_hand(), &reference_hand()}) {
    const int runs = spec == &toy_hand() ? 1000 : 200;
    for (int i = 0; i < runs; ++i) {
      const hand::OppositionSpace& os = spec->os_catalog[rng.index(spec->os_catalog.size())];
      GraspConfig g;
      g.p = testsupport::random_vec(rng, 0.12);
      g.r = hand::matrix_to_rot6d(testsupport::random_rotation(rng));
      g.theta = spec->rest_pose;
      for (std::size_t k = 0; k < spec->dof(); ++k)
        g.theta[static_cast<Eigen::Index>(k)] = rng.uniform(spec->joints[k].lower, spec->joints[k].upper);
      const ContactCheck c = check_contact(scene_with(sphere, energy::Pose::Identity(), *spec), os, g, ValidationParams{});
      for (std::size_t k = 0; k < spec->dof(); ++k) {
        const double t = c.closed.theta[static_cast<Eigen::Index>(k)];
        REQUIRE(t >= spec->joints[k].lower);
        REQUIRE(t <= spec->joints[k].upper);
        if (!os.joints[k]) REQUIRE(t == g.theta[static_cast<Eigen::Index>(k)]);
      }
      REQUIRE(c.steps <= ValidationParams{}.close_max_steps);
    }
  }
}

TEST_CASE("penetration of disjoint scenes is zero") {
  const energy::SceneState scene = scene_with(pad_box(), translation(Vec3(1.0, 0, 0)));
  const PenetrationCheck p = check_penetration(scene, rest_grasp(toy_hand()), 0.01);
  CHECK(p.depth == 0.0);
  CHECK(p.ok);
}

TEST_CASE("a hand point at the centre of a sphere penetrates by its radius") {
  const double r = 0.03;
  const auto sphere = testsupport::sphere_object(r);
  const GraspConfig g = rest_grasp(toy_hand());
  const Vec3 planted = hand::hand_surface_points(toy_hand(), g).col(0);
  const energy::SceneState scene = scene_with(sphere, translation(planted));
  const PenetrationCheck p = check_penetration(scene, g, 0.01);
  CHECK(std::abs(p.depth - r) < sphere->sdf.cell_size());
  CHECK_FALSE(p.ok);
  CHECK(check_penetration(scene, g, p.depth + 1e-9).ok);
  CHECK_FALSE(check_penetration(scene, g, p.depth).ok);
}

TEST_CASE("penetration grows as a sphere moves onto a hand point") {
  const double r = 0.03;
  const auto sphere = testsupport::sphere_object(r);
  const GraspConfig g = rest_grasp(toy_hand());
  // The palm back is a flat grid of points at x = -0.02; approach it along -x.
  const Vec3 start(-0.02 - r - 0.01, 0, 0);
  double last = -1.0;
  for (int i = 0; i <= 20; ++i) {
    const Vec3 c = start + Vec3(0.002 * i, 0, 0);
    const double d = check_penetration(scene_with(sphere, translation(c)), g, 1.0).depth;
    CHECK(d >= last - 1e-12);
    last = d;
  }
  CHECK(last > 0.005);
}

TEST_CASE("held objects inside the target count as penetration") {
  const auto outer = testsupport::sphere_object(0.03);
  const auto inner = testsupport::sphere_object(0.02);
  energy::SceneState scene = scene_with(outer, energy::Pose::Identity());
  const GraspConfig g = rest_grasp(toy_hand(), Vec3(1.0, 0, 0));
  scene.held.push_back({inner, g.base_pose().inverse()});
  const PenetrationCheck p = check_penetration(scene, g, 0.05);
  CHECK(std::abs(p.depth - 0.01) < outer->sdf.cell_size());
}

TEST_CASE("mass properties of a box") {
  const auto box = testsupport::box_object(Vec3(0.02, 0.01, 0.005), 32);
  const MassProperties m = mass_properties(*box, translation(Vec3(1, 2, 3)), 500.0);
  CHECK(m.mass == doctest::Approx(500.0 * 0.04 * 0.02 * 0.01).epsilon(1e-9));
  CHECK((m.centroid - Vec3(1, 2, 3)).norm() < 1e-12);
  CHECK(m.length == doctest::Approx(0.02).epsilon(1e-12));
}

TEST_CASE("an antipodal pair with friction resists every load direction") {
  const std::vector<PointContact> pair = antipodal_pair(0.03);
  const MassProperties m = point_mass(0.05, 0.03);
  const auto ok = check_wrench_resistance(pair, m, ValidationParams{});
  for (bool b : ok) CHECK(b);
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto r = check_wrench_resistance(rotated(pair, testsupport::random_rotation(rng)), m, ValidationParams{});
    for (bool b : r) REQUIRE(b);
  }
}

TEST_CASE("a single contact resists nothing") {
  const std::vector<PointContact> one{{Vec3(0.03, 0, 0), -Vec3::UnitX()}};
  for (bool b : check_wrench_resistance(one, point_mass(0.05, 0.03), ValidationParams{})) CHECK_FALSE(b);
}

TEST_CASE("frictionless pushes along +x only balance a load along -x") {
  ValidationParams p;
  p.mu = 0.0;
  const std::vector<PointContact> cs{{Vec3(-0.03, 0.01, 0), Vec3::UnitX()}, {Vec3(-0.03, -0.01, 0), Vec3::UnitX()}};
  const auto ok = check_wrench_resistance(cs, point_mass(0.05, 0.03), p);
  CHECK(ok == std::array<bool, 6>{false, true, false, false, false, false});
}

TEST_CASE("frictionless contacts on three faces") {
  ValidationParams p;
  p.mu = 0.0;
  const double r = 0.03;
  const std::vector<PointContact> cs{
      {Vec3(-r, 0, 0), Vec3::UnitX()}, {Vec3(r, 0, 0), -Vec3::UnitX()}, {Vec3(0, -r, 0), Vec3::UnitY()}};
  const auto ok = check_wrench_resistance(cs, point_mass(0.05, r), p);
  CHECK(ok == std::array<bool, 6>{true, true, false, true, false, false});
}

TEST_CASE("frictionless verdicts permute with the 24 cube rotations") {
  ValidationParams p;
  p.mu = 0.0;
  const double r = 0.03;
  const std::vector<PointContact> cs{
      {Vec3(-r, 0, 0), Vec3::UnitX()}, {Vec3(r, 0, 0), -Vec3::UnitX()}, {Vec3(0, -r, 0), Vec3::UnitY()}};
  const MassProperties m = point_mass(0.05, r);
  const auto base = check_wrench_resistance(cs, m, p);
  const auto rotations = cube_rotations();
  REQUIRE(rotations.size() == 24);
  for (const Eigen::Matrix3d& R : rotations) {
    const auto ok = check_wrench_resistance(rotated(cs, R), m, p);
    for (int d = 0; d < 6; ++d) {
      const int e = direction_index(R * kLoadDirections[static_cast<std::size_t>(d)]);
      REQUIRE(e >= 0);
      CHECK(ok[static_cast<std::size_t>(e)] == base[static_cast<std::size_t>(d)]);
    }
  }
}

TEST_CASE("more friction never loses a resisted direction") {
  Rng rng(3);
  const std::array<double, 6> mus{0.0, 0.25, 0.5, 1.0, 2.0, 4.0};
  const MassProperties m = point_mass(0.05, 0.03);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<PointContact> cs;
    const int n = 2 + static_cast<int>(rng.index(3));
    for (int i = 0; i < n; ++i) {
      Vec3 u(rng.normal(), rng.normal(), rng.normal());
      u.normalize();
      cs.push_back({0.03 * u, -u});
    }
    std::array<bool, 6> prev{};
    for (double mu : mus) {
      ValidationParams p;
      p.mu = mu;
      const auto ok = check_wrench_resistance(cs, m, p);
      for (std::size_t d = 0; d < 6; ++d) REQUIRE((!prev[d] || ok[d]));
      prev = ok;
    }
  }
}

TEST_CASE("the per-contact force cap limits the liftable mass") {
  const std::vector<PointContact> pair = antipodal_pair(0.03);
  ValidationParams p;
  // Two contacts at 10 N normal force and mu = 2 carry at most 40 N tangentially.
  CHECK(check_wrench_resistance(pair, point_mass(3.5, 0.03), p)[4]);
  CHECK_FALSE(check_wrench_resistance(pair, point_mass(4.5, 0.03), p)[4]);
}

TEST_CASE("nnls agrees with an exhaustive active-set search") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index rows = 3 + static_cast<Eigen::Index>(rng.index(5));
    const Eigen::Index cols = 2 + static_cast<Eigen::Index>(rng.index(6));
    Eigen::MatrixXd A(rows, cols);
    Eigen::VectorXd b(rows);
    for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = rng.normal();
    const Eigen::VectorXd x = nnls(A, b);
    REQUIRE((x.array() >= 0).all());
    CHECK((A * x - b).norm() == doctest::Approx(brute_nnls_residual(A, b)).epsilon(1e-9));
    // KKT: the gradient is zero on the support and points outward elsewhere.
    const Eigen::VectorXd w = A.transpose() * (b - A * x);
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (x[j] > 0) CHECK(std::abs(w[j]) < 1e-9);
      else CHECK(w[j] < 1e-9);
    }
  }
  CHECK_THROWS_AS(nnls(Eigen::MatrixXd::Ones(3, 2), Eigen::VectorXd::Ones(4)), Error);
}

TEST_CASE("validate_grasp on the fitted box succeeds") {
  const energy::SceneState scene = scene_with(pad_box(), translation(Vec3(kPadCenterX, 0, 0)));
  const ObjectVerdict v = validate_grasp(scene, toy_hand().os_catalog[0], rest_grasp(toy_hand()), ValidationParams{});
  CHECK(v.contact_ok);
  CHECK(v.penetration_ok);
  CHECK(v.wrench_ok);
  CHECK(v.success);
  CHECK(v.failure.empty());
}

TEST_CASE("sequence verdict is the conjunction of per-object verdicts") {
  const hand::HandSpec& spec = toy_hand();
  sampler::GraspSequenceResult seq;
  auto add = [&](const Vec3& p) {
    sampler::GraspResult r;
    r.os_id = 0;
    r.os_label = spec.os_catalog[0].label;
    r.mask = spec.os_catalog[0].joints;
    r.g = rest_grasp(spec, p);
    r.object_in_base = r.g.base_pose().inverse();
    seq.grasps.push_back(r);
  };
  add(Vec3(-kPadCenterX, 0, 0));
  const std::vector<std::shared_ptr<const energy::ObjectModel>> objects{pad_box(), pad_box()};

  const ValidationReport one = validate_sequence(seq, objects, spec, ValidationParams{});
  REQUIRE(one.objects.size() == 1);
  CHECK(one.success);

  add(Vec3(-0.5, 0, 0));  // second grasp nowhere near its object
  const ValidationReport two = validate_sequence(seq, objects, spec, ValidationParams{});
  REQUIRE(two.objects.size() == 2);
  CHECK(two.objects[0].success);
  CHECK_FALSE(two.objects[1].success);
  CHECK(two.objects[1].failure == "contact");
  CHECK_FALSE(two.success);
  double worst = 0.0;
  for (const ObjectVerdict& v : two.objects) {
    CHECK(v.success == (v.contact_ok && v.penetration_ok && v.wrench_ok));
    worst = std::max(worst, v.penetration);
  }
  CHECK(two.max_penetration == worst);

  const ValidationReport again = validate_sequence(seq, objects, spec, ValidationParams{});
  CHECK(again.max_penetration == two.max_penetration);
  CHECK(again.objects[0].wrench == two.objects[0].wrench);

  seq.grasps[1].os_id = 9;
  CHECK_THROWS_AS(validate_sequence(seq, objects, spec, ValidationParams{}), Error);
}

TEST_CASE("validation parameters are checked") {
  ValidationParams p;
  p.cone_edges = 2;
  CHECK_THROWS_AS(p.validate(), SpecError);
  p = ValidationParams{};
  p.mu = -1;
  CHECK_THROWS_AS(p.validate(), SpecError);
  p = ValidationParams{};
  p.mu = 0;
  CHECK_NOTHROW(p.validate());
}
