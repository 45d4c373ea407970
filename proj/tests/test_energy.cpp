#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "seqgrasp/energy.hpp"
#include "seqgrasp/sampler.hpp"
#include "energy_scenes.hpp"
#include "support.hpp"

using namespace seqgrasp;
using namespace seqgrasp::energy;
using hand::GraspConfig;
using hand::HandSpec;
using testsupport::reference_hand;
using testsupport::RandomScene;
using testsupport::fd_gradient;
using testsupport::near_cell_boundary;
using testsupport::random_scene;

namespace {

double fc_direct(const ContactPair& p) {
  const Vec3 f = p.c1 + p.c2;
  const Vec3 t = p.x1.cross(p.c1) + p.x2.cross(p.c2);
  return f.squaredNorm() + t.squaredNorm();
}

ContactPair random_pair(Rng& rng) {
  ContactPair p;
  p.x1 = testsupport::random_vec(rng, 0.05);
  p.x2 = testsupport::random_vec(rng, 0.05);
  p.c1 = testsupport::random_vec(rng).normalized();
  p.c2 = testsupport::random_vec(rng).normalized();
  return p;
}

// Plane sdf(x) = x_0 on a small grid.
geometry::SdfGrid plane_sdf() {
  const std::array<int, 3> dims{11, 11, 11};
  const Vec3 origin(-0.05, -0.05, -0.05);
  std::vector<float> v;
  for (int k = 0; k < 11; ++k)
    for (int j = 0; j < 11; ++j)
      for (int i = 0; i < 11; ++i) v.push_back(static_cast<float>(origin.x() + 0.01 * i));
  return geometry::SdfGrid(origin, 0.01, dims, v);
}

}  // namespace

TEST_CASE("grasp matrix block layout") {
  const Mat6 G0 = grasp_matrix(Vec3::Zero(), Vec3::Zero());
  Mat6 expected = Mat6::Zero();
  expected.block<3, 3>(0, 0).setIdentity();
  expected.block<3, 3>(0, 3).setIdentity();
  CHECK(G0 == expected);

  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const Vec3 x1 = testsupport::random_vec(rng), x2 = testsupport::random_vec(rng);
    const Vec3 v = testsupport::random_vec(rng);
    const Mat6 G = grasp_matrix(x1, x2);
    CHECK((G.block<3, 3>(3, 0) * v - x1.cross(v)).norm() < 1e-15);
    CHECK((G.block<3, 3>(3, 3) * v - x2.cross(v)).norm() < 1e-15);
    CHECK((skew(x1) * v - x1.cross(v)).norm() < 1e-15);
  }
}

TEST_CASE("force closure energy vanishes for antipodal sphere contacts") {
  const double r = 0.04;
  ContactPair p;
  p.x1 = Vec3(r, 0, 0);
  p.x2 = Vec3(-r, 0, 0);
  p.c1 = Vec3(-1, 0, 0);
  p.c2 = Vec3(1, 0, 0);
  CHECK(std::abs(e_fc(p)) <= 1e-9);
}

TEST_CASE("force closure energy of parallel normals at one point") {
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    ContactPair p;
    p.x1 = p.x2 = testsupport::random_vec(rng, 0.1);
    p.c1 = p.c2 = Vec3::UnitX();
    const double torque = (2 * p.x1.cross(Vec3::UnitX())).squaredNorm();
    CHECK(e_fc(p) == doctest::Approx(4.0 + torque).epsilon(1e-12));
  }
}

TEST_CASE("force closure energy matches the direct wrench sum") {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const ContactPair p = random_pair(rng);
    CHECK(e_fc(p) == doctest::Approx(fc_direct(p)).epsilon(1e-12));
  }
}

TEST_CASE("force closure energy is invariant under rigid rotation") {
  Rng rng(4);
  const ContactPair p = random_pair(rng);
  const double e = e_fc(p);
  for (int i = 0; i < 100; ++i) {
    const Mat3 R = testsupport::random_rotation(rng);
    ContactPair q{R * p.x1, R * p.x2, R * p.c1, R * p.c2};
    CHECK(std::abs(e_fc(q) - e) <= 1e-9 * e);
  }
}

TEST_CASE("distance term on a plane") {
  const geometry::SdfGrid sdf = plane_sdf();
  CHECK(std::abs(e_dis({Vec3(0, 0.01, 0), Vec3(0, -0.02, 0.03)}, sdf)) < 1e-9);
  CHECK(e_dis({Vec3(0.01, 0, 0), Vec3(0.02, 0.01, 0)}, sdf) == doctest::Approx(0.03).epsilon(1e-6));
  CHECK(e_dis({Vec3(-0.02, 0, 0), Vec3(0.02, 0.01, 0)}, sdf) == doctest::Approx(0.02).epsilon(1e-6));
}

TEST_CASE("distance term agrees with exact point-mesh distance") {
  const auto obj = testsupport::sphere_object(0.04);
  const double slack = obj->sdf.cell_size() * std::sqrt(3.0);
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const Vec3 a = testsupport::random_vec(rng).normalized() * rng.uniform(0.041, 0.06);
    const Vec3 b = testsupport::random_vec(rng).normalized() * rng.uniform(0.041, 0.06);
    const double exact = geometry::point_mesh_distance(a, obj->mesh).distance +
                         geometry::point_mesh_distance(b, obj->mesh).distance;
    CHECK(std::abs(e_dis({a, b}, obj->sdf) - exact) <= 2 * slack);
  }
}

TEST_CASE("penetration term") {
  const double r = 0.04;
  const auto obj = testsupport::sphere_object(r);
  geometry::PointCloud out(3, 2);
  out << 0.05, 0, 0, 0.06, 0, 0;
  CHECK(e_hop(out, obj->sdf) == 0.0);
  geometry::PointCloud center(3, 1);
  center.col(0) = Vec3::Zero();
  CHECK(std::abs(e_hop(center, obj->sdf) - r) <= obj->sdf.cell_size());
}

TEST_CASE("penetration term does not decrease as a patch moves deeper") {
  const double r = 0.04;
  const auto obj = testsupport::sphere_object(r);
  const double h = obj->sdf.cell_size();
  geometry::PointCloud patch(3, 25);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) patch.col(i * 5 + j) = Vec3(r + 0.01, (i - 2) * 0.005, (j - 2) * 0.005);
  double prev = 0.0;
  for (double shift = 0.0; r + 0.01 - shift >= h; shift += 0.0005) {
    geometry::PointCloud moved = patch;
    moved.row(0).array() -= shift;
    const double e = e_hop(moved, obj->sdf);
    REQUIRE(e >= prev - 1e-12);
    prev = e;
  }
  CHECK(prev > 0.0);
}

TEST_CASE("self-penetration term") {
  for (const HandSpec* spec : {&reference_hand(), &testsupport::toy_hand()}) {
    GraspConfig g;
    g.theta = spec->rest_pose;
    CHECK(e_hsp(*spec, g) == 0.0);
  }
  CHECK(sphere_overlap(Vec3::Zero(), 1.0, Vec3(1, 0, 0), 1.0) == doctest::Approx(1.0));
  Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    const Vec3 a = testsupport::random_vec(rng), b = testsupport::random_vec(rng);
    const double ra = rng.uniform(0.1, 1), rb = rng.uniform(0.1, 1);
    CHECK(sphere_overlap(a, ra, b, rb) == sphere_overlap(b, rb, a, ra));
    CHECK(sphere_overlap(a, ra, b, rb) >= 0.0);
  }
}

TEST_CASE("joint limit term") {
  const Eigen::Vector3d lower(-1, -1, -1), upper(1, 1, 1);
  CHECK(e_joint(Eigen::Vector3d(0.5, -0.5, 0), lower, upper) == 0.0);
  CHECK(e_joint(Eigen::Vector3d(1.2, 0, 0), lower, upper) == doctest::Approx(0.2));
  CHECK(e_joint(Eigen::Vector3d(1.1, -1.1, 0), lower, upper) == doctest::Approx(0.2));
}

TEST_CASE("object-object term") {
  const HandSpec& spec = reference_hand();
  const auto target = testsupport::sphere_object(0.03);
  const auto held = testsupport::sphere_object(0.02);
  SceneState scene;
  scene.hand = &spec;
  scene.target = target;
  GraspConfig g;
  g.theta = spec.rest_pose;
  CHECK(e_oop(scene, g) == 0.0);

  scene.held.push_back({held, Pose(Eigen::Translation3d(0.2, 0, 0))});
  CHECK(e_oop(scene, g) == 0.0);

  double prev = 0.0;
  for (double d = 0.06; d >= 0.0; d -= 0.005) {
    scene.held[0].in_base = Pose(Eigen::Translation3d(d, 0, 0));
    const double e = e_oop(scene, g);
    CHECK(e >= prev - 1e-12);
    prev = e;
  }
  CHECK(prev > 0.0);

  // The held object follows the base.
  scene.held[0].in_base = Pose(Eigen::Translation3d(0.2, 0, 0));
  g.p = Vec3(-0.2, 0, 0);
  CHECK(e_oop(scene, g) > 0.0);
}

TEST_CASE("default weights follow the published values") {
  const EnergyWeights w;
  CHECK(w.w == std::array<double, kNumTerms>{50, 50, 5, 5, 1, 5});
  sampler::SamplerParams p;
  CHECK(p.weights_at(0).w[kHop] == 5.0);
  CHECK(p.final_weights().w[kHop] == 500.0);
  CHECK(p.weights_at(p.n_steps - 1).w[kHop] == doctest::Approx(500.0));
  EnergyWeights bad;
  bad.w[2] = -1;
  CHECK_THROWS_AS(bad.validate(), SpecError);
}

TEST_CASE("total energy is linear in the weights") {
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    const RandomScene s = random_scene(rng);
    const EnergyBreakdown zero = total_energy(s.scene, s.choice, s.g, EnergyWeights::zero());
    CHECK(zero.total == 0.0);

    EnergyWeights w1, w2, sum, twice;
    for (int t = 0; t < kNumTerms; ++t) {
      w1.w[t] = rng.uniform(0, 10);
      w2.w[t] = rng.uniform(0, 10);
      sum.w[t] = w1.w[t] + w2.w[t];
      twice.w[t] = 2 * w1.w[t];
    }
    const EnergyBreakdown a = total_energy(s.scene, s.choice, s.g, w1);
    const EnergyBreakdown b = total_energy(s.scene, s.choice, s.g, w2);
    const EnergyBreakdown c = total_energy(s.scene, s.choice, s.g, sum);
    const EnergyBreakdown d = total_energy(s.scene, s.choice, s.g, twice);
    CHECK(c.total == doctest::Approx(a.total + b.total).epsilon(1e-12));
    CHECK(d.total == doctest::Approx(2 * a.total).epsilon(1e-12));
    for (int t = 0; t < kNumTerms; ++t) {
      CHECK(a.terms[t] >= 0.0);
      CHECK(a.terms[t] == c.terms[t]);
    }
    double dot = 0;
    for (int t = 0; t < kNumTerms; ++t) dot += w1.w[t] * a.terms[t];
    CHECK(a.total == doctest::Approx(dot).epsilon(1e-12));
  }
}

TEST_CASE("joint-limit gradient vanishes inside the limits") {
  const HandSpec& spec = reference_hand();
  Rng rng(8);
  RandomScene s = random_scene(rng);
  for (std::size_t k = 0; k < spec.dof(); ++k)
    s.g.theta[static_cast<Eigen::Index>(k)] = 0.5 * (spec.joints[k].lower + spec.joints[k].upper);
  EnergyWeights w = EnergyWeights::zero();
  w.w[kJoint] = 1.0;
  const EnergyWithGradient e = energy_gradient(s.scene, s.choice, s.g, w);
  CHECK(e.gradient.tail(16).isZero(0.0));
}

TEST_CASE("energy gradient matches central differences") {
  Rng rng(9);
  EnergyWeights w;
  w.w[kHop] = 50.0;
  const double h = 1e-5;
  int checked = 0, skipped = 0, active = 0;
  double worst = 0.0;
  while (checked < 100) {
    const RandomScene s = random_scene(rng);
    if (near_cell_boundary(s, h)) {
      REQUIRE(++skipped < 1000);
      continue;
    }
    const EnergyWithGradient e = energy_gradient(s.scene, s.choice, s.g, w);
    const Eigen::VectorXd fd = fd_gradient(s, w, h);
    CHECK(e.energy.total == doctest::Approx(total_energy(s.scene, s.choice, s.g, w).total).epsilon(1e-12));
    const double err = (e.gradient - fd).norm() / std::max(fd.norm(), 1e-12);
    worst = std::max(worst, err);
    CHECK(err < 1e-3);
    if (e.energy[kHop] > 0) ++active;
    ++checked;
  }
  MESSAGE("worst relative gradient error " << worst << ", penetrating states " << active << ", skipped " << skipped);
  CHECK(active > 20);
}

TEST_CASE("gradient agrees with a finer stencil at every random state") {
  // A 1e-6 stencil rarely straddles a cell face, so no state is excluded.
  Rng rng(19);
  EnergyWeights w;
  w.w[kHop] = 50.0;
  for (int i = 0; i < 100; ++i) {
    const RandomScene s = random_scene(rng);
    const Eigen::VectorXd g = energy_gradient(s.scene, s.choice, s.g, w).gradient;
    const Eigen::VectorXd fd = fd_gradient(s, w, 1e-6);
    CHECK((g - fd).norm() / std::max(fd.norm(), 1e-12) < 1e-3);
  }
}

TEST_CASE("translating object and hand together leaves the joint gradient unchanged") {
  Rng rng(10);
  for (int i = 0; i < 20; ++i) {
    RandomScene s = random_scene(rng);
    const EnergyWeights w;
    const Eigen::VectorXd a = energy_gradient(s.scene, s.choice, s.g, w).gradient;
    const Vec3 t = testsupport::random_vec(rng, 0.5);
    s.scene.target_pose = Pose(Eigen::Translation3d(t));
    s.g.p += t;
    const Eigen::VectorXd b = energy_gradient(s.scene, s.choice, s.g, w).gradient;
    CHECK((a.tail(16) - b.tail(16)).norm() <= 1e-6 * std::max(1.0, a.tail(16).norm()));
  }
}
