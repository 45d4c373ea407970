#pragma once

#include <Eigen/Core>

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "seqgrasp/geometry.hpp"
#include "seqgrasp/hand_model.hpp"

namespace seqgrasp::energy {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Pose = Eigen::Isometry3d;

enum Term : int { kFc = 0, kDis, kHop, kHsp, kJoint, kOop, kNumTerms };

/// Term names in weight order.
extern const std::array<const char*, kNumTerms> kTermNames;

/// (w_fc, w_dis, w_hop, w_hsp, w_joint, w_oop), all nonnegative.
struct EnergyWeights {
  std::array<double, kNumTerms> w{50.0, 50.0, 5.0, 5.0, 1.0, 5.0};

  static EnergyWeights zero() { return EnergyWeights{{0, 0, 0, 0, 0, 0}}; }
  /// Throws SpecError on a negative or non-finite entry.
  void validate() const;
};

struct EnergyBreakdown {
  std::array<double, kNumTerms> terms{};
  double total = 0.0;

  double operator[](Term t) const { return terms[t]; }
};

/// World-frame contacts and unit normals used by the force-closure term.
struct ContactPair {
  Vec3 x1 = Vec3::Zero(), x2 = Vec3::Zero();
  Vec3 c1 = Vec3::UnitX(), c2 = -Vec3::UnitX();
};

/// A rigid object prepared for optimization: recentered mesh, SDF, hull and a
/// surface sample used when the object is held.
struct ObjectModel {
  std::string id;
  double scale = 1.0;
  geometry::TriMesh mesh;
  geometry::SdfGrid sdf;
  geometry::ConvexHull hull;
  geometry::PointCloud surface;
  double volume = 0.0;
  Vec3 centroid = Vec3::Zero();
};

/// Builds hull, volume and an FPS surface sample of `surface_points` points.
/// The mesh and SDF must already be in the same (object) frame.
std::shared_ptr<const ObjectModel> make_object(std::string id, double scale, geometry::TriMesh mesh,
                                               geometry::SdfGrid sdf, std::size_t surface_points,
                                               Rng& rng);

struct HeldObject {
  std::shared_ptr<const ObjectModel> object;
  Pose in_base = Pose::Identity();  // object frame expressed in the hand base frame
};

struct SceneState {
  const hand::HandSpec* hand = nullptr;
  std::shared_ptr<const ObjectModel> target;
  Pose target_pose = Pose::Identity();  // object frame -> world
  std::vector<HeldObject> held;
};

/// Candidate pair chosen from one opposition space (side A, side B).
struct ContactChoice {
  hand::ContactCandidate first;
  hand::ContactCandidate second;
};

Mat3 skew(const Vec3& x);

/// [[I, I], [[x1]x, [x2]x]]
Mat6 grasp_matrix(const Vec3& x1, const Vec3& x2);

/// ||G c||^2 with c = [c1; c2]. Points are taken as given (no re-centering).
double e_fc(const ContactPair& pair);

/// Σ max(sdf(x), 0) over the contacts.
double e_dis(const std::vector<Vec3>& contacts, const geometry::SdfGrid& sdf);

/// Σ −sdf over points with negative signed distance.
double e_hop(const geometry::PointCloud& points, const geometry::SdfGrid& sdf);

/// Σ max(r_a + r_b − |c_a − c_b|, 0) over the spec's collision pairs.
double e_hsp(const hand::HandSpec& spec, const hand::GraspConfig& g);

/// Single pair helper.
double sphere_overlap(const Vec3& ca, double ra, const Vec3& cb, double rb);

/// ||(θ − upper)+||_1 + ||(lower − θ)+||_1
double e_joint(const Eigen::VectorXd& theta, const Eigen::VectorXd& lower,
               const Eigen::VectorXd& upper);

/// Penetration of held-object surface points into the target.
double e_oop(const SceneState& scene, const hand::GraspConfig& g);

/// Contact pair in world frame for the current grasp, with points expressed
/// relative to the target origin.
ContactPair world_contacts(const SceneState& scene, const ContactChoice& choice,
                           const hand::GraspConfig& g);

/// All six terms and their weighted total. E_hop covers the target and every
/// held object.
EnergyBreakdown total_energy(const SceneState& scene, const ContactChoice& choice,
                             const hand::GraspConfig& g, const EnergyWeights& w);

/// Same breakdown plus dE/dg (length 9+K, order p, r, θ).
struct EnergyWithGradient {
  EnergyBreakdown energy;
  Eigen::VectorXd gradient;
};
EnergyWithGradient energy_gradient(const SceneState& scene, const ContactChoice& choice,
                                   const hand::GraspConfig& g, const EnergyWeights& w);

/// Weighted sum of the stored terms.
double weighted_total(const EnergyBreakdown& b, const EnergyWeights& w);

}  // namespace seqgrasp::energy
