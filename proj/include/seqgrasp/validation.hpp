#pragma once

#include <Eigen/Core>

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "seqgrasp/energy.hpp"
#include "seqgrasp/hand_model.hpp"
#include "seqgrasp/sampler.hpp"

namespace seqgrasp::validation {

using Vec3 = Eigen::Vector3d;

struct ValidationParams {
  double contact_tol = 0.002;      // m
  double max_penetration = 0.010;  // m
  double mu = 2.0;
  int cone_edges = 8;
  double acceleration = 9.8;       // m/s^2
  double density = 500.0;          // kg/m^3
  double max_normal_force = 10.0;  // N, per contact
  double close_step = 0.5 * 3.14159265358979323846 / 180.0;  // rad per increment
  int close_max_steps = 200;
  double residual_tol = 1e-6;      // relative to |load|

  void validate() const;
};

/// Lawson–Hanson active-set solver for min |Ax − b| subject to x >= 0.
Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, int max_iter = 0);

struct PointContact {
  Vec3 point;   // world
  Vec3 normal;  // unit, pointing into the object
};

struct ContactCheck {
  bool ok = false;
  int count_a = 0, count_b = 0;  // candidates within tolerance per side
  int steps = 0;                 // closing increments applied
  hand::GraspConfig closed;      // configuration after closing
  std::vector<PointContact> contacts;  // touching candidates, then touching hand surface points
};

/// Closes the OS joints in fixed increments (each joint moves by the sign of
/// the derivative that brings the nearest candidate of an untouched side
/// closer) until both sides touch, nothing moves, or the step budget runs out.
ContactCheck check_contact(const energy::SceneState& scene, const hand::OppositionSpace& os,
                           const hand::GraspConfig& g, const ValidationParams& params);

struct PenetrationCheck {
  double depth = 0.0;  // m
  bool ok = true;
};

/// Max depth of hand points in any object and of objects in each other.
PenetrationCheck check_penetration(const energy::SceneState& scene, const hand::GraspConfig& g,
                                   double cap);

/// Six load directions: +x, −x, +y, −y, +z, −z.
extern const std::array<Vec3, 6> kLoadDirections;

struct MassProperties {
  double mass = 0.0;      // kg
  Vec3 centroid;          // world
  double length = 1.0;    // m, torque scaling
};

MassProperties mass_properties(const energy::ObjectModel& object, const energy::Pose& pose,
                               double density);

/// Static feasibility of balancing m·a along each load direction with
/// nonnegative friction-cone edge forces, capped per contact.
std::array<bool, 6> check_wrench_resistance(const std::vector<PointContact>& contacts,
                                            const MassProperties& mass,
                                            const ValidationParams& params);

struct ObjectVerdict {
  bool contact_ok = false;
  int contacts_a = 0, contacts_b = 0;
  double penetration = 0.0;
  bool penetration_ok = false;
  std::array<bool, 6> wrench{};
  bool wrench_ok = false;
  bool success = false;
  std::string failure;  // first failing criterion, empty on success
};

/// All three checks for one grasp of `scene.target`.
ObjectVerdict validate_grasp(const energy::SceneState& scene, const hand::OppositionSpace& os,
                             const hand::GraspConfig& g, const ValidationParams& params);

struct ValidationReport {
  std::vector<ObjectVerdict> objects;
  bool success = false;
  double max_penetration = 0.0;
};

/// Replays the sequence: object n is checked with objects 0..n−1 held at
/// their recorded base-frame poses.
ValidationReport validate_sequence(const sampler::GraspSequenceResult& result,
                                   const std::vector<std::shared_ptr<const energy::ObjectModel>>& objects,
                                   const hand::HandSpec& spec, const ValidationParams& params);

/// Predicate for sampler::SequenceOptions::accept.
sampler::ChainPredicate make_chain_predicate(const ValidationParams& params);

}  // namespace seqgrasp::validation
