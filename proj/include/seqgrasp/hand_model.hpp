#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "seqgrasp/rng.hpp"

namespace seqgrasp::hand {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Pose = Eigen::Isometry3d;

/// Binary joint-involvement mask over the K hand joints.
class JointMask {
 public:
  JointMask() = default;
  explicit JointMask(std::size_t k) : bits_(k, 0) {}
  explicit JointMask(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {}

  std::size_t size() const { return bits_.size(); }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  void set(std::size_t i, bool v = true) { bits_[i] = v ? 1 : 0; }

  bool any() const;
  std::size_t count() const;
  bool disjoint(const JointMask& other) const;
  /// this ⊙ (1 − other)
  JointMask without(const JointMask& other) const;
  /// Bitwise OR, used to accumulate frozen joints.
  JointMask merged(const JointMask& other) const;

  const std::vector<std::uint8_t>& bits() const { return bits_; }
  friend bool operator==(const JointMask&, const JointMask&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

struct Joint {
  std::string name;
  int parent = -1;  // link index
  int child = -1;   // link index
  Vec3 axis = Vec3::UnitZ();  // unit, in the joint frame
  Pose origin = Pose::Identity();  // joint frame relative to parent link
  double lower = 0.0;
  double upper = 0.0;
};

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
};

struct Link {
  std::string name;
  std::vector<Vec3> points;  // surface samples in link frame (m)
  std::vector<Sphere> spheres;  // collision approximation in link frame
  int parent_joint = -1;  // -1 for the base link
};

enum class Side : std::uint8_t { A, B };

struct ContactCandidate {
  int link = -1;
  Vec3 point = Vec3::Zero();   // link frame
  Vec3 normal = Vec3::UnitZ(); // outward hand-surface normal, link frame
  Side side = Side::A;
};

struct OppositionSpace {
  int id = 0;
  std::string label;
  JointMask joints;
  std::vector<ContactCandidate> contacts;

  /// Indices into `contacts` grouped by side tag.
  std::vector<int> side_indices(Side side) const;
};

/// One collision-sphere pair checked by the self-penetration term.
struct SpherePair {
  int link_a, sphere_a;
  int link_b, sphere_b;
};

/// Declarative kinematic hand description. Immutable after load.
struct HandSpec {
  std::string name;
  int base_link = 0;
  Vec3 approach_axis = Vec3::UnitZ();  // palm inward direction, base frame
  std::vector<Joint> joints;
  std::vector<Link> links;
  Eigen::VectorXd rest_pose;
  std::vector<OppositionSpace> os_catalog;

  // Derived at load time.
  std::vector<int> joint_order;  // parents before children
  std::vector<std::vector<int>> link_chain;  // ancestor joints per link, root first
  std::vector<SpherePair> collision_pairs;
  std::size_t num_surface_points = 0;

  std::size_t dof() const { return joints.size(); }
  std::size_t grasp_dim() const { return 9 + joints.size(); }
  int link_index(std::string_view name) const;
  int joint_index(std::string_view name) const;
  Eigen::VectorXd lower_limits() const;
  Eigen::VectorXd upper_limits() const;
};

/// Parses and validates a hand description (see docs in README).
HandSpec parse_hand_spec(const nlohmann::json& doc);
HandSpec load_hand_spec(const std::filesystem::path& path);

/// g = [p, r, θ]
struct GraspConfig {
  Vec3 p = Vec3::Zero();
  Vec6 r = (Vec6() << 1, 0, 0, 0, 1, 0).finished();
  Eigen::VectorXd theta;

  std::size_t dim() const { return 9 + static_cast<std::size_t>(theta.size()); }
  Eigen::VectorXd to_vector() const;
  static GraspConfig from_vector(const Eigen::VectorXd& v);
  Pose base_pose() const;
};

/// Gram–Schmidt 6D rotation: columns (r[0..2], r[3..5]) -> proper rotation.
/// Throws seqgrasp::Error on zero or parallel columns.
Mat3 rot6d_to_matrix(const Vec6& r);

/// Partial derivatives dR/dr_i, i = 0..5.
std::array<Mat3, 6> rot6d_jacobian(const Vec6& r);

/// First two columns of R.
Vec6 matrix_to_rot6d(const Mat3& R);

/// Pose of every link. `base` holds link poses relative to the hand base,
/// `world` composes them with (p, R(r)). Joint axes and origins are in the
/// base frame, for Jacobians.
struct Kinematics {
  Pose base_pose = Pose::Identity();
  Mat3 base_rotation = Mat3::Identity();
  std::vector<Pose> link_base;
  std::vector<Pose> link_world;
  std::vector<Vec3> joint_axis_base;
  std::vector<Vec3> joint_origin_base;
};

Kinematics compute_kinematics(const HandSpec& spec, const GraspConfig& g);

/// World transform of each link, indexed like spec.links.
std::vector<Pose> forward_kinematics(const HandSpec& spec, const GraspConfig& g);

/// H_g: all link surface samples in world frame (3 × M_h, link order).
Eigen::Matrix3Xd hand_surface_points(const HandSpec& spec, const GraspConfig& g);

struct WorldContact {
  Vec3 point;
  Vec3 normal;
  Side side;
};

std::vector<WorldContact> contact_candidates(const HandSpec& spec, const OppositionSpace& os,
                                             const GraspConfig& g);

/// Available opposition spaces (with current masks) and the consumption log.
struct OSState {
  struct Consumed {
    int os_id;
    JointMask mask;
  };
  std::vector<OppositionSpace> available;
  std::vector<Consumed> consumed;

  static OSState from_catalog(const HandSpec& spec);
  bool empty() const { return available.empty(); }
  const OppositionSpace* find(int os_id) const;
};

/// Uniform draw over available OSes. Throws OsExhausted when none is left.
const OppositionSpace& os_select(const OSState& state, Rng& rng);

/// Removes `os_id`, zeroes `mask` out of every remaining OS, drops emptied
/// OSes, and appends (os_id, mask) to the consumption log.
OSState os_consume(const OSState& state, int os_id, const JointMask& mask);

}  // namespace seqgrasp::hand
