#include "seqgrasp/hand_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "seqgrasp/error.hpp"

namespace seqgrasp::hand {

using nlohmann::json;

// ---------------------------------------------------------------------------
// JointMask

bool JointMask::any() const {
  return std::any_of(bits_.begin(), bits_.end(), [](std::uint8_t b) { return b != 0; });
}

std::size_t JointMask::count() const {
  return static_cast<std::size_t>(std::count_if(bits_.begin(), bits_.end(),
                                                [](std::uint8_t b) { return b != 0; }));
}

bool JointMask::disjoint(const JointMask& other) const {
  const std::size_t n = std::min(bits_.size(), other.bits_.size());
  for (std::size_t i = 0; i < n; ++i)
    if (bits_[i] && other.bits_[i]) return false;
  return true;
}

JointMask JointMask::without(const JointMask& other) const {
  JointMask out(*this);
  for (std::size_t i = 0; i < std::min(bits_.size(), other.bits_.size()); ++i)
    if (other.bits_[i]) out.bits_[i] = 0;
  return out;
}

JointMask JointMask::merged(const JointMask& other) const {
  JointMask out(*this);
  for (std::size_t i = 0; i < std::min(bits_.size(), other.bits_.size()); ++i)
    if (other.bits_[i]) out.bits_[i] = 1;
  return out;
}

std::vector<int> OppositionSpace::side_indices(Side side) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < contacts.size(); ++i)
    if (contacts[i].side == side) out.push_back(static_cast<int>(i));
  return out;
}

int HandSpec::link_index(std::string_view n) const {
  for (std::size_t i = 0; i < links.size(); ++i)
    if (links[i].name == n) return static_cast<int>(i);
  return -1;
}

int HandSpec::joint_index(std::string_view n) const {
  for (std::size_t i = 0; i < joints.size(); ++i)
    if (joints[i].name == n) return static_cast<int>(i);
  return -1;
}

Eigen::VectorXd HandSpec::lower_limits() const {
  Eigen::VectorXd v(joints.size());
  for (std::size_t i = 0; i < joints.size(); ++i) v[i] = joints[i].lower;
  return v;
}

Eigen::VectorXd HandSpec::upper_limits() const {
  Eigen::VectorXd v(joints.size());
  for (std::size_t i = 0; i < joints.size(); ++i) v[i] = joints[i].upper;
  return v;
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

[[noreturn]] void fail(const std::string& field, const std::string& what) {
  throw SpecError("hand spec: " + field + ": " + what);
}

const json& require(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.is_object()) fail(where, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) fail(where.empty() ? key : where + "." + key, "missing field");
  return *it;
}

double as_number(const json& v, const std::string& field) {
  if (!v.is_number()) fail(field, "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) fail(field, "not finite");
  return x;
}

std::string as_string(const json& v, const std::string& field) {
  if (!v.is_string()) fail(field, "expected a string");
  return v.get<std::string>();
}

Vec3 as_vec3(const json& v, const std::string& field) {
  if (!v.is_array() || v.size() != 3) fail(field, "expected an array of 3 numbers");
  return {as_number(v[0], field + "[0]"), as_number(v[1], field + "[1]"),
          as_number(v[2], field + "[2]")};
}

Vec3 as_unit(const json& v, const std::string& field) {
  Vec3 a = as_vec3(v, field);
  const double n = a.norm();
  if (n < 1e-9) fail(field, "zero-length direction");
  if (std::abs(n - 1.0) > 1e-6) fail(field, "direction is not unit length");
  return a / n;
}

Pose as_origin(const json& v, const std::string& field) {
  Pose T = Pose::Identity();
  if (v.is_null()) return T;
  if (!v.is_object()) fail(field, "expected {xyz, rpy}");
  if (v.contains("xyz")) T.translation() = as_vec3(v["xyz"], field + ".xyz");
  if (v.contains("rpy")) {
    const Vec3 rpy = as_vec3(v["rpy"], field + ".rpy");
    // URDF convention: R = Rz(yaw) Ry(pitch) Rx(roll)
    T.linear() = (Eigen::AngleAxisd(rpy.z(), Vec3::UnitZ()) *
                  Eigen::AngleAxisd(rpy.y(), Vec3::UnitY()) *
                  Eigen::AngleAxisd(rpy.x(), Vec3::UnitX()))
                     .toRotationMatrix();
  }
  return T;
}

void build_tree(HandSpec& spec, const std::string& base_name) {
  const int nl = static_cast<int>(spec.links.size());
  spec.base_link = spec.link_index(base_name);
  if (spec.base_link < 0) fail("base_link", "unknown link '" + base_name + "'");

  for (std::size_t j = 0; j < spec.joints.size(); ++j) {
    const Joint& jt = spec.joints[j];
    Link& child = spec.links[jt.child];
    if (jt.child == spec.base_link)
      fail("joints[" + std::to_string(j) + "].child", "base link cannot be a joint child");
    if (child.parent_joint >= 0)
      fail("joints[" + std::to_string(j) + "].child",
           "link '" + child.name + "' has more than one parent joint");
    child.parent_joint = static_cast<int>(j);
  }

  // Walk from the base; anything unreached is disconnected or on a cycle.
  std::vector<std::vector<int>> children(nl);
  for (std::size_t j = 0; j < spec.joints.size(); ++j)
    children[spec.joints[j].parent].push_back(static_cast<int>(j));

  spec.link_chain.assign(nl, {});
  std::vector<bool> seen(nl, false);
  std::vector<int> stack{spec.base_link};
  seen[spec.base_link] = true;
  while (!stack.empty()) {
    const int l = stack.back();
    stack.pop_back();
    for (int j : children[l]) {
      const int c = spec.joints[j].child;
      if (seen[c]) fail("joints", "kinematic cycle through link '" + spec.links[c].name + "'");
      seen[c] = true;
      spec.link_chain[c] = spec.link_chain[l];
      spec.link_chain[c].push_back(j);
      spec.joint_order.push_back(j);
      stack.push_back(c);
    }
  }
  for (int l = 0; l < nl; ++l)
    if (!seen[l])
      fail("links", "link '" + spec.links[l].name +
                        "' is not connected to the base (kinematic cycle or missing joint)");
}

void build_collision_pairs(HandSpec& spec, const std::set<std::pair<int, int>>& ignore) {
  const int nl = static_cast<int>(spec.links.size());
  auto adjacent = [&](int a, int b) {
    for (const Joint& j : spec.joints)
      if ((j.parent == a && j.child == b) || (j.parent == b && j.child == a)) return true;
    return false;
  };
  for (int a = 0; a < nl; ++a)
    for (int b = a + 1; b < nl; ++b) {
      if (adjacent(a, b) || ignore.count({a, b})) continue;
      for (std::size_t sa = 0; sa < spec.links[a].spheres.size(); ++sa)
        for (std::size_t sb = 0; sb < spec.links[b].spheres.size(); ++sb)
          spec.collision_pairs.push_back(
              {a, static_cast<int>(sa), b, static_cast<int>(sb)});
    }
}

}  // namespace

HandSpec parse_hand_spec(const json& doc) {
  if (!doc.is_object()) fail("(root)", "expected a JSON object");
  HandSpec spec;
  spec.name = as_string(require(doc, "name", ""), "name");
  const std::string base_name = as_string(require(doc, "base_link", ""), "base_link");
  if (doc.contains("approach_axis")) spec.approach_axis = as_unit(doc["approach_axis"], "approach_axis");

  const json& links = require(doc, "links", "");
  if (!links.is_array() || links.empty()) fail("links", "expected a nonempty array");
  for (std::size_t i = 0; i < links.size(); ++i) {
    const std::string f = "links[" + std::to_string(i) + "]";
    Link link;
    link.name = as_string(require(links[i], "name", f), f + ".name");
    if (spec.link_index(link.name) >= 0) fail(f + ".name", "duplicate link '" + link.name + "'");
    if (links[i].contains("points")) {
      const json& pts = links[i]["points"];
      if (!pts.is_array()) fail(f + ".points", "expected an array");
      for (std::size_t k = 0; k < pts.size(); ++k)
        link.points.push_back(as_vec3(pts[k], f + ".points[" + std::to_string(k) + "]"));
    }
    if (links[i].contains("spheres")) {
      const json& sph = links[i]["spheres"];
      if (!sph.is_array()) fail(f + ".spheres", "expected an array");
      for (std::size_t k = 0; k < sph.size(); ++k) {
        const std::string sf = f + ".spheres[" + std::to_string(k) + "]";
        Sphere s;
        s.center = as_vec3(require(sph[k], "center", sf), sf + ".center");
        s.radius = as_number(require(sph[k], "radius", sf), sf + ".radius");
        if (s.radius <= 0) fail(sf + ".radius", "must be positive");
        link.spheres.push_back(s);
      }
    }
    spec.num_surface_points += link.points.size();
    spec.links.push_back(std::move(link));
  }

  const json& joints = require(doc, "joints", "");
  if (!joints.is_array()) fail("joints", "expected an array");
  for (std::size_t i = 0; i < joints.size(); ++i) {
    const std::string f = "joints[" + std::to_string(i) + "]";
    Joint j;
    j.name = as_string(require(joints[i], "name", f), f + ".name");
    if (spec.joint_index(j.name) >= 0) fail(f + ".name", "duplicate joint '" + j.name + "'");
    const std::string parent = as_string(require(joints[i], "parent", f), f + ".parent");
    const std::string child = as_string(require(joints[i], "child", f), f + ".child");
    j.parent = spec.link_index(parent);
    j.child = spec.link_index(child);
    if (j.parent < 0) fail(f + ".parent", "unknown link '" + parent + "'");
    if (j.child < 0) fail(f + ".child", "unknown link '" + child + "'");
    if (j.parent == j.child) fail(f, "joint connects a link to itself");
    j.axis = as_unit(require(joints[i], "axis", f), f + ".axis");
    j.origin = as_origin(joints[i].value("origin", json()), f + ".origin");
    j.lower = as_number(require(joints[i], "lower", f), f + ".lower");
    j.upper = as_number(require(joints[i], "upper", f), f + ".upper");
    if (!(j.lower < j.upper)) fail(f, "lower limit must be below upper limit");
    spec.joints.push_back(std::move(j));
  }
  if (spec.joints.size() + 1 != spec.links.size())
    fail("joints", "a kinematic tree needs exactly one joint per non-base link (" +
                       std::to_string(spec.links.size()) + " links, " +
                       std::to_string(spec.joints.size()) + " joints)");
  build_tree(spec, base_name);

  const std::size_t K = spec.joints.size();
  const json& rest = require(doc, "rest_pose", "");
  if (!rest.is_array() || rest.size() != K)
    fail("rest_pose", "expected " + std::to_string(K) + " joint angles");
  spec.rest_pose.resize(static_cast<Eigen::Index>(K));
  for (std::size_t k = 0; k < K; ++k) {
    const double v = as_number(rest[k], "rest_pose[" + std::to_string(k) + "]");
    if (v < spec.joints[k].lower || v > spec.joints[k].upper)
      fail("rest_pose[" + std::to_string(k) + "]",
           "outside the limits of joint '" + spec.joints[k].name + "'");
    spec.rest_pose[static_cast<Eigen::Index>(k)] = v;
  }

  std::set<std::pair<int, int>> ignore;
  if (doc.contains("self_collision_ignore")) {
    const json& ig = doc["self_collision_ignore"];
    if (!ig.is_array()) fail("self_collision_ignore", "expected an array of link pairs");
    for (std::size_t i = 0; i < ig.size(); ++i) {
      const std::string f = "self_collision_ignore[" + std::to_string(i) + "]";
      if (!ig[i].is_array() || ig[i].size() != 2) fail(f, "expected [link, link]");
      int a = spec.link_index(as_string(ig[i][0], f + "[0]"));
      int b = spec.link_index(as_string(ig[i][1], f + "[1]"));
      if (a < 0 || b < 0) fail(f, "unknown link");
      ignore.insert({std::min(a, b), std::max(a, b)});
    }
  }
  build_collision_pairs(spec, ignore);

  const json& oss = require(doc, "opposition_spaces", "");
  if (!oss.is_array() || oss.empty()) fail("opposition_spaces", "expected a nonempty array");
  for (std::size_t i = 0; i < oss.size(); ++i) {
    const std::string f = "opposition_spaces[" + std::to_string(i) + "]";
    OppositionSpace os;
    os.id = static_cast<int>(i);
    os.label = as_string(require(oss[i], "label", f), f + ".label");
    os.joints = JointMask(K);
    const json& mask = require(oss[i], "joint_mask", f);
    if (!mask.is_array()) fail(f + ".joint_mask", "expected an array");
    const bool by_name = !mask.empty() && mask[0].is_string();
    if (by_name) {
      for (std::size_t k = 0; k < mask.size(); ++k) {
        const std::string jn = as_string(mask[k], f + ".joint_mask[" + std::to_string(k) + "]");
        const int idx = spec.joint_index(jn);
        if (idx < 0)
          fail(f + ".joint_mask[" + std::to_string(k) + "]", "unknown joint '" + jn + "'");
        os.joints.set(static_cast<std::size_t>(idx));
      }
    } else {
      if (mask.size() != K)
        fail(f + ".joint_mask", "expected " + std::to_string(K) + " bits or a list of joint names");
      for (std::size_t k = 0; k < K; ++k) {
        const json& b = mask[k];
        if (!b.is_number_integer() || (b.get<int>() != 0 && b.get<int>() != 1))
          fail(f + ".joint_mask[" + std::to_string(k) + "]", "expected 0 or 1");
        os.joints.set(k, b.get<int>() == 1);
      }
    }
    if (!os.joints.any()) fail(f + ".joint_mask", "must select at least one joint");

    const json& contacts = require(oss[i], "contacts", f);
    if (!contacts.is_array()) fail(f + ".contacts", "expected an array");
    for (std::size_t c = 0; c < contacts.size(); ++c) {
      const std::string cf = f + ".contacts[" + std::to_string(c) + "]";
      ContactCandidate cc;
      const std::string ln = as_string(require(contacts[c], "link", cf), cf + ".link");
      cc.link = spec.link_index(ln);
      if (cc.link < 0) fail(cf + ".link", "unknown link '" + ln + "'");
      cc.point = as_vec3(require(contacts[c], "point", cf), cf + ".point");
      cc.normal = as_unit(require(contacts[c], "normal", cf), cf + ".normal");
      const std::string side = as_string(require(contacts[c], "side", cf), cf + ".side");
      if (side == "A") cc.side = Side::A;
      else if (side == "B") cc.side = Side::B;
      else fail(cf + ".side", "expected \"A\" or \"B\"");
      os.contacts.push_back(cc);
    }
    if (os.side_indices(Side::A).empty() || os.side_indices(Side::B).empty())
      fail(f + ".contacts", "needs candidates on both sides A and B");
    spec.os_catalog.push_back(std::move(os));
  }
  return spec;
}

HandSpec load_hand_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SpecError("hand spec: cannot open '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw SpecError("hand spec: '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_hand_spec(doc);
}

// ---------------------------------------------------------------------------
// Grasp vector and rotations

Eigen::VectorXd GraspConfig::to_vector() const {
  Eigen::VectorXd v(dim());
  v.head<3>() = p;
  v.segment<6>(3) = r;
  v.tail(theta.size()) = theta;
  return v;
}

GraspConfig GraspConfig::from_vector(const Eigen::VectorXd& v) {
  if (v.size() < 9) throw SpecError("grasp vector shorter than 9");
  GraspConfig g;
  g.p = v.head<3>();
  g.r = v.segment<6>(3);
  g.theta = v.tail(v.size() - 9);
  return g;
}

Pose GraspConfig::base_pose() const {
  Pose T = Pose::Identity();
  T.linear() = rot6d_to_matrix(r);
  T.translation() = p;
  return T;
}

namespace {

struct GramSchmidt {
  Vec3 a1, a2, b1, b2, b3, u;
  double n1, nu;
};

GramSchmidt gram_schmidt(const Vec6& r) {
  GramSchmidt gs;
  gs.a1 = r.head<3>();
  gs.a2 = r.tail<3>();
  gs.n1 = gs.a1.norm();
  if (!(gs.n1 > 1e-12)) throw Error("rot6d: first column has zero norm");
  gs.b1 = gs.a1 / gs.n1;
  gs.u = gs.a2 - gs.b1.dot(gs.a2) * gs.b1;
  gs.nu = gs.u.norm();
  if (!(gs.nu > 1e-12 * std::max(1.0, gs.a2.norm())))
    throw Error("rot6d: columns are parallel or the second column is zero");
  gs.b2 = gs.u / gs.nu;
  gs.b3 = gs.b1.cross(gs.b2);
  return gs;
}

}  // namespace

Mat3 rot6d_to_matrix(const Vec6& r) {
  const GramSchmidt gs = gram_schmidt(r);
  Mat3 R;
  R.col(0) = gs.b1;
  R.col(1) = gs.b2;
  R.col(2) = gs.b3;
  return R;
}

std::array<Mat3, 6> rot6d_jacobian(const Vec6& r) {
  const GramSchmidt gs = gram_schmidt(r);
  const Mat3 P1 = (Mat3::Identity() - gs.b1 * gs.b1.transpose()) / gs.n1;
  const Mat3 P2 = (Mat3::Identity() - gs.b2 * gs.b2.transpose()) / gs.nu;
  std::array<Mat3, 6> out;
  for (int i = 0; i < 6; ++i) {
    Vec3 da1 = Vec3::Zero(), da2 = Vec3::Zero();
    if (i < 3) da1[i] = 1.0;
    else da2[i - 3] = 1.0;
    const Vec3 db1 = P1 * da1;
    const Vec3 du = da2 - (db1.dot(gs.a2) + gs.b1.dot(da2)) * gs.b1 - gs.b1.dot(gs.a2) * db1;
    const Vec3 db2 = P2 * du;
    const Vec3 db3 = db1.cross(gs.b2) + gs.b1.cross(db2);
    out[i].col(0) = db1;
    out[i].col(1) = db2;
    out[i].col(2) = db3;
  }
  return out;
}

Vec6 matrix_to_rot6d(const Mat3& R) {
  Vec6 r;
  r.head<3>() = R.col(0);
  r.tail<3>() = R.col(1);
  return r;
}

// ---------------------------------------------------------------------------
// Kinematics

Kinematics compute_kinematics(const HandSpec& spec, const GraspConfig& g) {
  if (static_cast<std::size_t>(g.theta.size()) != spec.dof())
    throw SpecError("grasp has " + std::to_string(g.theta.size()) + " joint angles, hand has " +
                    std::to_string(spec.dof()));
  Kinematics kin;
  kin.base_rotation = rot6d_to_matrix(g.r);
  kin.base_pose.linear() = kin.base_rotation;
  kin.base_pose.translation() = g.p;

  const std::size_t nl = spec.links.size();
  kin.link_base.assign(nl, Pose::Identity());
  kin.joint_axis_base.assign(spec.dof(), Vec3::Zero());
  kin.joint_origin_base.assign(spec.dof(), Vec3::Zero());
  for (int j : spec.joint_order) {
    const Joint& jt = spec.joints[j];
    const Pose joint_frame = kin.link_base[jt.parent] * jt.origin;
    kin.joint_axis_base[j] = joint_frame.linear() * jt.axis;
    kin.joint_origin_base[j] = joint_frame.translation();
    kin.link_base[jt.child] = joint_frame * Eigen::AngleAxisd(g.theta[j], jt.axis);
  }
  kin.link_world.resize(nl);
  for (std::size_t l = 0; l < nl; ++l) kin.link_world[l] = kin.base_pose * kin.link_base[l];
  return kin;
}

std::vector<Pose> forward_kinematics(const HandSpec& spec, const GraspConfig& g) {
  return compute_kinematics(spec, g).link_world;
}

Eigen::Matrix3Xd hand_surface_points(const HandSpec& spec, const GraspConfig& g) {
  const Kinematics kin = compute_kinematics(spec, g);
  Eigen::Matrix3Xd out(3, static_cast<Eigen::Index>(spec.num_surface_points));
  Eigen::Index c = 0;
  for (std::size_t l = 0; l < spec.links.size(); ++l)
    for (const Vec3& q : spec.links[l].points) out.col(c++) = kin.link_world[l] * q;
  return out;
}

std::vector<WorldContact> contact_candidates(const HandSpec& spec, const OppositionSpace& os,
                                             const GraspConfig& g) {
  const Kinematics kin = compute_kinematics(spec, g);
  std::vector<WorldContact> out;
  out.reserve(os.contacts.size());
  for (const ContactCandidate& c : os.contacts) {
    const Pose& T = kin.link_world[c.link];
    out.push_back({T * c.point, T.linear() * c.normal, c.side});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Opposition-space bookkeeping

OSState OSState::from_catalog(const HandSpec& spec) {
  OSState s;
  s.available = spec.os_catalog;
  return s;
}

const OppositionSpace* OSState::find(int os_id) const {
  for (const OppositionSpace& os : available)
    if (os.id == os_id) return &os;
  return nullptr;
}

const OppositionSpace& os_select(const OSState& state, Rng& rng) {
  if (state.available.empty()) throw OsExhausted();
  return state.available[rng.index(state.available.size())];
}

OSState os_consume(const OSState& state, int os_id, const JointMask& mask) {
  if (state.find(os_id) == nullptr)
    throw Error("os_consume: opposition space " + std::to_string(os_id) + " is not available");
  OSState next;
  next.consumed = state.consumed;
  next.consumed.push_back({os_id, mask});
  for (const OppositionSpace& os : state.available) {
    if (os.id == os_id) continue;
    OppositionSpace updated = os;
    updated.joints = os.joints.without(mask);
    if (updated.joints.any()) next.available.push_back(std::move(updated));
  }
  return next;
}

}  // namespace seqgrasp::hand
