#include "seqgrasp/validation.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "seqgrasp/error.hpp"

namespace seqgrasp::validation {

void ValidationParams::validate() const {
  if (!(contact_tol > 0 && max_penetration > 0 && mu >= 0 && acceleration > 0 && density > 0 &&
        max_normal_force > 0 && close_step > 0 && residual_tol > 0))
    throw SpecError("validation parameters must be positive (mu may be 0)");
  if (cone_edges < 3) throw SpecError("validation: cone_edges must be >= 3");
  if (close_max_steps < 0) throw SpecError("validation: close_max_steps must be >= 0");
}

// ---------------------------------------------------------------------------

Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, int max_iter) {
  const Eigen::Index n = A.cols();
  if (A.rows() != b.size()) throw Error("nnls: dimension mismatch");
  if (max_iter <= 0) max_iter = static_cast<int>(3 * n + 10);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  std::vector<bool> passive(static_cast<std::size_t>(n), false);
  const double tol = 1e-12 * std::max(1.0, A.cwiseAbs().maxCoeff()) * std::max(1.0, b.norm());

  auto solve_passive = [&](Eigen::VectorXd& z) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < n; ++j)
      if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
    Eigen::MatrixXd Ap(A.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) Ap.col(static_cast<Eigen::Index>(k)) = A.col(idx[k]);
    const Eigen::VectorXd zp = Ap.colPivHouseholderQr().solve(b);
    z.setZero(n);
    for (std::size_t k = 0; k < idx.size(); ++k) z[idx[k]] = zp[static_cast<Eigen::Index>(k)];
  };

  for (int outer = 0; outer < max_iter; ++outer) {
    const Eigen::VectorXd w = A.transpose() * (b - A * x);
    Eigen::Index best = -1;
    double wmax = tol;
    for (Eigen::Index j = 0; j < n; ++j)
      if (!passive[static_cast<std::size_t>(j)] && w[j] > wmax) wmax = w[j], best = j;
    if (best < 0) break;
    passive[static_cast<std::size_t>(best)] = true;

    Eigen::VectorXd z;
    for (int inner = 0; inner < max_iter; ++inner) {
      solve_passive(z);
      bool feasible = true;
      for (Eigen::Index j = 0; j < n; ++j)
        if (passive[static_cast<std::size_t>(j)] && z[j] <= 0) feasible = false;
      if (feasible) break;
      double alpha = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < n; ++j)
        if (passive[static_cast<std::size_t>(j)] && z[j] <= 0) {
          const double denom = x[j] - z[j];
          alpha = std::min(alpha, denom > 0 ? x[j] / denom : 0.0);
        }
      x += alpha * (z - x);
      for (Eigen::Index j = 0; j < n; ++j)
        if (passive[static_cast<std::size_t>(j)] && x[j] <= 1e-15) {
          passive[static_cast<std::size_t>(j)] = false;
          x[j] = 0;
        }
    }
    x = z.cwiseMax(0.0);
  }
  return x;
}

// ---------------------------------------------------------------------------

namespace {

struct CandidateState {
  Vec3 x;
  geometry::SdfSample s;
};

CandidateState probe(const energy::SceneState& scene, const hand::Kinematics& kin,
                     const hand::ContactCandidate& c) {
  CandidateState out;
  out.x = kin.link_world[c.link] * c.point;
  const geometry::SdfSample local = scene.target->sdf.query(scene.target_pose.inverse() * out.x);
  out.s.value = local.value;
  out.s.gradient = scene.target_pose.linear() * local.gradient;
  return out;
}

}  // namespace

ContactCheck check_contact(const energy::SceneState& scene, const hand::OppositionSpace& os,
                           const hand::GraspConfig& g, const ValidationParams& params) {
  const hand::HandSpec& spec = *scene.hand;
  ContactCheck out;
  out.closed = g;
  const auto sides = std::array<std::vector<int>, 2>{os.side_indices(hand::Side::A),
                                                     os.side_indices(hand::Side::B)};
  for (int step = 0;; ++step) {
    const hand::Kinematics kin = hand::compute_kinematics(spec, out.closed);
    std::array<int, 2> counts{0, 0};
    std::array<int, 2> nearest{-1, -1};
    std::array<double, 2> nearest_value{std::numeric_limits<double>::infinity(),
                                        std::numeric_limits<double>::infinity()};
    std::vector<CandidateState> states(os.contacts.size());
    for (int side = 0; side < 2; ++side)
      for (int i : sides[side]) {
        states[i] = probe(scene, kin, os.contacts[i]);
        if (states[i].s.value < params.contact_tol) ++counts[side];
        if (states[i].s.value < nearest_value[side]) nearest_value[side] = states[i].s.value, nearest[side] = i;
      }
    out.count_a = counts[0];
    out.count_b = counts[1];
    out.steps = step;
    if (counts[0] > 0 && counts[1] > 0) {
      out.ok = true;
      for (std::size_t i = 0; i < os.contacts.size(); ++i)
        if (states[i].s.value < params.contact_tol) {
          const Vec3 gr = states[i].s.gradient;
          const double n = gr.norm();
          if (n > 0) out.contacts.push_back({states[i].x, -gr / n});
        }
      // Any other touching hand surface also carries load.
      const geometry::PointCloud pts = hand::hand_surface_points(spec, out.closed);
      const energy::Pose inv = scene.target_pose.inverse();
      for (Eigen::Index i = 0; i < pts.cols(); ++i) {
        const geometry::SdfSample s = scene.target->sdf.query(inv * Vec3(pts.col(i)));
        if (!(s.value < params.contact_tol)) continue;
        const Vec3 gr = scene.target_pose.linear() * s.gradient;
        const double n = gr.norm();
        if (n > 0) out.contacts.push_back({pts.col(i), -gr / n});
      }
      return out;
    }
    if (step >= params.close_max_steps) return out;

    // d sdf / d θ_k for the nearest candidate of each untouched side.
    Eigen::VectorXd drive = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.dof()));
    for (int side = 0; side < 2; ++side) {
      if (counts[side] > 0 || nearest[side] < 0) continue;
      const hand::ContactCandidate& c = os.contacts[nearest[side]];
      const CandidateState& st = states[nearest[side]];
      for (int k : spec.link_chain[c.link]) {
        if (!os.joints[static_cast<std::size_t>(k)]) continue;
        const Vec3 w = kin.base_rotation * kin.joint_axis_base[k];
        const Vec3 o = kin.base_pose * kin.joint_origin_base[k];
        drive[k] += st.s.gradient.dot(w.cross(st.x - o));
      }
    }
    bool moved = false;
    for (std::size_t k = 0; k < spec.dof(); ++k) {
      const auto i = static_cast<Eigen::Index>(k);
      if (drive[i] == 0.0) continue;
      const double before = out.closed.theta[i];
      const double target = before - (drive[i] > 0 ? 1.0 : -1.0) * params.close_step;
      const double clamped = std::clamp(target, spec.joints[k].lower, spec.joints[k].upper);
      if (clamped != before) {
        out.closed.theta[i] = clamped;
        moved = true;
      }
    }
    if (!moved) return out;
  }
}

// ---------------------------------------------------------------------------

namespace {

double max_depth(const geometry::PointCloud& world_points, const geometry::SdfGrid& sdf,
                 const energy::Pose& object_pose) {
  const energy::Pose inv = object_pose.inverse();
  double d = 0.0;
  for (Eigen::Index i = 0; i < world_points.cols(); ++i)
    d = std::max(d, -sdf.value(inv * Vec3(world_points.col(i))));
  return d;
}

geometry::PointCloud transform_cloud(const geometry::PointCloud& pts, const energy::Pose& T) {
  geometry::PointCloud out(3, pts.cols());
  for (Eigen::Index i = 0; i < pts.cols(); ++i) out.col(i) = T * Vec3(pts.col(i));
  return out;
}

}  // namespace

PenetrationCheck check_penetration(const energy::SceneState& scene, const hand::GraspConfig& g,
                                   double cap) {
  const geometry::PointCloud hand_pts = hand::hand_surface_points(*scene.hand, g);
  const energy::Pose base = g.base_pose();

  struct Placed {
    const energy::ObjectModel* object;
    energy::Pose pose;
  };
  std::vector<Placed> objects;
  objects.push_back({scene.target.get(), scene.target_pose});
  for (const energy::HeldObject& h : scene.held) objects.push_back({h.object.get(), base * h.in_base});

  double depth = 0.0;
  for (const Placed& o : objects) depth = std::max(depth, max_depth(hand_pts, o.object->sdf, o.pose));
  for (std::size_t a = 0; a < objects.size(); ++a)
    for (std::size_t b = 0; b < objects.size(); ++b) {
      if (a == b) continue;
      const geometry::PointCloud pts = transform_cloud(objects[a].object->surface, objects[a].pose);
      depth = std::max(depth, max_depth(pts, objects[b].object->sdf, objects[b].pose));
    }
  return {depth, depth < cap};
}

// ---------------------------------------------------------------------------

const std::array<Vec3, 6> kLoadDirections{Vec3::UnitX(),  -Vec3::UnitX(), Vec3::UnitY(),
                                          -Vec3::UnitY(), Vec3::UnitZ(),  -Vec3::UnitZ()};

MassProperties mass_properties(const energy::ObjectModel& object, const energy::Pose& pose,
                               double density) {
  const double volume = geometry::mesh_volume(object.mesh);
  if (!(volume > 0)) throw GeometryError("object '" + object.id + "' has zero volume");
  MassProperties m;
  m.mass = density * volume;
  m.centroid = pose * object.centroid;
  const double extent = object.mesh.bounds().sizes().maxCoeff();
  m.length = extent > 0 ? 0.5 * extent : 1.0;
  return m;
}

std::array<bool, 6> check_wrench_resistance(const std::vector<PointContact>& contacts,
                                            const MassProperties& mass,
                                            const ValidationParams& params) {
  std::array<bool, 6> out{};
  if (contacts.size() < 2) return out;
  const int m = params.cone_edges;
  const auto nc = static_cast<Eigen::Index>(contacts.size());
  const Eigen::Index ne = nc * m;

  // Columns: edge forces λ (ne), then one cap slack per contact.
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(6 + nc, ne + nc);
  for (Eigen::Index c = 0; c < nc; ++c) {
    const Vec3 n = contacts[c].normal.normalized();
    const Vec3 t1 = n.unitOrthogonal();
    const Vec3 t2 = n.cross(t1);
    const Vec3 r = contacts[c].point - mass.centroid;
    for (int j = 0; j < m; ++j) {
      const double phi = 2.0 * std::numbers::pi * j / m;
      const Vec3 d = n + params.mu * (std::cos(phi) * t1 + std::sin(phi) * t2);
      const Eigen::Index col = c * m + j;
      A.block<3, 1>(0, col) = d;
      A.block<3, 1>(3, col) = r.cross(d) / mass.length;
      A(6 + c, col) = 1.0;  // normal component of every edge is 1
    }
    A(6 + c, ne + c) = 1.0;
  }

  const double load = mass.mass * params.acceleration;
  for (int d = 0; d < 6; ++d) {
    Eigen::VectorXd b = Eigen::VectorXd::Zero(6 + nc);
    b.head<3>() = -load * kLoadDirections[d];
    b.tail(nc).setConstant(params.max_normal_force);
    const Eigen::VectorXd x = nnls(A, b);
    const double residual = (A * x - b).norm();
    out[d] = residual <= params.residual_tol * load;
  }
  return out;
}

// ---------------------------------------------------------------------------

ObjectVerdict validate_grasp(const energy::SceneState& scene, const hand::OppositionSpace& os,
                             const hand::GraspConfig& g, const ValidationParams& params) {
  ObjectVerdict v;
  const ContactCheck contact = check_contact(scene, os, g, params);
  v.contact_ok = contact.ok;
  v.contacts_a = contact.count_a;
  v.contacts_b = contact.count_b;

  const PenetrationCheck pen = check_penetration(scene, contact.closed, params.max_penetration);
  v.penetration = pen.depth;
  v.penetration_ok = pen.ok;

  if (contact.ok) {
    const MassProperties mass = mass_properties(*scene.target, scene.target_pose, params.density);
    v.wrench = check_wrench_resistance(contact.contacts, mass, params);
  }
  v.wrench_ok = std::all_of(v.wrench.begin(), v.wrench.end(), [](bool b) { return b; });
  v.success = v.contact_ok && v.penetration_ok && v.wrench_ok;
  if (!v.contact_ok) v.failure = "contact";
  else if (!v.penetration_ok) v.failure = "penetration";
  else if (!v.wrench_ok) v.failure = "wrench";
  return v;
}

ValidationReport validate_sequence(const sampler::GraspSequenceResult& result,
                                   const std::vector<std::shared_ptr<const energy::ObjectModel>>& objects,
                                   const hand::HandSpec& spec, const ValidationParams& params) {
  if (result.grasps.empty()) throw Error("validate_sequence: empty result");
  if (objects.size() < result.grasps.size()) throw Error("validate_sequence: missing objects");
  ValidationReport report;
  report.success = true;
  std::vector<energy::HeldObject> held;
  for (std::size_t n = 0; n < result.grasps.size(); ++n) {
    const sampler::GraspResult& gr = result.grasps[n];
    if (gr.os_id < 0 || static_cast<std::size_t>(gr.os_id) >= spec.os_catalog.size())
      throw Error("validate_sequence: unknown opposition space id " + std::to_string(gr.os_id));
    hand::OppositionSpace os = spec.os_catalog[static_cast<std::size_t>(gr.os_id)];
    if (gr.mask.size() == spec.dof()) os.joints = gr.mask;

    energy::SceneState scene;
    scene.hand = &spec;
    scene.target = objects[n];
    scene.held = held;
    ObjectVerdict v = validate_grasp(scene, os, gr.g, params);
    report.max_penetration = std::max(report.max_penetration, v.penetration);
    report.success = report.success && v.success;
    report.objects.push_back(std::move(v));
    held.push_back({objects[n], gr.object_in_base});
  }
  return report;
}

sampler::ChainPredicate make_chain_predicate(const ValidationParams& params) {
  return [params](const sampler::ChainCandidate& c) {
    return validate_grasp(c.scene, c.os, c.result.g, params).success;
  };
}

}  // namespace seqgrasp::validation
