#include "seqgrasp/energy.hpp"

#include <cmath>

#include "seqgrasp/error.hpp"

namespace seqgrasp::energy {

const std::array<const char*, kNumTerms> kTermNames{"fc", "dis", "hop", "hsp", "joint", "oop"};

void EnergyWeights::validate() const {
  for (int t = 0; t < kNumTerms; ++t)
    if (!(w[t] >= 0) || !std::isfinite(w[t]))
      throw SpecError(std::string("energy weight w_") + kTermNames[t] + " must be finite and >= 0");
}

double weighted_total(const EnergyBreakdown& b, const EnergyWeights& w) {
  double s = 0;
  for (int t = 0; t < kNumTerms; ++t) s += w.w[t] * b.terms[t];
  return s;
}

std::shared_ptr<const ObjectModel> make_object(std::string id, double scale, geometry::TriMesh mesh,
                                               geometry::SdfGrid sdf, std::size_t surface_points,
                                               Rng& rng) {
  auto obj = std::make_shared<ObjectModel>();
  obj->id = std::move(id);
  obj->scale = scale;
  obj->hull = geometry::convex_hull(mesh.vertices);
  obj->volume = geometry::mesh_volume(mesh);
  obj->centroid = geometry::mesh_centroid(mesh);
  obj->surface = geometry::fps_sample(mesh, surface_points, rng);
  obj->mesh = std::move(mesh);
  obj->sdf = std::move(sdf);
  return obj;
}

Mat3 skew(const Vec3& x) {
  Mat3 S;
  S << 0, -x.z(), x.y(), x.z(), 0, -x.x(), -x.y(), x.x(), 0;
  return S;
}

Mat6 grasp_matrix(const Vec3& x1, const Vec3& x2) {
  Mat6 G;
  G.topLeftCorner<3, 3>().setIdentity();
  G.topRightCorner<3, 3>().setIdentity();
  G.bottomLeftCorner<3, 3>() = skew(x1);
  G.bottomRightCorner<3, 3>() = skew(x2);
  return G;
}

double e_fc(const ContactPair& pair) {
  const Vec3 f = pair.c1 + pair.c2;
  const Vec3 tau = pair.x1.cross(pair.c1) + pair.x2.cross(pair.c2);
  return f.squaredNorm() + tau.squaredNorm();
}

double e_dis(const std::vector<Vec3>& contacts, const geometry::SdfGrid& sdf) {
  double s = 0;
  for (const Vec3& x : contacts) s += std::max(sdf.value(x), 0.0);
  return s;
}

double e_hop(const geometry::PointCloud& points, const geometry::SdfGrid& sdf) {
  double s = 0;
  for (Eigen::Index i = 0; i < points.cols(); ++i) s += std::max(-sdf.value(points.col(i)), 0.0);
  return s;
}

double sphere_overlap(const Vec3& ca, double ra, const Vec3& cb, double rb) {
  return std::max(ra + rb - (ca - cb).norm(), 0.0);
}

double e_joint(const Eigen::VectorXd& theta, const Eigen::VectorXd& lower,
               const Eigen::VectorXd& upper) {
  return (theta - upper).cwiseMax(0.0).sum() + (lower - theta).cwiseMax(0.0).sum();
}

namespace {

// Accumulates w·dE/dg from per-point world-frame gradients, pushing them
// through the base pose and the joint chain.
class GradientSink {
 public:
  GradientSink(const hand::HandSpec& spec, const hand::Kinematics& kin, const hand::GraspConfig& g,
               Eigen::VectorXd* grad)
      : spec_(spec), kin_(kin), grad_(grad) {
    if (grad_) {
      grad_->setZero(static_cast<Eigen::Index>(spec.grasp_dim()));
      dR_ = hand::rot6d_jacobian(g.r);
      M_.setZero();
    }
  }

  bool active() const { return grad_ != nullptr; }

  // x = R y + p with y in the base frame, y attached to `link` (or -1 if the
  // point is rigid with the base). e = dE/dx in world.
  void point(int link, const Vec3& y, const Vec3& e) {
    grad_->head<3>() += e;
    M_ += e * y.transpose();
    if (link >= 0) joints_point(link, y, kin_.base_rotation.transpose() * e);
  }

  // Hand point against geometry rigid with the base: only joints matter.
  // e_base = dE/dy in the base frame.
  void joints_point(int link, const Vec3& y, const Vec3& e_base) {
    for (int k : spec_.link_chain[link]) {
      const Vec3& w = kin_.joint_axis_base[k];
      (*grad_)[9 + k] += (y - kin_.joint_origin_base[k]).cross(e_base).dot(w);
    }
  }

  // n = R n_b, n_b rotated by the chain of `link`. e = dE/dn in world.
  void normal(int link, const Vec3& n_base, const Vec3& e) {
    M_ += e * n_base.transpose();
    const Vec3 e_base = kin_.base_rotation.transpose() * e;
    for (int k : spec_.link_chain[link])
      (*grad_)[9 + k] += n_base.cross(e_base).dot(kin_.joint_axis_base[k]);
  }

  void joint(int k, double v) { (*grad_)[9 + k] += v; }

  void finish() {
    if (!grad_) return;
    for (int i = 0; i < 6; ++i) (*grad_)[3 + i] += dR_[i].cwiseProduct(M_).sum();
  }

 private:
  const hand::HandSpec& spec_;
  const hand::Kinematics& kin_;
  Eigen::VectorXd* grad_;
  std::array<Mat3, 6> dR_;
  Mat3 M_;
};


EnergyBreakdown evaluate(const SceneState& scene, const ContactChoice& choice,
                         const hand::GraspConfig& g, const EnergyWeights& w,
                         Eigen::VectorXd* grad) {
  if (scene.hand == nullptr || !scene.target) throw Error("energy: scene has no hand or target");
  const hand::HandSpec& spec = *scene.hand;
  const hand::Kinematics kin = hand::compute_kinematics(spec, g);
  const Mat3& R = kin.base_rotation;
  const Pose target_inv = scene.target_pose.inverse();
  const Mat3 target_R = scene.target_pose.linear();
  const Vec3 target_origin = scene.target_pose.translation();
  const geometry::SdfGrid& sdf = scene.target->sdf;

  GradientSink sink(spec, kin, g, grad);
  EnergyBreakdown out;

  // Force closure and contact distance on the two chosen candidates.
  {
    const hand::ContactCandidate* cc[2] = {&choice.first, &choice.second};
    Vec3 y[2], x[2], nb[2], n[2];
    for (int j = 0; j < 2; ++j) {
      const Pose& Tl = kin.link_base[cc[j]->link];
      y[j] = Tl * cc[j]->point;
      x[j] = R * y[j] + g.p;
      nb[j] = Tl.linear() * cc[j]->normal;
      n[j] = R * nb[j];
    }
    const Vec3 xr1 = x[0] - target_origin, xr2 = x[1] - target_origin;
    const Vec3 f = n[0] + n[1];
    const Vec3 tau = xr1.cross(n[0]) + xr2.cross(n[1]);
    out.terms[kFc] = f.squaredNorm() + tau.squaredNorm();
    if (sink.active() && w.w[kFc] != 0) {
      const double k = w.w[kFc];
      sink.point(cc[0]->link, y[0], k * 2.0 * n[0].cross(tau));
      sink.point(cc[1]->link, y[1], k * 2.0 * n[1].cross(tau));
      sink.normal(cc[0]->link, nb[0], k * (2.0 * f + 2.0 * tau.cross(xr1)));
      sink.normal(cc[1]->link, nb[1], k * (2.0 * f + 2.0 * tau.cross(xr2)));
    }
    for (int j = 0; j < 2; ++j) {
      const geometry::SdfSample s = sdf.query(target_inv * x[j]);
      if (s.value > 0) {
        out.terms[kDis] += s.value;
        if (sink.active() && w.w[kDis] != 0)
          sink.point(cc[j]->link, y[j], w.w[kDis] * (target_R * s.gradient));
      }
    }
  }

  // Hand points into the target and into held objects.
  {
    std::vector<Pose> held_inv;
    for (const HeldObject& h : scene.held) held_inv.push_back(h.in_base.inverse());
    for (std::size_t l = 0; l < spec.links.size(); ++l) {
      const Pose& Tl = kin.link_base[l];
      const int link = static_cast<int>(l);
      for (const Vec3& q : spec.links[l].points) {
        const Vec3 y = Tl * q;
        const Vec3 x = R * y + g.p;
        const geometry::SdfSample s = sdf.query(target_inv * x);
        if (s.value < 0) {
          out.terms[kHop] -= s.value;
          if (sink.active() && w.w[kHop] != 0) sink.point(link, y, -w.w[kHop] * (target_R * s.gradient));
        }
        for (std::size_t h = 0; h < scene.held.size(); ++h) {
          const geometry::SdfSample sh = scene.held[h].object->sdf.query(held_inv[h] * y);
          if (sh.value < 0) {
            out.terms[kHop] -= sh.value;
            if (sink.active() && w.w[kHop] != 0)
              sink.joints_point(link, y, -w.w[kHop] * (scene.held[h].in_base.linear() * sh.gradient));
          }
        }
      }
    }
  }

  // Self penetration between collision spheres.
  for (const hand::SpherePair& sp : spec.collision_pairs) {
    const hand::Sphere& a = spec.links[sp.link_a].spheres[sp.sphere_a];
    const hand::Sphere& b = spec.links[sp.link_b].spheres[sp.sphere_b];
    const Vec3 ca = kin.link_base[sp.link_a] * a.center;
    const Vec3 cb = kin.link_base[sp.link_b] * b.center;
    const Vec3 d = ca - cb;
    const double dist = d.norm();
    const double ov = a.radius + b.radius - dist;
    if (ov <= 0) continue;
    out.terms[kHsp] += ov;
    if (sink.active() && w.w[kHsp] != 0 && dist > 0) {
      const Vec3 u = d / dist;
      sink.joints_point(sp.link_a, ca, -w.w[kHsp] * u);
      sink.joints_point(sp.link_b, cb, w.w[kHsp] * u);
    }
  }

  // Joint limits.
  for (std::size_t k = 0; k < spec.dof(); ++k) {
    const double th = g.theta[static_cast<Eigen::Index>(k)];
    const hand::Joint& jt = spec.joints[k];
    if (th > jt.upper) {
      out.terms[kJoint] += th - jt.upper;
      if (sink.active()) sink.joint(static_cast<int>(k), w.w[kJoint]);
    } else if (th < jt.lower) {
      out.terms[kJoint] += jt.lower - th;
      if (sink.active()) sink.joint(static_cast<int>(k), -w.w[kJoint]);
    }
  }

  // Held objects into the target.
  for (const HeldObject& h : scene.held) {
    const geometry::PointCloud& pts = h.object->surface;
    for (Eigen::Index i = 0; i < pts.cols(); ++i) {
      const Vec3 y = h.in_base * Vec3(pts.col(i));
      const Vec3 x = R * y + g.p;
      const geometry::SdfSample s = sdf.query(target_inv * x);
      if (s.value < 0) {
        out.terms[kOop] -= s.value;
        if (sink.active() && w.w[kOop] != 0) sink.point(-1, y, -w.w[kOop] * (target_R * s.gradient));
      }
    }
  }

  sink.finish();
  out.total = weighted_total(out, w);
  return out;
}

}  // namespace

double e_hsp(const hand::HandSpec& spec, const hand::GraspConfig& g) {
  const hand::Kinematics kin = hand::compute_kinematics(spec, g);
  double s = 0;
  for (const hand::SpherePair& sp : spec.collision_pairs) {
    const hand::Sphere& a = spec.links[sp.link_a].spheres[sp.sphere_a];
    const hand::Sphere& b = spec.links[sp.link_b].spheres[sp.sphere_b];
    s += sphere_overlap(kin.link_base[sp.link_a] * a.center, a.radius,
                        kin.link_base[sp.link_b] * b.center, b.radius);
  }
  return s;
}

double e_oop(const SceneState& scene, const hand::GraspConfig& g) {
  const Pose base = g.base_pose();
  const Pose target_inv = scene.target_pose.inverse();
  double s = 0;
  for (const HeldObject& h : scene.held) {
    const Pose to_target = target_inv * base * h.in_base;
    for (Eigen::Index i = 0; i < h.object->surface.cols(); ++i)
      s += std::max(-scene.target->sdf.value(to_target * Vec3(h.object->surface.col(i))), 0.0);
  }
  return s;
}

ContactPair world_contacts(const SceneState& scene, const ContactChoice& choice,
                           const hand::GraspConfig& g) {
  const std::vector<Pose> T = hand::forward_kinematics(*scene.hand, g);
  const Vec3 o = scene.target_pose.translation();
  ContactPair pair;
  pair.x1 = T[choice.first.link] * choice.first.point - o;
  pair.x2 = T[choice.second.link] * choice.second.point - o;
  pair.c1 = T[choice.first.link].linear() * choice.first.normal;
  pair.c2 = T[choice.second.link].linear() * choice.second.normal;
  return pair;
}

EnergyBreakdown total_energy(const SceneState& scene, const ContactChoice& choice,
                             const hand::GraspConfig& g, const EnergyWeights& w) {
  return evaluate(scene, choice, g, w, nullptr);
}

EnergyWithGradient energy_gradient(const SceneState& scene, const ContactChoice& choice,
                                   const hand::GraspConfig& g, const EnergyWeights& w) {
  EnergyWithGradient out;
  out.energy = evaluate(scene, choice, g, w, &out.gradient);
  return out;
}

}  // namespace seqgrasp::energy
