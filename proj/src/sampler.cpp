#include "seqgrasp/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numbers>
#include <numeric>
#include <thread>

#include "seqgrasp/error.hpp"

namespace seqgrasp::sampler {

namespace {
constexpr std::uint64_t kOsStream = 0x05E1EC7ULL << 32;
}

void SamplerParams::validate() const {
  if (n_steps < 0) throw SpecError("sampler: n_steps must be >= 0");
  if (!(step_p > 0 && step_r > 0 && step_theta > 0)) throw SpecError("sampler: step sizes must be > 0");
  if (!(p_accept >= 0 && p_accept <= 1)) throw SpecError("sampler: p_accept must lie in [0, 1]");
  if (!(t_start > 0 && t_end > 0)) throw SpecError("sampler: temperatures must be > 0");
  if (!(noise >= 0)) throw SpecError("sampler: noise must be >= 0");
  if (!(rms_decay >= 0 && rms_decay < 1)) throw SpecError("sampler: rms_decay must lie in [0, 1)");
  if (!(hull_offset > 0)) throw SpecError("sampler: hull_offset must be > 0");
  if (!(w_hop_start >= 0 && w_hop_end >= 0)) throw SpecError("sampler: w_hop ramp must be >= 0");
  weights.validate();
}

namespace {
double progress(int step, int n_steps) {
  return n_steps <= 1 ? 1.0 : static_cast<double>(step) / (n_steps - 1);
}
}  // namespace

double SamplerParams::temperature(int step) const {
  return t_start * std::pow(t_end / t_start, progress(step, n_steps));
}

energy::EnergyWeights SamplerParams::weights_at(int step) const {
  energy::EnergyWeights w = weights;
  w.w[energy::kHop] = w_hop_start + (w_hop_end - w_hop_start) * progress(step, n_steps);
  return w;
}

energy::EnergyWeights SamplerParams::final_weights() const {
  energy::EnergyWeights w = weights;
  w.w[energy::kHop] = w_hop_end;
  return w;
}

// ---------------------------------------------------------------------------

bool accept_proposal(double e_current, double e_proposal, double temperature, AcceptanceRule rule,
                     Rng& rng) {
  const double u = rng.uniform();
  if (!std::isfinite(e_proposal)) return false;
  if (rule == AcceptanceRule::PrintedRatio) {
    if (e_current == 0.0) return e_proposal == 0.0;
    return e_proposal / e_current >= u;
  }
  if (e_proposal <= e_current) return true;
  return u < std::exp((e_current - e_proposal) / temperature);
}

MalaOutcome mala_step(MalaState& state, const EnergyFn& f, const Eigen::VectorXd& direction,
                      const Eigen::VectorXd& step, double noise, double temperature,
                      AcceptanceRule rule, Rng& rng) {
  const Eigen::Index n = state.x.size();
  Eigen::VectorXd proposal = state.x;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (step[i] == 0.0) continue;
    proposal[i] = state.x[i] - step[i] * (direction[i] + noise * rng.normal());
  }
  MalaOutcome out;
  Eigen::VectorXd grad;
  out.proposal_energy = f(proposal, &grad);
  out.nonfinite = !std::isfinite(out.proposal_energy);
  out.accepted = accept_proposal(state.energy, out.proposal_energy, temperature, rule, rng);
  if (out.accepted) {
    state.x = std::move(proposal);
    state.energy = out.proposal_energy;
    state.grad = std::move(grad);
  }
  return out;
}

// ---------------------------------------------------------------------------

hand::GraspConfig init_grasp(const energy::SceneState& scene, const hand::HandSpec& spec,
                             const Eigen::VectorXd* prev_theta, double hull_offset, Rng& rng) {
  if (!scene.target) throw Error("init_grasp: scene has no target");
  const geometry::HullSample s = geometry::expanded_hull_sample(scene.target->hull, hull_offset, rng);
  const Eigen::Vector3d position = scene.target_pose * s.position;
  const Eigen::Vector3d inward = (scene.target_pose.linear() * s.inward).normalized();
  const Eigen::Matrix3d R0 =
      Eigen::Quaterniond::FromTwoVectors(spec.approach_axis, inward).toRotationMatrix();
  const double roll = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const Eigen::Matrix3d R = Eigen::AngleAxisd(roll, inward).toRotationMatrix() * R0;

  hand::GraspConfig g;
  g.p = position;
  g.r = hand::matrix_to_rot6d(R);
  g.theta = prev_theta ? *prev_theta : spec.rest_pose;
  return g;
}

std::pair<int, int> sample_contact_pair(const hand::OppositionSpace& os, Rng& rng) {
  const std::vector<int> a = os.side_indices(hand::Side::A);
  const std::vector<int> b = os.side_indices(hand::Side::B);
  if (a.empty() || b.empty())
    throw SpecError("opposition space '" + os.label + "' lacks candidates on one side");
  const int ia = a[rng.index(a.size())];
  const int ib = b[rng.index(b.size())];
  return {ia, ib};
}

energy::ContactChoice contact_choice(const hand::OppositionSpace& os, int a, int b) {
  return {os.contacts.at(static_cast<std::size_t>(a)), os.contacts.at(static_cast<std::size_t>(b))};
}

Eigen::VectorXd step_vector(const SamplerParams& params, const hand::JointMask& mask, int step) {
  const double scale =
      params.anneal_step ? std::sqrt(params.temperature(step) / params.t_start) : 1.0;
  Eigen::VectorXd v(static_cast<Eigen::Index>(9 + mask.size()));
  v.head<3>().setConstant(params.step_p * scale);
  v.segment<6>(3).setConstant(params.step_r * scale);
  for (std::size_t k = 0; k < mask.size(); ++k)
    v[static_cast<Eigen::Index>(9 + k)] = mask[k] ? params.step_theta * scale : 0.0;
  return v;
}

namespace {

// Energy and gradient at g; returns NaN when g is not representable
// (degenerate rotation columns).
double evaluate(const energy::SceneState& scene, const energy::ContactChoice& choice,
                const hand::GraspConfig& g, const energy::EnergyWeights& w,
                energy::EnergyBreakdown* breakdown, Eigen::VectorXd* grad) {
  try {
    energy::EnergyWithGradient e = energy::energy_gradient(scene, choice, g, w);
    if (breakdown) *breakdown = e.energy;
    if (grad) *grad = std::move(e.gradient);
    return e.energy.total;
  } catch (const Error&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace

MalaOutcome mala_step(ChainState& chain, const hand::OppositionSpace& os,
                      const energy::SceneState& scene, const SamplerParams& params, int step,
                      Rng& rng) {
  const energy::EnergyWeights w = params.weights_at(step);
  const double T = params.temperature(step);
  const energy::ContactChoice choice = contact_choice(os, chain.contact_a, chain.contact_b);

  const double beta = params.rms_decay;
  chain.rms = beta * chain.rms + (1.0 - beta) * chain.gradient.cwiseAbs2();
  const Eigen::VectorXd direction =
      chain.gradient.array() / (chain.rms.array().sqrt() + 1e-12);

  MalaState state{chain.g.to_vector(), energy::weighted_total(chain.energy, w), chain.gradient};
  energy::EnergyBreakdown proposal_breakdown;
  const EnergyFn f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    return evaluate(scene, choice, hand::GraspConfig::from_vector(x), w, &proposal_breakdown, grad);
  };
  const MalaOutcome out = mala_step(state, f, direction, step_vector(params, os.joints, step),
                                    params.noise * std::sqrt(2.0 * T), T, params.rule, rng);
  ++chain.stats.evaluations;
  if (out.nonfinite) ++chain.stats.nonfinite;
  if (out.accepted) {
    ++chain.stats.accepted;
    chain.g = hand::GraspConfig::from_vector(state.x);
    chain.energy = proposal_breakdown;
    chain.gradient = std::move(state.grad);
  } else {
    ++chain.stats.rejected;
  }
  return out;
}

bool resample_contacts(ChainState& chain, const hand::OppositionSpace& os,
                       const energy::SceneState& scene, const energy::EnergyWeights& w,
                       double p_accept, Rng& rng) {
  if (!rng.bernoulli(p_accept)) return false;
  const auto [a, b] = sample_contact_pair(os, rng);
  chain.contact_a = a;
  chain.contact_b = b;
  evaluate(scene, contact_choice(os, a, b), chain.g, w, &chain.energy, &chain.gradient);
  ++chain.stats.resamples;
  ++chain.stats.evaluations;
  return true;
}

OptimizeResult optimize_grasp(const energy::SceneState& scene, const hand::OppositionSpace& os,
                              const Eigen::VectorXd* prev_theta, const SamplerParams& params,
                              Rng& rng) {
  if (!os.joints.any()) throw SpecError("optimize_grasp: opposition space has an empty joint mask");
  const hand::HandSpec& spec = *scene.hand;

  ChainState chain;
  chain.g = init_grasp(scene, spec, prev_theta, params.hull_offset, rng);
  std::tie(chain.contact_a, chain.contact_b) = sample_contact_pair(os, rng);
  chain.theta_start = chain.g.theta;
  const double e0 = evaluate(scene, contact_choice(os, chain.contact_a, chain.contact_b), chain.g,
                             params.weights_at(0), &chain.energy, &chain.gradient);
  if (!std::isfinite(e0)) throw Error("optimize_grasp: initial state has non-finite energy");
  chain.rms = chain.gradient.cwiseAbs2();
  chain.stats.evaluations = 1;

  const energy::EnergyWeights wf = params.final_weights();
  OptimizeResult best;
  best.g = chain.g;
  best.contact_a = chain.contact_a;
  best.contact_b = chain.contact_b;
  best.energy = chain.energy;
  best.energy.total = energy::weighted_total(chain.energy, wf);
  if (params.keep_trace) best.trace.push_back(best.energy.total);

  const auto frozen_ok = [&](const ChainState& c) {
    for (std::size_t k = 0; k < os.joints.size(); ++k) {
      if (os.joints[k]) continue;
      const auto i = static_cast<Eigen::Index>(k);
      if (std::bit_cast<std::uint64_t>(c.g.theta[i]) != std::bit_cast<std::uint64_t>(c.theta_start[i]))
        return false;
    }
    return true;
  };

  for (int step = 0; step < params.n_steps; ++step) {
    mala_step(chain, os, scene, params, step, rng);
    resample_contacts(chain, os, scene, params.weights_at(step), params.p_accept, rng);
    if (!frozen_ok(chain)) best.frozen_intact = false;
    const double obj = energy::weighted_total(chain.energy, wf);
    if (params.keep_trace) best.trace.push_back(obj);
    if (obj < best.energy.total) {
      best.g = chain.g;
      best.contact_a = chain.contact_a;
      best.contact_b = chain.contact_b;
      best.energy = chain.energy;
      best.energy.total = obj;
    }
  }
  best.stats = chain.stats;
  return best;
}

// ---------------------------------------------------------------------------

const char* to_string(Termination t) {
  return t == Termination::AllObjectsDone ? "all_objects_done" : "os_exhausted";
}

void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  if (count == 0) return;
  std::size_t workers = jobs > 0 ? static_cast<std::size_t>(jobs)
                                 : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, count);
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t)
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : threads) th.join();
  if (error) std::rethrow_exception(error);
}

GraspSequenceResult seqgrasp(const std::vector<std::shared_ptr<const energy::ObjectModel>>& objects,
                             const hand::HandSpec& spec, const SamplerParams& params,
                             const SequenceOptions& options, std::uint64_t seed) {
  if (objects.empty()) throw SpecError("seqgrasp: no objects");
  if (spec.os_catalog.empty()) throw SpecError("seqgrasp: hand has no opposition spaces");
  if (options.chains < 1) throw SpecError("seqgrasp: chains must be >= 1");
  params.validate();

  GraspSequenceResult result;
  hand::OSState state = hand::OSState::from_catalog(spec);
  Rng os_rng(derive_seed(seed, kOsStream));
  std::vector<energy::HeldObject> held;
  Eigen::VectorXd prev_theta;
  const auto chains = static_cast<std::size_t>(options.chains);

  for (std::size_t n = 0; n < objects.size(); ++n) {
    if (state.empty()) {
      result.reason = Termination::OsExhausted;
      return result;
    }
    const hand::OppositionSpace os = hand::os_select(state, os_rng);
    energy::SceneState scene;
    scene.hand = &spec;
    scene.target = objects[n];
    scene.held = held;

    std::vector<OptimizeResult> runs(chains);
    std::vector<char> passed(chains, 0);
    parallel_for(chains, options.jobs, [&](std::size_t c) {
      Rng rng(derive_seed(seed, n * chains + c));
      runs[c] = optimize_grasp(scene, os, n == 0 ? nullptr : &prev_theta, params, rng);
      if (options.accept) passed[c] = options.accept({scene, os, runs[c]}) ? 1 : 0;
    });

    std::vector<std::size_t> order(chains);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return runs[a].energy.total < runs[b].energy.total;
    });
    std::size_t pick = order.front();
    bool accepted = false;
    for (std::size_t c : order)
      if (passed[c]) {
        pick = c;
        accepted = true;
        break;
      }
    const OptimizeResult& best = runs[pick];

    GraspResult gr;
    gr.os_id = os.id;
    gr.os_label = os.label;
    gr.mask = os.joints;
    gr.g = best.g;
    gr.contact_a = best.contact_a;
    gr.contact_b = best.contact_b;
    gr.energy = best.energy;
    gr.chain = static_cast<int>(pick);
    gr.chain_accepted = accepted;
    gr.object_in_base = best.g.base_pose().inverse() * scene.target_pose;

    held.push_back({objects[n], gr.object_in_base});
    prev_theta = best.g.theta;
    state = hand::os_consume(state, os.id, os.joints);
    for (const hand::OppositionSpace& o : state.available) gr.os_remaining.push_back(o.id);
    result.grasps.push_back(std::move(gr));
  }
  result.reason = Termination::AllObjectsDone;
  return result;
}

}  // namespace seqgrasp::sampler
