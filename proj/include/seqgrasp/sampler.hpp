#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "seqgrasp/energy.hpp"
#include "seqgrasp/hand_model.hpp"
#include "seqgrasp/rng.hpp"

namespace seqgrasp::sampler {

enum class AcceptanceRule {
  Metropolis,    // accept with min(1, exp((E - E_hat) / T))
  PrintedRatio,  // accept iff E_hat / E >= u (compatibility mode)
};

struct SamplerParams {
  int n_steps = 2000;
  double step_p = 0.005;      // m
  double step_r = 0.02;       // 6D rotation units
  double step_theta = 0.02;   // rad
  bool anneal_step = true;    // scale steps by sqrt(T / T_start)
  double rms_decay = 0.95;    // gradient second-moment smoothing
  double t_start = 1.0;
  double t_end = 1e-2;
  double noise = 0.5;         // noise = noise * sqrt(2 T) per unit step
  double p_accept = 0.1;      // contact resampling probability
  double w_hop_start = 5.0;
  double w_hop_end = 500.0;
  energy::EnergyWeights weights;  // w_hop is overridden by the ramp
  double hull_offset = 0.10;  // m
  AcceptanceRule rule = AcceptanceRule::Metropolis;
  bool keep_trace = false;

  void validate() const;
  double temperature(int step) const;
  energy::EnergyWeights weights_at(int step) const;
  /// Weights at the last step; used to rank visited states.
  energy::EnergyWeights final_weights() const;
};

// ---------------------------------------------------------------------------
// Generic kernel

using EnergyFn = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

struct MalaState {
  Eigen::VectorXd x;
  double energy = 0.0;
  Eigen::VectorXd grad;
};

struct MalaOutcome {
  bool accepted = false;
  bool nonfinite = false;
  double proposal_energy = 0.0;
};

/// Acceptance test. Always draws exactly one uniform so streams stay aligned.
bool accept_proposal(double e_current, double e_proposal, double temperature, AcceptanceRule rule,
                     Rng& rng);

/// x_hat = x − step ⊙ (direction + noise·ξ). Entries with step == 0 are
/// copied bit-for-bit and draw no noise.
MalaOutcome mala_step(MalaState& state, const EnergyFn& f, const Eigen::VectorXd& direction,
                      const Eigen::VectorXd& step, double noise, double temperature,
                      AcceptanceRule rule, Rng& rng);

// ---------------------------------------------------------------------------
// Grasp chains

struct ChainStats {
  int accepted = 0;
  int rejected = 0;
  int nonfinite = 0;
  int resamples = 0;
  int evaluations = 0;
};

struct ChainState {
  hand::GraspConfig g;
  int contact_a = -1, contact_b = -1;  // indices into the OS contact list
  energy::EnergyBreakdown energy;       // terms at g (total under the weights last used)
  Eigen::VectorXd gradient;
  Eigen::VectorXd rms;
  Eigen::VectorXd theta_start;          // θ at chain start, for frozen-entry checks
  ChainStats stats;
};

/// Palm toward the hull centroid from a point on the expanded hull, random
/// roll about that axis. θ is the rest pose for the first grasp, otherwise
/// `prev_theta` verbatim.
hand::GraspConfig init_grasp(const energy::SceneState& scene, const hand::HandSpec& spec,
                             const Eigen::VectorXd* prev_theta, double hull_offset, Rng& rng);

/// One side-A and one side-B candidate index, each uniform within its side.
std::pair<int, int> sample_contact_pair(const hand::OppositionSpace& os, Rng& rng);

energy::ContactChoice contact_choice(const hand::OppositionSpace& os, int a, int b);

/// Per-dimension step sizes for iteration `step`: (p, r, θ ⊙ J).
Eigen::VectorXd step_vector(const SamplerParams& params, const hand::JointMask& mask, int step);

/// One masked proposal with acceptance under the weights of iteration `step`.
MalaOutcome mala_step(ChainState& chain, const hand::OppositionSpace& os,
                      const energy::SceneState& scene, const SamplerParams& params, int step,
                      Rng& rng);

/// Bernoulli(p_accept) gate, then a uniform redraw and re-evaluation.
bool resample_contacts(ChainState& chain, const hand::OppositionSpace& os,
                       const energy::SceneState& scene, const energy::EnergyWeights& w,
                       double p_accept, Rng& rng);

struct OptimizeResult {
  hand::GraspConfig g;
  int contact_a = -1, contact_b = -1;
  energy::EnergyBreakdown energy;  // total under final weights
  std::vector<double> trace;       // objective per visited state, entry 0 = init
  ChainStats stats;
  bool frozen_intact = true;       // θ outside the mask never changed
};

/// init_grasp followed by n_steps of mala_step + resample_contacts. Returns
/// the visited state with the lowest energy under the final weights.
OptimizeResult optimize_grasp(const energy::SceneState& scene, const hand::OppositionSpace& os,
                              const Eigen::VectorXd* prev_theta, const SamplerParams& params,
                              Rng& rng);

// ---------------------------------------------------------------------------
// Sequences

enum class Termination { AllObjectsDone, OsExhausted };
const char* to_string(Termination t);

struct GraspResult {
  int os_id = -1;
  std::string os_label;
  hand::JointMask mask;
  hand::GraspConfig g;
  int contact_a = -1, contact_b = -1;
  energy::EnergyBreakdown energy;
  int chain = -1;
  bool chain_accepted = false;  // chosen chain passed the selection predicate
  energy::Pose object_in_base = energy::Pose::Identity();
  std::vector<int> os_remaining;  // ids still available after consumption
};

struct GraspSequenceResult {
  std::vector<GraspResult> grasps;
  Termination reason = Termination::AllObjectsDone;
};

/// Context handed to the chain selection predicate.
struct ChainCandidate {
  const energy::SceneState& scene;
  const hand::OppositionSpace& os;
  const OptimizeResult& result;
};
using ChainPredicate = std::function<bool(const ChainCandidate&)>;

struct SequenceOptions {
  int chains = 64;
  int jobs = 1;
  ChainPredicate accept;  // optional
};

/// Every target is placed at the world origin. After a grasp its pose is
/// re-expressed in the hand base frame and held there.
GraspSequenceResult seqgrasp(const std::vector<std::shared_ptr<const energy::ObjectModel>>& objects,
                             const hand::HandSpec& spec, const SamplerParams& params,
                             const SequenceOptions& options, std::uint64_t seed);

/// Runs fn(i) for i in [0, count) on up to `jobs` threads. Exceptions from
/// workers are rethrown (the first one) after all threads join.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace seqgrasp::sampler
