#pragma once

// PPO with generalized advantage estimation over arbitrary per-step reward
// streams, and trajectory-level policy-gradient baselines.

#include <limits>
#include <span>
#include <string>
#include <vector>

#include "spa/agent.hpp"
#include "spa/common.hpp"
#include "spa/tinynn.hpp"
#include "spa/trajectory.hpp"

namespace spa::rl {

struct PpoConfig {
  double gamma = 0.99;
  double lam = 0.95;
  double clip_eps = 0.2;
  int ppo_epochs = 4;
  int minibatch_size = 64;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double max_grad_norm = 1.0;
  bool normalize_advantages = true;

  // Throws ConfigError. clip_eps may be +inf (clipping disabled), which is
  // only used by the analytic checks; run configs restrict it to (0, 1).
  void validate() const;
};

struct AdvantageBatch {
  std::vector<double> deltas;
  std::vector<double> advantages;
  std::vector<double> returns_to_go;  // discounted, bootstrapped
  std::vector<double> value_targets;  // advantages + values
};

// delta_t = r_t + gamma V_{t+1} - V_t with V_n = bootstrap, and
// A_t = sum_k (gamma lam)^k delta_{t+k}, evaluated by the backward
// recursion. Throws UsageError on length mismatch.
AdvantageBatch compute_gae(std::span<const double> rewards,
                           std::span<const double> values, double bootstrap,
                           double gamma, double lam);

struct VanishingRow {
  int t = 0;  // 1-based decision step
  double value = 0.0;
  double delta = 0.0;
  double advantage = 0.0;
  double closed_form = 0.0;  // (gamma lam)^(n-1-t) * delta_{n-1}
};

struct VanishingReport {
  int n = 0;
  double gamma = 0.0;
  double lam = 0.0;
  double expected_reward = 0.0;
  double realized_reward = 0.0;
  std::vector<VanishingRow> rows;  // t = 1 .. n-1
  double max_intermediate_delta = 0.0;
  double max_closed_form_gap = 0.0;
  bool verified = false;
};

// Sparse-reward advantages under a converged critic: V(s_{n-1}) = E[r_n],
// V(s_t) = gamma V(s_{t+1}) further back, V(s_n) = 0, and the only reward is
// r_n at the last transition. Advantages come from compute_gae and are
// checked against the closed form. Throws UsageError if n < 2.
VanishingReport vanishing_advantage_report(int n, double gamma, double lam,
                                           double expected_reward,
                                           double realized_reward);

// Per-sample clipped objective min(ratio A, clip(ratio, 1-eps, 1+eps) A).
double clipped_surrogate(double ratio, double advantage, double clip_eps);
// Its derivative with respect to the new log-probability.
double clipped_surrogate_grad(double ratio, double advantage, double clip_eps);

struct PpoSample {
  agent::FeatureVector x;
  int action = 0;
  double old_logprob = 0.0;
  double advantage = 0.0;
  double value_target = 0.0;
};

// Featurizes every step, evaluates the critic, runs GAE per trajectory
// (bootstrap 0: every stored episode has ended) and optionally normalizes
// advantages over the whole batch.
std::vector<PpoSample> build_samples(const agent::Featurizer& features,
                                     const agent::ValueNet& value,
                                     std::span<const Trajectory> batch,
                                     std::span<const std::vector<double>> rewards,
                                     const PpoConfig& config);

struct PpoStats {
  double policy_loss = 0.0;  // negated clipped surrogate
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;  // mean(old_logp - new_logp)
  int updates = 0;
};

struct PpoOptimizers {
  nn::Optimizer policy;
  nn::Optimizer value;
};

PpoOptimizers make_ppo_optimizers(const agent::PolicyNet& policy,
                                  const agent::ValueNet& value,
                                  const nn::OptimizerConfig& config);

// Zeroes both networks' gradients and accumulates the minibatch loss
//   -surrogate - entropy_coef * H + value_coef * (V - target)^2
// averaged over the given samples. Returns the loss parts.
PpoStats ppo_minibatch_gradients(agent::PolicyNet& policy,
                                 agent::ValueNet& value,
                                 std::span<const PpoSample> samples,
                                 std::span<const std::size_t> indices,
                                 const PpoConfig& config);

// ppo_epochs passes of shuffled minibatches with gradient-norm clipping.
// Throws NumericError with batch diagnostics if a loss is non-finite.
PpoStats ppo_update(agent::PolicyNet& policy, agent::ValueNet& value,
                    std::span<const PpoSample> samples,
                    const PpoConfig& config, PpoOptimizers& opts, Rng& rng);

PpoStats ppo_update(agent::PolicyNet& policy, agent::ValueNet& value,
                    const agent::Featurizer& features,
                    std::span<const Trajectory> batch,
                    std::span<const std::vector<double>> rewards,
                    const PpoConfig& config, PpoOptimizers& opts, Rng& rng);

enum class TrajectoryBaseline { Reinforce, Rloo, GrpoStyle };

std::string to_string(TrajectoryBaseline k);
TrajectoryBaseline trajectory_baseline_from_string(const std::string& s);

// Per-trajectory weights for one task group:
//   reinforce   R_j
//   rloo        R_j - mean of the other rollouts
//   grpo_style  (R_j - mean) / (population std + 1e-8)
// Throws UsageError for a group smaller than 2 under rloo / grpo_style.
std::vector<double> trajectory_weights(std::span<const double> rewards,
                                       TrajectoryBaseline kind);

struct BaselineStats {
  double loss = 0.0;
  double grad_norm = 0.0;
  double mean_weight = 0.0;
};

// One gradient step on -(1 / steps) sum_j w_j sum_t log pi(a_t | s_t), with
// groups formed by task id in batch order.
BaselineStats trajectory_baseline_update(agent::PolicyNet& policy,
                                         const agent::Featurizer& features,
                                         std::span<const Trajectory> batch,
                                         TrajectoryBaseline kind,
                                         nn::Optimizer& opt,
                                         double max_grad_norm);

}  // namespace spa::rl
