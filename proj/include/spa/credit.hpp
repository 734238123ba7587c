#pragma once

// Progress estimation and reward redistribution.
//
// A progress estimator assigns each step a contribution c_t such that the
// sum over a trajectory predicts its terminal reward. Two parameterizations
// are supported:
//   direct     c_t = net(features(e_{t-1}) ++ onehot(a_t))
//   potential  c_t = phi(e_t) - phi(e_{t-1}), phi = net(features(e_t)),
//              with phi(e_0) = 0, so the contributions telescope to
//              phi(e_n).
// Both are fitted with the same trajectory-level squared error between the
// summed contributions and the observed reward.

#include <span>
#include <string>
#include <vector>

#include "spa/agent.hpp"
#include "spa/common.hpp"
#include "spa/envsim.hpp"
#include "spa/explorer.hpp"
#include "spa/tinynn.hpp"
#include "spa/trajectory.hpp"

namespace spa::credit {

enum class EstimatorMode { Direct, Potential };

std::string to_string(EstimatorMode m);
EstimatorMode estimator_mode_from_string(const std::string& s);

struct ContributionProfile {
  std::vector<double> contributions;
  double predicted_completion = 0.0;  // sum of contributions
};

class ProgressEstimator {
 public:
  // Glorot-initialised network with the given hidden layers.
  ProgressEstimator(const agent::Featurizer& features, EstimatorMode mode,
                    const agent::NetShape& shape, Rng& rng);
  // Adopts an existing network; its input width must match the mode.
  ProgressEstimator(const agent::Featurizer& features, EstimatorMode mode,
                    nn::Mlp net);

  EstimatorMode mode() const { return mode_; }
  int input_width() const;
  nn::Mlp& net() { return net_; }
  const nn::Mlp& net() const { return net_; }
  const agent::Featurizer& features() const { return *features_; }

  ContributionProfile predict(const Trajectory& traj) const;
  // Potential mode only: phi(e_t) for t = 0..n, phi(e_0) = 0.
  std::vector<double> potentials(const Trajectory& traj) const;

  // Adds scale * d/dtheta (R_hat - target)^2 to net().grads() and returns
  // R_hat. The derivative 2 (R_hat - target) reaches every step's network
  // evaluation through the sum.
  double accumulate_gradient(const Trajectory& traj, double target,
                             double scale);

 private:
  void step_input(const Trajectory& traj, std::size_t t,
                  std::span<double> out) const;

  const agent::Featurizer* features_;
  EstimatorMode mode_;
  nn::Mlp net_;
};

struct EstimatorTrainConfig {
  int epochs = 1;
  int batch_size = 8;
  nn::OptimizerConfig optimizer{.kind = nn::OptimizerKind::Adam,
                                .learning_rate = 1e-3};
  std::uint64_t shuffle_seed = 0;
};

struct EstimatorTrainResult {
  // Dataset loss before training and after each epoch.
  std::vector<double> loss_curve;
  // Mean loss of each minibatch, in update order.
  std::vector<double> batch_losses;
};

// (1 / N) * sum over trajectories of (R_hat - R)^2.
double estimator_loss(const ProgressEstimator& est,
                      std::span<const Trajectory> data);

// Throws UsageError on an empty dataset and NumericError on a non-finite
// loss.
EstimatorTrainResult train_estimator(ProgressEstimator& est,
                                     std::span<const Trajectory> data,
                                     const EstimatorTrainConfig& config);
EstimatorTrainResult train_estimator(ProgressEstimator& est,
                                     const explore::ExploreDataset& ds,
                                     const EstimatorTrainConfig& config);

// Checkpoint: a "mode <direct|potential>" line followed by the tinynn
// network format.
void save_estimator(const ProgressEstimator& est, const std::string& path);
ProgressEstimator load_estimator(const agent::Featurizer& features,
                                 const std::string& path);

// r_t = alpha * c_t + beta * g_t for every step. With add_terminal the
// terminal reward is added once more at the final step.
std::vector<double> fuse_rewards(const ContributionProfile& profile,
                                 const std::vector<bool>& grounded,
                                 double alpha, double beta,
                                 bool add_terminal = false,
                                 double terminal_reward = 0.0);

// Monte Carlo values V_0..V_n: V_t is the mean terminal reward of
// `rollouts` policy continuations from the state after the first t
// actions; V_n is the trajectory's own reward.
std::vector<double> mc_values(const env::Environment& env,
                              const agent::Featurizer& features,
                              const agent::PolicyNet& policy,
                              const Trajectory& traj, int rollouts,
                              double temperature, Rng& rng);

// Value-difference redistribution r_t = V_t - V_{t-1}; sums to R - V_0.
std::vector<double> mc_redistribute(const env::Environment& env,
                                    const agent::Featurizer& features,
                                    const agent::PolicyNet& policy,
                                    const Trajectory& traj, int rollouts,
                                    double temperature, Rng& rng);

enum class StrategyKind { Spa, Mc, Random, Mean, None };

std::string to_string(StrategyKind k);
StrategyKind strategy_from_string(const std::string& s);

// random: iid uniform [0, 1] per step.
// mean:   R / n per step; the last step absorbs rounding so the rewards sum
//         to R exactly.
// none:   zero everywhere except r_n = R.
// Throws UsageError for other kinds.
std::vector<double> baseline_redistribute(StrategyKind kind,
                                          const Trajectory& traj, Rng& rng);

struct RedistributionStrategy {
  StrategyKind kind = StrategyKind::None;
  double alpha = 1.0;
  double beta = 0.5;
  bool add_terminal = false;
  int mc_rollouts = 5;
  double mc_temperature = 1.0;
};

// What a strategy may need beyond the trajectory itself.
struct RedistributionContext {
  const env::Environment* env = nullptr;
  const agent::Featurizer* features = nullptr;
  const agent::PolicyNet* policy = nullptr;          // mc
  const ProgressEstimator* estimator = nullptr;      // spa
};

std::vector<double> redistribute(const RedistributionStrategy& strategy,
                                 const RedistributionContext& context,
                                 const Trajectory& traj, Rng& rng);

}  // namespace spa::credit
