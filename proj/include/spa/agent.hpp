#pragma once

// History featurization, categorical policy and value networks, and
// behavior cloning of scripted experts.

#include <span>
#include <vector>

#include "spa/common.hpp"
#include "spa/envsim.hpp"
#include "spa/tinynn.hpp"
#include "spa/trajectory.hpp"

namespace spa::agent {

using FeatureVector = std::vector<double>;

// Layout, all entries in [0, 1]:
//   goal encoding | current observation one-hot |
//   K history blocks, most recent first, each
//     (action one-hot | observation one-hot | grounded bit) |
//   t / max_steps
// Slots older than the available history are zero.
class Featurizer {
 public:
  Featurizer(const env::Environment& env, int history_k = 8);

  int width() const { return width_; }
  int history_k() const { return history_k_; }
  int action_count() const { return actions_; }
  const env::Environment& environment() const { return *env_; }

  // Features before acting at step t (0-based), i.e. after traj.steps[0..t).
  // Requires t <= traj.size().
  void encode(const Trajectory& traj, std::size_t t,
              std::span<double> out) const;
  FeatureVector operator()(const Trajectory& traj, std::size_t t) const;

 private:
  const env::Environment* env_;
  int history_k_;
  int actions_;
  int observations_;
  int goal_width_;
  int block_;
  int width_;
};

struct PolicyNet {
  nn::Mlp net;
};

struct ValueNet {
  nn::Mlp net;
};

struct NetShape {
  std::vector<int> hidden = {64, 64};
  nn::Activation activation = nn::Activation::Tanh;
};

PolicyNet make_policy(int feature_width, int action_count,
                      const NetShape& shape, Rng& rng);
ValueNet make_value(int feature_width, const NetShape& shape, Rng& rng);

struct ActionSample {
  int action = 0;
  double logprob = 0.0;
};

// temperature 0: argmax with ties to the lowest id, logprob under the
// untempered softmax. Otherwise a draw from softmax(logits / temperature),
// logprob under that tempered distribution.
ActionSample sample_action(const PolicyNet& policy, std::span<const double> x,
                           double temperature, Rng& rng);
ActionSample sample_from_logits(std::span<const double> logits,
                                double temperature, Rng& rng);

struct BcConfig {
  int epochs = 3;
  int batch_size = 16;  // <= 0 means full batch
  nn::OptimizerConfig optimizer{.kind = nn::OptimizerKind::AdamW,
                                .learning_rate = 1e-3,
                                .weight_decay = 0.0,
                                .schedule = nn::Schedule::Cosine};
  std::uint64_t shuffle_seed = 0;
};

struct BcResult {
  // Mean NLL over the whole dataset, before training and after each epoch.
  std::vector<double> loss_curve;
};

// Minimises the mean NLL of expert actions given featurized prefixes.
// Observations only enter as inputs. Throws UsageError on an empty dataset
// or a trajectory with reward below 1.
BcResult behavior_clone(PolicyNet& policy, const Featurizer& features,
                        const std::vector<Trajectory>& experts,
                        const BcConfig& config);

// Mean NLL of the dataset's actions under the policy.
double mean_nll(const PolicyNet& policy, const Featurizer& features,
                const std::vector<Trajectory>& trajectories);

// Fraction of steps whose action equals the policy's argmax.
double top1_accuracy(const PolicyNet& policy, const Featurizer& features,
                     const std::vector<Trajectory>& trajectories);

}  // namespace spa::agent
