#pragma once

// Exact, enumeration-based checks of the redistribution theory on small
// random MDPs: expected policy gradients are computed by summing over every
// history weighted by its probability, with no sampling.

#include <vector>

#include "spa/common.hpp"
#include "spa/tinynn.hpp"

namespace spa::theory {

// Tabular MDP with a fixed horizon. The agent observes the state id after
// each action; the only reward is terminal_reward[s_n].
struct EnumerableMdp {
  int states = 3;
  int actions = 3;
  int horizon = 3;
  int initial_state = 0;
  // transition[(s * actions + a) * states + s'] = P(s' | s, a)
  std::vector<double> transition;
  std::vector<double> terminal_reward;

  static EnumerableMdp random(int states, int actions, int horizon, Rng& rng);
  double p(int s, int a, int next) const {
    return transition[(static_cast<std::size_t>(s) * actions + a) * states + next];
  }
  // One-hot (action, observation) slot per past step plus a step one-hot.
  int history_width() const;
  std::vector<double> encode(const std::vector<int>& actions_taken,
                             const std::vector<int>& observed) const;
};

struct GradientComparison {
  std::vector<double> sparse;  // E[sum_t grad log pi(a_t|e_{t-1}) * R]
  std::vector<double> shaped;  // same with G_t = sum_{k>=t} c_k
  double max_abs_diff = 0.0;
  double max_abs_component = 0.0;
};

// Contributions c_t = phi(e_t) - phi(e_{t-1}) with phi(e_0) = 0. phi is
// `potential` on intermediate histories; on complete histories it is the
// terminal reward plus terminal_offset * potential(e_n) (offset 0 is a
// calibrated estimator). The policy is a softmax over policy(encode(e_{t-1})).
GradientComparison compare_policy_gradients(const EnumerableMdp& mdp,
                                            nn::Mlp& policy,
                                            const nn::Mlp& potential,
                                            double terminal_offset = 0.0);

struct InvarianceReport {
  int trials = 0;
  double worst_diff = 0.0;
  double worst_miscalibrated_diff = 0.0;
  std::vector<double> per_trial_diff;
};

// Repeats compare_policy_gradients over `trials` random MDPs, policies and
// potentials; also records the gap when phi(e_n) is offset from R.
InvarianceReport policy_gradient_invariance(int trials, std::uint64_t seed,
                                            int states = 3, int actions = 3,
                                            int horizon = 3);

}  // namespace spa::theory
