#include "spa/theory.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace spa::theory {

EnumerableMdp EnumerableMdp::random(int states, int actions, int horizon,
                                    Rng& rng) {
  EnumerableMdp m;
  m.states = states;
  m.actions = actions;
  m.horizon = horizon;
  m.transition.resize(static_cast<std::size_t>(states) * actions * states);
  for (int s = 0; s < states; ++s) {
    for (int a = 0; a < actions; ++a) {
      double total = 0.0;
      for (int n = 0; n < states; ++n) {
        const double w = 0.05 + uniform01(rng);
        m.transition[(static_cast<std::size_t>(s) * actions + a) * states + n] = w;
        total += w;
      }
      for (int n = 0; n < states; ++n) {
        m.transition[(static_cast<std::size_t>(s) * actions + a) * states + n] /= total;
      }
    }
  }
  m.terminal_reward.resize(states);
  for (double& r : m.terminal_reward) r = uniform01(rng);
  return m;
}

int EnumerableMdp::history_width() const {
  return horizon * (actions + states) + horizon + 1;
}

std::vector<double> EnumerableMdp::encode(
    const std::vector<int>& actions_taken,
    const std::vector<int>& observed) const {
  std::vector<double> x(history_width(), 0.0);
  const int block = actions + states;
  for (std::size_t k = 0; k < actions_taken.size(); ++k) {
    x[k * block + actions_taken[k]] = 1.0;
    x[k * block + actions + observed[k]] = 1.0;
  }
  x[horizon * block + actions_taken.size()] = 1.0;
  return x;
}

GradientComparison compare_policy_gradients(const EnumerableMdp& mdp,
                                            nn::Mlp& policy,
                                            const nn::Mlp& potential,
                                            double terminal_offset) {
  const std::size_t np = policy.params().size();
  GradientComparison out;
  out.sparse.assign(np, 0.0);
  out.shaped.assign(np, 0.0);

  std::vector<int> acts;
  std::vector<int> obs;
  // grad log pi at each depth of the current path, and phi(e_t) per depth.
  std::vector<std::vector<double>> score(mdp.horizon, std::vector<double>(np));
  std::vector<double> phi(mdp.horizon + 1, 0.0);

  std::function<void(int, int, double)> visit = [&](int depth, int state,
                                                    double prob) {
    if (depth == mdp.horizon) {
      const double reward = mdp.terminal_reward[state];
      phi[depth] = reward;
      if (terminal_offset != 0.0) {
        phi[depth] += terminal_offset * potential.predict(mdp.encode(acts, obs))[0];
      }
      for (int t = 0; t < mdp.horizon; ++t) {
        // Return from step t+1 onward under the contributions.
        const double shaped_return = phi[mdp.horizon] - phi[t];
        for (std::size_t i = 0; i < np; ++i) {
          out.sparse[i] += prob * reward * score[t][i];
          out.shaped[i] += prob * shaped_return * score[t][i];
        }
      }
      return;
    }
    const auto x = mdp.encode(acts, obs);
    const auto logits = policy.predict(x);
    const auto pi = nn::softmax(logits);
    for (int a = 0; a < mdp.actions; ++a) {
      policy.zero_grad();
      policy.forward(x);
      auto lp = nn::softmax_logprob(logits, a);
      for (double& g : lp.nll_grad) g = -g;  // gradient of log pi
      policy.backward(lp.nll_grad);
      std::copy(policy.grads().begin(), policy.grads().end(),
                score[depth].begin());
      for (int next = 0; next < mdp.states; ++next) {
        const double p = mdp.p(state, a, next);
        acts.push_back(a);
        obs.push_back(next);
        if (depth + 1 < mdp.horizon) {
          phi[depth + 1] = potential.predict(mdp.encode(acts, obs))[0];
        }
        visit(depth + 1, next, prob * pi[a] * p);
        acts.pop_back();
        obs.pop_back();
      }
    }
  };
  phi[0] = 0.0;
  visit(0, mdp.initial_state, 1.0);

  for (std::size_t i = 0; i < np; ++i) {
    out.max_abs_diff =
        std::max(out.max_abs_diff, std::abs(out.sparse[i] - out.shaped[i]));
    out.max_abs_component =
        std::max(out.max_abs_component, std::abs(out.sparse[i]));
  }
  return out;
}

InvarianceReport policy_gradient_invariance(int trials, std::uint64_t seed,
                                            int states, int actions,
                                            int horizon) {
  InvarianceReport rep;
  rep.trials = trials;
  for (int k = 0; k < trials; ++k) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    const auto mdp = EnumerableMdp::random(states, actions, horizon, rng);
    nn::Mlp policy({mdp.history_width(), 8, actions}, nn::Activation::Tanh);
    policy.init_glorot(rng);
    // Larger weights make the policy far from uniform.
    for (double& p : policy.params()) p *= 3.0;
    nn::Mlp potential({mdp.history_width(), 8, 1}, nn::Activation::Tanh);
    potential.init_glorot(rng);
    for (double& p : potential.params()) p *= 2.0;

    const auto exact = compare_policy_gradients(mdp, policy, potential);
    const auto off = compare_policy_gradients(mdp, policy, potential, 0.25);
    rep.per_trial_diff.push_back(exact.max_abs_diff);
    rep.worst_diff = std::max(rep.worst_diff, exact.max_abs_diff);
    rep.worst_miscalibrated_diff =
        std::max(rep.worst_miscalibrated_diff, off.max_abs_diff);
  }
  return rep;
}

}  // namespace spa::theory
