#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "fd_oracle.hpp"
#include "spa/theory.hpp"

using namespace spa;
using namespace spa::theory;

namespace {

// Exact expected terminal reward by enumerating every history.
double expected_return(const EnumerableMdp& mdp, const nn::Mlp& policy) {
  std::vector<int> acts, obs;
  std::function<double(int, int)> value = [&](int depth, int state) {
    if (depth == mdp.horizon) return mdp.terminal_reward[state];
    const auto logits = policy.predict(mdp.encode(acts, obs));
    double v = 0.0;
    for (int a = 0; a < mdp.actions; ++a) {
      const double pa = std::exp(nn::softmax_logprob(logits, a).value);
      for (int next = 0; next < mdp.states; ++next) {
        acts.push_back(a);
        obs.push_back(next);
        v += pa * mdp.p(state, a, next) * value(depth + 1, next);
        acts.pop_back();
        obs.pop_back();
      }
    }
    return v;
  };
  return value(0, mdp.initial_state);
}

struct Instance {
  EnumerableMdp mdp;
  nn::Mlp policy;
  nn::Mlp potential;
};

Instance make_instance(std::uint64_t seed, int states = 3, int actions = 3,
                       int horizon = 3) {
  Rng rng(seed);
  Instance in;
  in.mdp = EnumerableMdp::random(states, actions, horizon, rng);
  in.policy = nn::Mlp({in.mdp.history_width(), 6, actions}, nn::Activation::Tanh);
  in.policy.init_glorot(rng);
  for (double& p : in.policy.params()) p *= 3.0;
  in.potential = nn::Mlp({in.mdp.history_width(), 6, 1}, nn::Activation::Tanh);
  in.potential.init_glorot(rng);
  for (double& p : in.potential.params()) p *= 2.0;
  return in;
}

}  // namespace

TEST(Mdp, RandomIsStochastic) {
  Rng rng(1);
  const auto m = EnumerableMdp::random(3, 3, 3, rng);
  for (int s = 0; s < 3; ++s) {
    for (int a = 0; a < 3; ++a) {
      double total = 0.0;
      for (int n = 0; n < 3; ++n) {
        EXPECT_GT(m.p(s, a, n), 0.0);
        total += m.p(s, a, n);
      }
      EXPECT_NEAR(total, 1.0, 1e-15);
    }
  }
  for (double r : m.terminal_reward) {
    EXPECT_GE(r, 0.0);
    EXPECT_LT(r, 1.0);
  }
}

TEST(Mdp, EncodingIsOneHotPerSlot) {
  Rng rng(2);
  const auto m = EnumerableMdp::random(3, 2, 3, rng);
  const auto x = m.encode({1, 0}, {2, 1});
  ASSERT_EQ(static_cast<int>(x.size()), m.history_width());
  double ones = 0;
  for (double v : x) ones += v;
  EXPECT_EQ(ones, 5.0);
  EXPECT_EQ(x[1], 1.0);
  EXPECT_EQ(x[2 + 2], 1.0);
  EXPECT_EQ(x[5 + 0], 1.0);
  EXPECT_EQ(x[5 + 2 + 1], 1.0);
  EXPECT_EQ(x[3 * 5 + 2], 1.0);
}

TEST(Invariance, SparseGradientMatchesFiniteDifferenceOfExactReturn) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto in = make_instance(seed);
    const auto cmp = compare_policy_gradients(in.mdp, in.policy, in.potential);
    const auto numeric = fd::gradient(
        in.policy.params(), [&] { return expected_return(in.mdp, in.policy); }, 1e-5);
    EXPECT_LT(fd::max_rel_error(cmp.sparse, numeric), 1e-4) << seed;
  }
}

TEST(Invariance, PotentialRewardsPreserveExactGradient) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto in = make_instance(100 + seed);
    const auto cmp = compare_policy_gradients(in.mdp, in.policy, in.potential);
    ASSERT_EQ(cmp.sparse.size(), in.policy.params().size());
    EXPECT_GT(cmp.max_abs_component, 1e-3);
    for (std::size_t i = 0; i < cmp.sparse.size(); ++i) {
      EXPECT_NEAR(cmp.shaped[i], cmp.sparse[i], 1e-10);
    }
  }
}

TEST(Invariance, MiscalibratedTerminalPotentialBreaksIt) {
  auto in = make_instance(7);
  const auto off = compare_policy_gradients(in.mdp, in.policy, in.potential, 0.25);
  EXPECT_GT(off.max_abs_diff, 1e-4);
}

TEST(Invariance, Report) {
  const auto rep = policy_gradient_invariance(20, 42);
  EXPECT_EQ(rep.trials, 20);
  ASSERT_EQ(rep.per_trial_diff.size(), 20u);
  EXPECT_LE(rep.worst_diff, 1e-10);
  EXPECT_GT(rep.worst_miscalibrated_diff, 1e-4);
}

TEST(Invariance, SmallerShapes) {
  for (int h = 1; h <= 3; ++h) {
    for (int a = 2; a <= 3; ++a) {
      const auto rep = policy_gradient_invariance(3, 9, 2, a, h);
      EXPECT_LE(rep.worst_diff, 1e-10) << h << " " << a;
    }
  }
}
