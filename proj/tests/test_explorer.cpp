#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "spa/explorer.hpp"
#include "spa/harness.hpp"

using namespace spa;
using namespace spa::explore;

namespace {

struct Fixture {
  std::unique_ptr<env::Environment> env = env::make_environment("chaincraft");
  agent::Featurizer features{*env, 4};
  agent::PolicyNet policy;
  std::vector<env::TaskInstance> tasks;

  explicit Fixture(int task_count = 20) {
    Rng rng(17);
    policy = agent::make_policy(features.width(), features.action_count(),
                                {{16}, nn::Activation::Tanh}, rng);
    for (int i = 0; i < task_count; ++i) tasks.push_back(env->task(i));
  }
};

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST(Explore, Defaults) {
  harness::ExploreSettings s;
  EXPECT_EQ(s.rollouts_per_task, 10);
  EXPECT_EQ(s.temperature, 0.7);
}

TEST(Explore, CountsAndTaskMajorOrder) {
  Fixture f;
  const auto ds = collect(*f.env, f.features, f.policy, f.tasks, 10, 0.7, 99);
  ASSERT_EQ(ds.trajectories.size(), 200u);
  for (std::size_t i = 0; i < f.tasks.size(); ++i) {
    const auto g = ds.group(i);
    ASSERT_EQ(g.size(), 10u);
    for (int j = 0; j < 10; ++j) {
      EXPECT_EQ(g[j].task.task_id, f.tasks[i].task_id);
      EXPECT_EQ(g[j].seed, 99 + i * 10 + j);
    }
  }
}

TEST(Explore, Deterministic) {
  Fixture f;
  const auto a = collect(*f.env, f.features, f.policy, f.tasks, 3, 0.7, 5);
  const auto b = collect(*f.env, f.features, f.policy, f.tasks, 3, 0.7, 5);
  EXPECT_EQ(a, b);
  const auto c = collect(*f.env, f.features, f.policy, f.tasks, 3, 0.7, 6);
  EXPECT_NE(a.trajectories, c.trajectories);
}

TEST(Explore, SeedsDisjoint) {
  Fixture f;
  const auto ds = collect(*f.env, f.features, f.policy, f.tasks, 10, 0.7, 0);
  std::set<std::uint64_t> seeds;
  for (const auto& t : ds.trajectories) seeds.insert(t.seed);
  EXPECT_EQ(seeds.size(), ds.trajectories.size());
}

TEST(Explore, RejectsZeroRollouts) {
  Fixture f;
  EXPECT_THROW(collect(*f.env, f.features, f.policy, f.tasks, 0, 0.7, 0),
               UsageError);
}

TEST(Explore, ReplayFidelity) {
  Fixture f;
  const auto ds = collect(*f.env, f.features, f.policy, f.tasks, 5, 1.0, 3);
  for (const auto& t : ds.trajectories) {
    const auto r = replay(*f.env, t);
    EXPECT_EQ(r, t);
  }
}

TEST(Explore, StoredLogprobsMatchTemperedPolicy) {
  Fixture f;
  const double temp = 0.7;
  const auto t = rollout(*f.env, f.features, f.policy, f.tasks[0], 11, temp);
  for (std::size_t k = 0; k < t.size(); ++k) {
    const auto logits = f.policy.net.predict(f.features(t, k));
    double mx = -INFINITY;
    for (double l : logits) mx = std::max(mx, l / temp);
    double z = 0;
    for (double l : logits) z += std::exp(l / temp - mx);
    const double expect = logits[t.steps[k].action] / temp - mx - std::log(z);
    EXPECT_NEAR(t.steps[k].logprob, expect, 1e-12);
  }
}

TEST(Explore, StatsAllFailure) {
  Fixture f;
  // A policy that always picks action 17 (a distractor) never completes.
  agent::PolicyNet stuck{nn::Mlp({f.features.width(), 18}, nn::Activation::Tanh)};
  stuck.net.params()[stuck.net.bias_offset(0) + 17] = 10.0;
  const auto ds = collect(*f.env, f.features, stuck, f.tasks, 2, 0.0, 0);
  const auto s = dataset_stats(ds);
  EXPECT_EQ(s.reward_histogram[0], ds.trajectories.size());
  EXPECT_EQ(s.success_rate, 0.0);
  EXPECT_EQ(s.mean_reward, 0.0);
}

TEST(Explore, StatsConservationAndGrounding) {
  Fixture f;
  const auto ds = collect(*f.env, f.features, f.policy, f.tasks, 10, 1.0, 7);
  const auto s = dataset_stats(ds);
  std::size_t rsum = 0, lsum = 0;
  for (auto c : s.reward_histogram) rsum += c;
  for (auto c : s.length_histogram) lsum += c;
  EXPECT_EQ(rsum, ds.trajectories.size());
  EXPECT_EQ(lsum, ds.trajectories.size());
  // Recount grounding from the environment rather than stored bits.
  double g = 0.0;
  for (const auto& t : ds.trajectories) {
    auto [state, obs] = f.env->reset(t.task, t.seed);
    int ok = 0;
    for (const auto& st : t.steps) {
      auto [next, r] = f.env->step(t.task, state, st.action);
      ok += r.grounded;
      state = next;
    }
    g += static_cast<double>(ok) / t.size();
  }
  EXPECT_NEAR(s.grounding_rate, g / ds.trajectories.size(), 1e-12);
}

TEST(Explore, FileRoundTrip) {
  Fixture f(5);
  const auto ds = collect(*f.env, f.features, f.policy, f.tasks, 3, 0.7, 21);
  const auto path = temp_path("spa_explore_roundtrip.jsonl");
  write_dataset(ds, path);
  const auto back = read_dataset(path);
  EXPECT_EQ(back, ds);
  std::filesystem::remove(path);
}

TEST(Explore, ReadRejectsBadFiles) {
  const auto path = temp_path("spa_explore_bad.jsonl");
  {
    std::ofstream(path) << "{\"format\":\"something-else\"}\n";
  }
  EXPECT_ANY_THROW(read_dataset(path));
  {
    std::ofstream(path) << "not json\n";
  }
  EXPECT_ANY_THROW(read_dataset(path));
  std::filesystem::remove(path);
  EXPECT_ANY_THROW(read_dataset(path));
}

TEST(Explore, PolicyHashTracksParameters) {
  Fixture f;
  const auto h = policy_hash(f.policy.net);
  EXPECT_EQ(h.size(), 16u);
  auto copy = f.policy;
  EXPECT_EQ(policy_hash(copy.net), h);
  copy.net.params()[0] += 1e-15;
  EXPECT_NE(policy_hash(copy.net), h);
}
