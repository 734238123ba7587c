#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "spa/common.hpp"
#include "spa/envsim.hpp"
#include "spa/trajectory.hpp"

using namespace spa;
using namespace spa::env;

namespace {

TaskInstance chain_task(std::vector<std::pair<int, int>> subtasks,
                        std::vector<int> distractors, int max_steps = 30) {
  TaskInstance t;
  t.kind = EnvKind::ChainCraft;
  t.task_id = 0;
  t.max_steps = max_steps;
  t.goal_spec = {static_cast<int>(subtasks.size()),
                 static_cast<int>(distractors.size())};
  for (auto [verb, loc] : subtasks) {
    t.goal_spec.push_back(verb);
    t.goal_spec.push_back(loc);
  }
  for (int d : distractors) t.goal_spec.push_back(d);
  return t;
}

constexpr int kPick = 0, kClean = 1, kHeat = 2;

}  // namespace

TEST(Registry, NamesAndErrors) {
  EXPECT_EQ(make_environment("chaincraft")->name(), "chaincraft");
  EXPECT_EQ(make_environment("keydoorgrid")->name(), "keydoorgrid");
  EXPECT_THROW(make_environment("nethack"), ConfigError);
  EXPECT_EQ(environment_names().size(), 2u);
}

TEST(Registry, ActionCountsFixed) {
  auto cc = make_environment("chaincraft");
  EXPECT_EQ(cc->action_count(), 18);
  std::set<std::string> names(cc->action_space().names.begin(),
                              cc->action_space().names.end());
  EXPECT_EQ(names.size(), 18u);
  EXPECT_EQ(make_environment("keydoorgrid")->action_count(), 5);
}

TEST(ChainCraft, ResetDeterministic) {
  ChainCraft env;
  const auto task = env.task(0);
  const auto a = env.reset(task, 7);
  const auto b = env.reset(task, 7);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_EQ(a.first.step_index, 0);
  EXPECT_FALSE(a.first.done);
}

TEST(ChainCraft, TaskOutOfRange) {
  ChainCraft env;
  EXPECT_THROW(env.task(1000000000), ConfigError);
  EXPECT_THROW(env.task(-1), ConfigError);
}

TEST(ChainCraft, TasksRespectOptions) {
  EnvOptions o;
  o.min_subtasks = o.max_subtasks = 5;
  o.min_distractors = o.max_distractors = 4;
  ChainCraft env(o);
  for (int id = 0; id < 200; ++id) {
    const auto t = env.task(id);
    EXPECT_EQ(t.goal_spec[0], 5);
    EXPECT_EQ(t.goal_spec[1], 4);
    for (int i = 1; i < 5; ++i) {
      EXPECT_LT(t.goal_spec[2 + 2 * (i - 1)], t.goal_spec[2 + 2 * i]);
    }
  }
}

TEST(ChainCraft, CorrectNextSubtaskGroundedNoReward) {
  ChainCraft env;
  const auto task = chain_task({{kPick, 0}, {kHeat, 0}}, {});
  auto [s, obs] = env.reset(task, 1);
  if (ChainCraft::location(s) != 0) {
    s = env.step(task, s, ChainCraft::goto_action(0)).first;
  }
  const auto [next, r] = env.step(task, s, kPick);
  EXPECT_TRUE(r.grounded);
  EXPECT_FALSE(r.done);
  EXPECT_FALSE(r.terminal_reward.has_value());
  EXPECT_EQ(ChainCraft::completed(next), 1);
}

TEST(ChainCraft, HeatBeforePickUngroundedStateUnchanged) {
  ChainCraft env;
  const auto task = chain_task({{kPick, 1}, {kHeat, 1}}, {});
  auto [s, obs] = env.reset(task, 3);
  if (ChainCraft::location(s) != 1) {
    s = env.step(task, s, ChainCraft::goto_action(1)).first;
  }
  const auto [next, r] = env.step(task, s, kHeat);
  EXPECT_FALSE(r.grounded);
  EXPECT_EQ(ChainCraft::completed(next), ChainCraft::completed(s));
  EXPECT_EQ(ChainCraft::location(next), ChainCraft::location(s));
  EXPECT_EQ(next.step_index, s.step_index + 1);
  EXPECT_EQ(env.progress_hash(next), env.progress_hash(s));
}

TEST(ChainCraft, PartialCompletionReward) {
  // Four subtasks at location 2, three completed when the horizon hits.
  ChainCraft env;
  const auto task =
      chain_task({{kPick, 2}, {kClean, 2}, {kHeat, 2}, {5, 2}}, {}, 5);
  auto [s, obs] = env.reset(task, 11);
  std::vector<int> plan;
  if (ChainCraft::location(s) != 2) plan.push_back(ChainCraft::goto_action(2));
  plan.insert(plan.end(), {kPick, kClean, kHeat});
  while (static_cast<int>(plan.size()) < 5) plan.push_back(ChainCraft::goto_action(
      plan.size() % 2 ? 0 : 2));
  StepResult last;
  for (int a : plan) std::tie(s, last) = env.step(task, s, a);
  ASSERT_TRUE(last.done);
  EXPECT_EQ(ChainCraft::completed(s), 3);
  EXPECT_DOUBLE_EQ(last.reward(), 3.0 / 4.0);
}

TEST(ChainCraft, DistractorsGroundedButIrrelevant) {
  ChainCraft env;
  const auto task = chain_task({{kPick, 0}}, {2, 4});
  auto [s, obs] = env.reset(task, 5);
  const auto [n1, r1] = env.step(task, s, ChainCraft::distractor_action(2));
  EXPECT_TRUE(r1.grounded);
  EXPECT_EQ(env.progress_hash(n1), env.progress_hash(s));
  const auto [n2, r2] = env.step(task, s, ChainCraft::distractor_action(3));
  EXPECT_FALSE(r2.grounded);
}

TEST(ChainCraft, StepAfterDoneAndBadAction) {
  ChainCraft env;
  const auto task = chain_task({{kPick, 0}}, {}, 1);
  auto [s, obs] = env.reset(task, 0);
  EXPECT_THROW(env.step(task, s, 18), UsageError);
  EXPECT_THROW(env.step(task, s, -1), UsageError);
  s = env.step(task, s, ChainCraft::distractor_action(0)).first;
  ASSERT_TRUE(s.done);
  EXPECT_THROW(env.step(task, s, 0), UsageError);
}

TEST(ChainCraft, ExpertSolvesEveryTask) {
  ChainCraft env;
  for (int id = 0; id < 1000; ++id) {
    const auto traj = expert_rollout(env, env.task(id), id * 31 + 7);
    ASSERT_EQ(traj.terminal_reward, 1.0) << "task " << id;
    EXPECT_EQ(grounding_accuracy(traj), 1.0);
  }
}

TEST(ChainCraft, ExpertLengthMatchesPlan) {
  // Plan: walk to each subtask's location when not already there, then act.
  ChainCraft env;
  for (int id = 0; id < 100; ++id) {
    const auto task = env.task(id);
    const std::uint64_t seed = id + 100;
    int loc = ChainCraft::location(env.reset(task, seed).first);
    int expected = 0;
    for (int i = 0; i < task.goal_spec[0]; ++i) {
      const int target = task.goal_spec[3 + 2 * i];
      if (target != loc) ++expected;
      loc = target;
      ++expected;
    }
    EXPECT_EQ(static_cast<int>(expert_rollout(env, task, seed).size()),
              expected);
  }
}

TEST(ChainCraft, NoDistractorExpertIsKPlusMoves) {
  EnvOptions o;
  o.min_distractors = o.max_distractors = 0;
  ChainCraft env(o);
  const auto task = chain_task({{kPick, 0}, {kClean, 0}, {kHeat, 3}}, {});
  // Seed chosen so the agent starts at location 0: 3 verbs + 1 move.
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    if (ChainCraft::location(env.reset(task, seed).first) != 0) continue;
    EXPECT_EQ(expert_rollout(env, task, seed).size(), 4u);
    return;
  }
  FAIL() << "no seed starting at location 0";
}

TEST(KeyDoorGrid, SeedDependenceAndDeterminism) {
  KeyDoorGrid env;
  const auto task = env.task(3);
  EXPECT_EQ(env.reset(task, 7).first, env.reset(task, 7).first);
  bool differs = false;
  for (std::uint64_t s = 8; s < 20 && !differs; ++s) {
    differs = env.reset(task, 7).first != env.reset(task, s).first;
  }
  EXPECT_TRUE(differs);
}

TEST(KeyDoorGrid, ExpertVisitsKeyBeforeDoor) {
  KeyDoorGrid env;
  for (int id = 0; id < 200; ++id) {
    const auto task = env.task(id);
    auto [s, obs] = env.reset(task, id);
    const int door_row = task.goal_spec[0];
    bool had_key_at_door = true;
    bool picked = false;
    while (!s.done) {
      const int a = env.expert_action(task, s);
      auto [next, r] = env.step(task, s, a);
      EXPECT_TRUE(r.grounded);
      if (KeyDoorGrid::agent_x(next) == KeyDoorGrid::kWallColumn &&
          KeyDoorGrid::agent_y(next) == door_row) {
        had_key_at_door = had_key_at_door && KeyDoorGrid::has_key(next);
      }
      picked = picked || KeyDoorGrid::has_key(next);
      s = next;
      if (r.done) {
        EXPECT_EQ(r.reward(), 1.0);
      }
    }
    EXPECT_TRUE(picked);
    EXPECT_TRUE(had_key_at_door);
  }
}

TEST(KeyDoorGrid, DoorBlocksWithoutKey) {
  KeyDoorGrid env;
  const auto task = env.task(0);
  const int door_row = task.goal_spec[0];
  // Walk along the door row towards the wall without picking up the key.
  EnvState s = env.reset(task, 1).first;
  s.internal[0] = KeyDoorGrid::kWallColumn - 1;
  s.internal[1] = door_row;
  s.internal[2] = 0;
  const auto [next, r] = env.step(task, s, KeyDoorGrid::Right);
  EXPECT_FALSE(r.grounded);
  EXPECT_EQ(KeyDoorGrid::agent_x(next), KeyDoorGrid::kWallColumn - 1);
  s.internal[2] = 1;
  const auto [through, r2] = env.step(task, s, KeyDoorGrid::Right);
  EXPECT_TRUE(r2.grounded);
  EXPECT_EQ(KeyDoorGrid::agent_x(through), KeyDoorGrid::kWallColumn);
}

class RandomEpisodes : public ::testing::TestWithParam<std::string> {};

TEST_P(RandomEpisodes, SparseRewardAndGroundingConsistency) {
  auto env = make_environment(GetParam());
  Rng rng(42);
  for (int ep = 0; ep < 1000; ++ep) {
    const auto task = env->task(uniform_int(rng, env->task_count()));
    auto [s, obs] = env->reset(task, rng());
    int steps = 0;
    while (!s.done) {
      const int a = uniform_int(rng, env->action_count());
      auto [next, r] = env->step(task, s, a);
      ++steps;
      if (!r.done) {
        EXPECT_FALSE(r.terminal_reward.has_value());
        EXPECT_EQ(r.reward(), 0.0);
      } else {
        ASSERT_TRUE(r.terminal_reward.has_value());
        EXPECT_GE(*r.terminal_reward, 0.0);
        EXPECT_LE(*r.terminal_reward, 1.0);
      }
      if (!r.grounded) {
        EXPECT_EQ(env->progress_hash(next), env->progress_hash(s));
      }
      EXPECT_EQ(next.step_index, s.step_index + 1);
      EXPECT_GE(r.observation_id, 0);
      EXPECT_LT(r.observation_id, env->observation_count());
      s = next;
    }
    EXPECT_LE(steps, task.max_steps);
  }
}

TEST_P(RandomEpisodes, ReplayIsBitIdentical) {
  auto env = make_environment(GetParam());
  Rng rng(9);
  for (int ep = 0; ep < 100; ++ep) {
    Trajectory t;
    t.task = env->task(uniform_int(rng, env->task_count()));
    t.seed = rng();
    auto [s, obs] = env->reset(t.task, t.seed);
    t.initial_observation = obs;
    while (!s.done) {
      const int a = uniform_int(rng, env->action_count());
      auto [next, r] = env->step(t.task, s, a);
      t.steps.push_back({a, r.observation_id, r.grounded, 0.0});
      t.terminal_reward = r.reward();
      s = next;
    }
    EXPECT_EQ(replay(*env, t), t);
  }
}

INSTANTIATE_TEST_SUITE_P(Envs, RandomEpisodes,
                         ::testing::Values("chaincraft", "keydoorgrid"));

TEST(ChainCraft, RandomPolicySuccessMatchesExactProbability) {
  // Exact success probability of the uniform policy on the smallest task
  // by dynamic programming over (location, stage, steps left); compared
  // with a sampled estimate.
  EnvOptions o;
  o.min_subtasks = o.max_subtasks = 3;
  ChainCraft env(o);
  const auto task = env.task(0);
  const int k = 3;
  const int horizon = task.max_steps;
  const int loc0 = ChainCraft::location(env.reset(task, 0).first);

  // p[l][stage] after t steps; successful mass absorbed.
  std::map<std::pair<int, int>, double> p{{{loc0, 0}, 1.0}};
  double exact = 0.0;
  for (int t = 0; t < horizon; ++t) {
    std::map<std::pair<int, int>, double> q;
    for (auto [key, mass] : p) {
      const auto [loc, stage] = key;
      for (int a = 0; a < ChainCraft::kActions; ++a) {
        int l = loc, st = stage;
        if (a < ChainCraft::kVerbs) {
          if (task.goal_spec[2 + 2 * st] == a &&
              task.goal_spec[3 + 2 * st] == l) {
            ++st;
          }
        } else if (a < ChainCraft::kVerbs + ChainCraft::kLocations) {
          l = a - ChainCraft::kVerbs;
        }
        const double m = mass / ChainCraft::kActions;
        if (st == k) {
          exact += m;
        } else {
          q[{l, st}] += m;
        }
      }
    }
    p = std::move(q);
  }

  Rng rng(5);
  const int episodes = 20000;
  int wins = 0;
  for (int ep = 0; ep < episodes; ++ep) {
    auto [s, obs] = env.reset(task, 0);
    StepResult r;
    while (!s.done) {
      std::tie(s, r) = env.step(task, s, uniform_int(rng, ChainCraft::kActions));
    }
    wins += r.reward() == 1.0;
  }
  const double sampled = static_cast<double>(wins) / episodes;
  const double sigma = std::sqrt(exact * (1 - exact) / episodes);
  EXPECT_NEAR(sampled, exact, 4 * sigma + 1e-4);
  EXPECT_LT(exact, 0.05);
}

TEST(Trajectory, GroundingAccuracyRatio) {
  Trajectory t;
  EXPECT_THROW(grounding_accuracy(t), UsageError);
  t.steps = {{0, 0, true, 0}, {0, 0, true, 0}, {0, 0, false, 0},
             {0, 0, true, 0}};
  EXPECT_DOUBLE_EQ(grounding_accuracy(t), 0.75);
  for (auto& s : t.steps) s.grounded = true;
  EXPECT_DOUBLE_EQ(grounding_accuracy(t), 1.0);
}

TEST(Trajectory, GroundingMatchesReplayRecount) {
  ChainCraft env;
  Rng rng(3);
  for (int ep = 0; ep < 50; ++ep) {
    Trajectory t;
    t.task = env.task(ep);
    t.seed = ep;
    auto [s, obs] = env.reset(t.task, t.seed);
    t.initial_observation = obs;
    while (!s.done) {
      const int a = uniform_int(rng, env.action_count());
      auto [next, r] = env.step(t.task, s, a);
      t.steps.push_back({a, r.observation_id, r.grounded, 0.0});
      s = next;
    }
    // Recount from the environment, independent of the stored bits.
    auto [s2, o2] = env.reset(t.task, t.seed);
    int grounded = 0;
    for (const Step& st : t.steps) {
      auto [n2, r2] = env.step(t.task, s2, st.action);
      grounded += r2.grounded;
      s2 = n2;
    }
    EXPECT_DOUBLE_EQ(grounding_accuracy(t),
                     static_cast<double>(grounded) / t.size());
  }
}
