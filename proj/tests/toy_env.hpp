#pragma once

// Two-step, three-action environment with a per-task reward table, small
// enough to enumerate every episode.

#include <array>

#include "spa/common.hpp"
#include "spa/envsim.hpp"

namespace toy {

class TwoStep final : public spa::env::Environment {
 public:
  static constexpr int kActions = 3;

  TwoStep() : Environment({.task_count = 16}) {
    actions_.count = kActions;
    actions_.names = {"a", "b", "c"};
  }

  spa::env::EnvKind kind() const override { return spa::env::EnvKind::ChainCraft; }
  std::string_view name() const override { return "twostep"; }
  const spa::env::ActionSpace& action_space() const override { return actions_; }
  int observation_count() const override { return kActions + 1; }
  int default_horizon() const override { return 2; }
  int goal_width() const override { return 1; }

  spa::env::TaskInstance task(int task_id) const override {
    spa::env::TaskInstance t;
    t.task_id = task_id;
    t.max_steps = 2;
    check_task(t);
    return t;
  }
  std::pair<spa::env::EnvState, int> reset(const spa::env::TaskInstance& task,
                                           std::uint64_t) const override {
    check_task(task);
    spa::env::EnvState s;
    s.internal = {-1};
    return {s, kActions};
  }
  std::pair<spa::env::EnvState, spa::env::StepResult> step(
      const spa::env::TaskInstance& task, const spa::env::EnvState& state,
      int action) const override {
    check_step(task, state, action);
    spa::env::EnvState next = state;
    spa::env::StepResult r;
    r.observation_id = action;
    r.grounded = true;
    if (++next.step_index == 2) {
      next.done = r.done = true;
      r.terminal_reward = reward(task.task_id, state.internal[0], action);
    }
    next.internal[0] = action;
    return {next, r};
  }
  int expert_action(const spa::env::TaskInstance&,
                    const spa::env::EnvState&) const override {
    return 0;
  }
  void encode_goal(const spa::env::TaskInstance& task,
                   std::span<double> out) const override {
    out[0] = task.task_id / 16.0;
  }
  std::uint64_t progress_hash(const spa::env::EnvState& s) const override {
    return static_cast<std::uint64_t>(s.internal[0] + 1);
  }

  // R(a1, a2) in [0, 1), fixed per task.
  static double reward(int task_id, int a1, int a2) {
    spa::Rng rng(spa::derive_seed(static_cast<std::uint64_t>(task_id), a1 * 3 + a2));
    return spa::uniform01(rng);
  }

 private:
  spa::env::ActionSpace actions_;
};

}  // namespace toy
