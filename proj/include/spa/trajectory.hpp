#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "spa/envsim.hpp"

namespace spa {

struct Step {
  int action = 0;
  int observation = 0;
  bool grounded = false;
  double logprob = 0.0;  // log-probability under the collecting policy

  bool operator==(const Step&) const = default;
};

// One episode. Feature snapshots are not stored: step t's input is
// recomputed from (task, initial_observation, steps[0..t)).
struct Trajectory {
  env::TaskInstance task;
  std::uint64_t seed = 0;
  int initial_observation = 0;
  std::vector<Step> steps;
  double terminal_reward = 0.0;

  std::size_t size() const { return steps.size(); }
  bool empty() const { return steps.empty(); }
  std::vector<int> actions() const;
  std::vector<bool> grounded_bits() const;

  bool operator==(const Trajectory&) const = default;
};

// Fraction of executable actions. Throws UsageError on an empty trajectory.
double grounding_accuracy(const Trajectory& traj);

// Re-executes the stored actions from reset(task, seed). The result carries
// the environment's observations, grounded bits and reward; logprobs are
// copied from the input. Throws UsageError if the action sequence runs past
// the end of the episode.
Trajectory replay(const env::Environment& env, const Trajectory& traj);

// Rolls out env.expert_action from reset.
Trajectory expert_rollout(const env::Environment& env,
                          const env::TaskInstance& task, std::uint64_t seed);

}  // namespace spa
