#include "spa/trajectory.hpp"

#include <algorithm>

#include "spa/common.hpp"

namespace spa {

std::vector<int> Trajectory::actions() const {
  std::vector<int> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.action);
  return out;
}

std::vector<bool> Trajectory::grounded_bits() const {
  std::vector<bool> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.grounded);
  return out;
}

double grounding_accuracy(const Trajectory& traj) {
  if (traj.empty()) throw UsageError("grounding_accuracy of empty trajectory");
  const auto grounded = std::count_if(traj.steps.begin(), traj.steps.end(),
                                      [](const Step& s) { return s.grounded; });
  return static_cast<double>(grounded) / static_cast<double>(traj.size());
}

Trajectory replay(const env::Environment& env, const Trajectory& traj) {
  Trajectory out;
  out.task = traj.task;
  out.seed = traj.seed;
  auto [state, obs] = env.reset(traj.task, traj.seed);
  out.initial_observation = obs;
  for (const auto& s : traj.steps) {
    auto [next, result] = env.step(traj.task, state, s.action);
    out.steps.push_back({s.action, result.observation_id, result.grounded,
                         s.logprob});
    out.terminal_reward = result.reward();
    state = std::move(next);
  }
  return out;
}

Trajectory expert_rollout(const env::Environment& env,
                          const env::TaskInstance& task, std::uint64_t seed) {
  Trajectory out;
  out.task = task;
  out.seed = seed;
  auto [state, obs] = env.reset(task, seed);
  out.initial_observation = obs;
  while (!state.done) {
    const int a = env.expert_action(task, state);
    auto [next, result] = env.step(task, state, a);
    out.steps.push_back({a, result.observation_id, result.grounded, 0.0});
    out.terminal_reward = result.reward();
    state = std::move(next);
  }
  return out;
}

}  // namespace spa
