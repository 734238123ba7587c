#pragma once

// Seedable POMDP environments with a sparse terminal reward.
//
// Environments are stateless and const: all episode state lives in EnvState,
// so one Environment object can drive any number of episodes concurrently.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace spa::env {

enum class EnvKind { ChainCraft, KeyDoorGrid };

std::string_view to_string(EnvKind kind);

// Task generator knobs. Subtask/distractor ranges only apply to ChainCraft.
struct EnvOptions {
  int min_subtasks = 3;
  int max_subtasks = 6;
  int min_distractors = 0;
  int max_distractors = 6;
  int horizon = 0;  // 0 selects the environment default
  int task_count = 1000;

  bool operator==(const EnvOptions&) const = default;
};

struct TaskInstance {
  EnvKind kind = EnvKind::ChainCraft;
  int task_id = 0;
  std::vector<int> goal_spec;
  int max_steps = 1;

  bool operator==(const TaskInstance&) const = default;
};

struct EnvState {
  int step_index = 0;
  bool done = false;
  std::vector<int> internal;

  bool operator==(const EnvState&) const = default;
};

struct StepResult {
  int observation_id = 0;
  bool grounded = false;
  std::optional<double> terminal_reward;
  bool done = false;

  double reward() const { return terminal_reward.value_or(0.0); }
};

struct ActionSpace {
  int count = 0;
  std::vector<std::string> names;
};

class Environment {
 public:
  explicit Environment(EnvOptions options) : options_(options) {}
  virtual ~Environment() = default;

  virtual EnvKind kind() const = 0;
  virtual std::string_view name() const = 0;
  virtual const ActionSpace& action_space() const = 0;
  virtual int observation_count() const = 0;
  virtual int default_horizon() const = 0;
  // Width of the real-valued goal encoding written by encode_goal.
  virtual int goal_width() const = 0;

  // Throws ConfigError when task_id is out of range.
  virtual TaskInstance task(int task_id) const = 0;
  virtual std::pair<EnvState, int> reset(const TaskInstance& task,
                                         std::uint64_t seed) const = 0;
  // Throws UsageError when the episode is already done or the action id is
  // out of range.
  virtual std::pair<EnvState, StepResult> step(const TaskInstance& task,
                                               const EnvState& state,
                                               int action) const = 0;
  virtual int expert_action(const TaskInstance& task,
                            const EnvState& state) const = 0;
  // Writes goal_width() entries in [0, 1].
  virtual void encode_goal(const TaskInstance& task,
                           std::span<double> out) const = 0;
  // Hash of the goal-relevant part of the state (excludes step_index and the
  // last-outcome bookkeeping).
  virtual std::uint64_t progress_hash(const EnvState& state) const = 0;

  const EnvOptions& options() const { return options_; }
  int task_count() const { return options_.task_count; }
  int horizon() const {
    return options_.horizon > 0 ? options_.horizon : default_horizon();
  }
  int action_count() const { return action_space().count; }

 protected:
  void check_task(const TaskInstance& task) const;
  void check_step(const TaskInstance& task, const EnvState& state,
                  int action) const;

 private:
  EnvOptions options_;
};

// Registry lookup by name: "chaincraft" or "keydoorgrid".
std::unique_ptr<Environment> make_environment(std::string_view name,
                                              const EnvOptions& options = {});
std::vector<std::string> environment_names();

// ChainCraft: complete k subtasks in canonical verb order, each at its own
// location. Actions are 8 verbs, 4 go-to moves and 6 distractors. The
// appliance verbs clean, heat, cool and toggle have fixed locations (1, 2,
// 3, 0); the other verbs are placed per task.
//
//   verb      grounded iff it is the next required verb and the agent stands
//             at that subtask's location; advances the stage.
//   goto(l)   grounded iff l differs from the current location.
//   distract  grounded iff listed in the task's distractor set; no effect.
//
// Observation = location * 3 + outcome, outcome in {fail, ok, progress}.
// Terminal reward = completed subtasks / k.
//
// goal_spec layout: [k, d, verb_1, loc_1, ..., verb_k, loc_k, distractors...]
class ChainCraft final : public Environment {
 public:
  static constexpr int kVerbs = 8;
  static constexpr int kLocations = 4;
  static constexpr int kDistractors = 6;
  static constexpr int kActions = kVerbs + kLocations + kDistractors;
  static constexpr int kOutcomes = 3;

  explicit ChainCraft(EnvOptions options = {});

  EnvKind kind() const override { return EnvKind::ChainCraft; }
  std::string_view name() const override { return "chaincraft"; }
  const ActionSpace& action_space() const override { return actions_; }
  int observation_count() const override { return kLocations * kOutcomes; }
  int default_horizon() const override { return 30; }
  int goal_width() const override;

  TaskInstance task(int task_id) const override;
  std::pair<EnvState, int> reset(const TaskInstance& task,
                                 std::uint64_t seed) const override;
  std::pair<EnvState, StepResult> step(const TaskInstance& task,
                                       const EnvState& state,
                                       int action) const override;
  int expert_action(const TaskInstance& task,
                    const EnvState& state) const override;
  void encode_goal(const TaskInstance& task,
                   std::span<double> out) const override;
  std::uint64_t progress_hash(const EnvState& state) const override;

  static int goto_action(int location) { return kVerbs + location; }
  static int distractor_action(int i) { return kVerbs + kLocations + i; }
  static int subtask_count(const TaskInstance& task) {
    return task.goal_spec.at(0);
  }
  static int completed(const EnvState& state) { return state.internal.at(1); }
  static int location(const EnvState& state) { return state.internal.at(0); }

 private:
  ActionSpace actions_;
};

// KeyDoorGrid: 7x7 grid with border walls and an interior wall column
// (x = 3) pierced by one locked door. The agent must pick up the key in the
// west room, pass the door and reach the goal in the east room.
//
// Actions: up, down, left, right, pickup. Moving into a wall, or into the
// door without the key, is not grounded; pickup is grounded only on the key.
// Observation = (wall mask of the 4 neighbours) * 8 + cell kind * 2 + has_key,
// cell kind in {empty, key, door, goal}. The door counts as a wall in the
// mask until the key is held. Reward is 1 on reaching the goal, else 0.
//
// The task fixes the door row and the goal cell; the seed places the agent
// and the key. goal_spec = [door_row, goal_x, goal_y].
class KeyDoorGrid final : public Environment {
 public:
  static constexpr int kSize = 7;
  static constexpr int kWallColumn = 3;
  static constexpr int kActions = 5;
  enum Action { Up = 0, Down = 1, Left = 2, Right = 3, Pickup = 4 };

  explicit KeyDoorGrid(EnvOptions options = {});

  EnvKind kind() const override { return EnvKind::KeyDoorGrid; }
  std::string_view name() const override { return "keydoorgrid"; }
  const ActionSpace& action_space() const override { return actions_; }
  int observation_count() const override { return 16 * 8; }
  int default_horizon() const override { return 40; }
  int goal_width() const override;

  TaskInstance task(int task_id) const override;
  std::pair<EnvState, int> reset(const TaskInstance& task,
                                 std::uint64_t seed) const override;
  std::pair<EnvState, StepResult> step(const TaskInstance& task,
                                       const EnvState& state,
                                       int action) const override;
  int expert_action(const TaskInstance& task,
                    const EnvState& state) const override;
  void encode_goal(const TaskInstance& task,
                   std::span<double> out) const override;
  std::uint64_t progress_hash(const EnvState& state) const override;

  // internal = [x, y, has_key, key_x, key_y]
  static int agent_x(const EnvState& s) { return s.internal.at(0); }
  static int agent_y(const EnvState& s) { return s.internal.at(1); }
  static bool has_key(const EnvState& s) { return s.internal.at(2) != 0; }
  static int key_x(const EnvState& s) { return s.internal.at(3); }
  static int key_y(const EnvState& s) { return s.internal.at(4); }

 private:
  int observe(const TaskInstance& task, const EnvState& state) const;
  bool passable(const TaskInstance& task, const EnvState& state, int x,
                int y) const;

  ActionSpace actions_;
};

}  // namespace spa::env
