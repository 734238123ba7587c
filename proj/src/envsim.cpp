#include "spa/envsim.hpp"

#include <algorithm>
#include <array>
#include <deque>
#include <string>

#include "spa/common.hpp"

namespace spa::env {

std::string_view to_string(EnvKind kind) {
  switch (kind) {
    case EnvKind::ChainCraft:
      return "chaincraft";
    case EnvKind::KeyDoorGrid:
      return "keydoorgrid";
  }
  return "unknown";
}

void Environment::check_task(const TaskInstance& task) const {
  if (task.kind != kind()) {
    throw ConfigError("task belongs to another environment");
  }
  if (task.task_id < 0 || task.task_id >= task_count()) {
    throw ConfigError("task id " + std::to_string(task.task_id) +
                      " out of range for " + std::string(name()));
  }
  if (task.max_steps < 1) throw ConfigError("max_steps must be >= 1");
}

void Environment::check_step(const TaskInstance& task, const EnvState& state,
                             int action) const {
  if (state.done) throw UsageError("step called after episode end");
  if (action < 0 || action >= action_count()) {
    throw UsageError("action id " + std::to_string(action) + " out of range");
  }
  if (state.step_index >= task.max_steps) {
    throw UsageError("step index beyond horizon");
  }
}

namespace {

void check_options(const EnvOptions& o) {
  if (o.task_count < 1) throw ConfigError("task_count must be >= 1");
  if (o.horizon < 0) throw ConfigError("horizon must be >= 0");
}

std::uint64_t hash_ints(std::initializer_list<int> values) {
  std::uint64_t h = 0x84222325cbf29ce4ULL;
  for (int v : values) h = mix_seed(h ^ static_cast<std::uint64_t>(v));
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// ChainCraft

namespace {
constexpr std::array<const char*, ChainCraft::kVerbs> kVerbNames = {
    "pick", "clean", "heat", "cool", "slice", "open", "toggle", "place"};
// Appliance verbs always happen at the same place (sink, microwave, fridge,
// lamp); object verbs happen wherever the task puts the object.
constexpr std::array<int, ChainCraft::kVerbs> kHomeLocation = {
    -1, 1, 2, 3, -1, -1, 0, -1};
constexpr std::array<const char*, ChainCraft::kDistractors> kDistractorNames = {
    "look", "inventory", "examine", "wait", "close", "use_lamp"};

enum Outcome { kFail = 0, kOk = 1, kProgress = 2 };
}  // namespace

ChainCraft::ChainCraft(EnvOptions options) : Environment(options) {
  check_options(options);
  if (options.min_subtasks < 1 || options.max_subtasks > kVerbs ||
      options.min_subtasks > options.max_subtasks) {
    throw ConfigError("chaincraft subtask range must lie within [1, 8]");
  }
  if (options.min_distractors < 0 || options.max_distractors > kDistractors ||
      options.min_distractors > options.max_distractors) {
    throw ConfigError("chaincraft distractor range must lie within [0, 6]");
  }
  actions_.count = kActions;
  for (auto* v : kVerbNames) actions_.names.emplace_back(v);
  for (int l = 0; l < kLocations; ++l) {
    actions_.names.push_back("goto_" + std::to_string(l));
  }
  for (auto* d : kDistractorNames) actions_.names.emplace_back(d);
}

int ChainCraft::goal_width() const {
  return kVerbs + kVerbs * kLocations + kDistractors;
}

TaskInstance ChainCraft::task(int task_id) const {
  if (task_id < 0 || task_id >= task_count()) {
    throw ConfigError("task id " + std::to_string(task_id) +
                      " out of range for chaincraft");
  }
  Rng rng(derive_seed(static_cast<std::uint64_t>(task_id), 0xC4A1C4A1ULL));
  const auto& o = options();
  const int k =
      o.min_subtasks + uniform_int(rng, o.max_subtasks - o.min_subtasks + 1);
  const int d = o.min_distractors +
                uniform_int(rng, o.max_distractors - o.min_distractors + 1);

  std::array<int, kVerbs> verbs{};
  for (int i = 0; i < kVerbs; ++i) verbs[i] = i;
  for (int i = 0; i < k; ++i) {
    std::swap(verbs[i], verbs[i + uniform_int(rng, kVerbs - i)]);
  }
  std::sort(verbs.begin(), verbs.begin() + k);

  std::array<int, kDistractors> distract{};
  for (int i = 0; i < kDistractors; ++i) distract[i] = i;
  for (int i = 0; i < d; ++i) {
    std::swap(distract[i], distract[i + uniform_int(rng, kDistractors - i)]);
  }
  std::sort(distract.begin(), distract.begin() + d);

  TaskInstance t;
  t.kind = EnvKind::ChainCraft;
  t.task_id = task_id;
  t.max_steps = horizon();
  t.goal_spec = {k, d};
  for (int i = 0; i < k; ++i) {
    t.goal_spec.push_back(verbs[i]);
    const int drawn = uniform_int(rng, kLocations);
    const int home = kHomeLocation[verbs[i]];
    t.goal_spec.push_back(home >= 0 ? home : drawn);
  }
  for (int i = 0; i < d; ++i) t.goal_spec.push_back(distract[i]);
  return t;
}

std::pair<EnvState, int> ChainCraft::reset(const TaskInstance& task,
                                           std::uint64_t seed) const {
  check_task(task);
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(task.task_id)));
  EnvState s;
  s.internal = {uniform_int(rng, kLocations), 0, kOk};
  return {s, location(s) * kOutcomes + kOk};
}

std::pair<EnvState, StepResult> ChainCraft::step(const TaskInstance& task,
                                                 const EnvState& state,
                                                 int action) const {
  check_step(task, state, action);
  const int k = subtask_count(task);
  const int d = task.goal_spec.at(1);
  EnvState next = state;
  int& loc = next.internal[0];
  int& stage = next.internal[1];
  int outcome = kFail;

  if (action < kVerbs) {
    if (stage < k && task.goal_spec[2 + 2 * stage] == action &&
        task.goal_spec[3 + 2 * stage] == loc) {
      ++stage;
      outcome = kProgress;
    }
  } else if (action < kVerbs + kLocations) {
    const int target = action - kVerbs;
    if (target != loc) {
      loc = target;
      outcome = kOk;
    }
  } else {
    const int which = action - kVerbs - kLocations;
    const auto first = task.goal_spec.begin() + 2 + 2 * k;
    if (std::find(first, first + d, which) != first + d) outcome = kOk;
  }
  next.internal[2] = outcome;
  ++next.step_index;

  StepResult r;
  r.grounded = outcome != kFail;
  r.observation_id = loc * kOutcomes + outcome;
  r.done = stage == k || next.step_index >= task.max_steps;
  if (r.done) r.terminal_reward = static_cast<double>(stage) / k;
  next.done = r.done;
  return {next, r};
}

int ChainCraft::expert_action(const TaskInstance& task,
                              const EnvState& state) const {
  if (state.done) throw UsageError("expert_action called after episode end");
  const int stage = completed(state);
  const int verb = task.goal_spec.at(2 + 2 * stage);
  const int loc = task.goal_spec.at(3 + 2 * stage);
  return location(state) == loc ? verb : goto_action(loc);
}

void ChainCraft::encode_goal(const TaskInstance& task,
                             std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  const int k = subtask_count(task);
  const int d = task.goal_spec.at(1);
  for (int i = 0; i < k; ++i) {
    const int verb = task.goal_spec[2 + 2 * i];
    const int loc = task.goal_spec[3 + 2 * i];
    out[verb] = 1.0;
    out[kVerbs + verb * kLocations + loc] = 1.0;
  }
  for (int i = 0; i < d; ++i) {
    out[kVerbs + kVerbs * kLocations + task.goal_spec[2 + 2 * k + i]] = 1.0;
  }
}

std::uint64_t ChainCraft::progress_hash(const EnvState& state) const {
  return hash_ints({location(state), completed(state)});
}

// ---------------------------------------------------------------------------
// KeyDoorGrid

namespace {
constexpr std::array<int, 4> kDx = {0, 0, -1, 1};
constexpr std::array<int, 4> kDy = {-1, 1, 0, 0};
enum Cell { kEmpty = 0, kKey = 1, kDoor = 2, kGoal = 3 };
}  // namespace

KeyDoorGrid::KeyDoorGrid(EnvOptions options) : Environment(options) {
  check_options(options);
  actions_.count = kActions;
  actions_.names = {"up", "down", "left", "right", "pickup"};
}

// door row one-hot over rows 1..5, goal one-hot over the 2x5 east room
int KeyDoorGrid::goal_width() const { return 5 + 10; }

TaskInstance KeyDoorGrid::task(int task_id) const {
  if (task_id < 0 || task_id >= task_count()) {
    throw ConfigError("task id " + std::to_string(task_id) +
                      " out of range for keydoorgrid");
  }
  Rng rng(derive_seed(static_cast<std::uint64_t>(task_id), 0x6B6579ULL));
  TaskInstance t;
  t.kind = EnvKind::KeyDoorGrid;
  t.task_id = task_id;
  t.max_steps = horizon();
  const int door_row = 1 + uniform_int(rng, 5);
  const int goal_x = kWallColumn + 1 + uniform_int(rng, 2);
  const int goal_y = 1 + uniform_int(rng, 5);
  t.goal_spec = {door_row, goal_x, goal_y};
  return t;
}

std::pair<EnvState, int> KeyDoorGrid::reset(const TaskInstance& task,
                                            std::uint64_t seed) const {
  check_task(task);
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(task.task_id)));
  // West room is x in {1, 2}, y in 1..5: ten cells.
  const int key_cell = uniform_int(rng, 10);
  int start_cell = uniform_int(rng, 9);
  if (start_cell >= key_cell) ++start_cell;
  EnvState s;
  s.internal = {1 + start_cell % 2, 1 + start_cell / 2, 0, 1 + key_cell % 2,
                1 + key_cell / 2};
  return {s, observe(task, s)};
}

bool KeyDoorGrid::passable(const TaskInstance& task, const EnvState& state,
                           int x, int y) const {
  if (x <= 0 || y <= 0 || x >= kSize - 1 || y >= kSize - 1) return false;
  if (x == kWallColumn) return y == task.goal_spec[0] && has_key(state);
  return true;
}

int KeyDoorGrid::observe(const TaskInstance& task,
                         const EnvState& state) const {
  const int x = agent_x(state);
  const int y = agent_y(state);
  int mask = 0;
  for (int a = 0; a < 4; ++a) {
    if (!passable(task, state, x + kDx[a], y + kDy[a])) mask |= 1 << a;
  }
  int cell = kEmpty;
  if (x == task.goal_spec[1] && y == task.goal_spec[2]) {
    cell = kGoal;
  } else if (x == kWallColumn) {
    cell = kDoor;
  } else if (!has_key(state) && x == key_x(state) && y == key_y(state)) {
    cell = kKey;
  }
  return mask * 8 + cell * 2 + (has_key(state) ? 1 : 0);
}

std::pair<EnvState, StepResult> KeyDoorGrid::step(const TaskInstance& task,
                                                  const EnvState& state,
                                                  int action) const {
  check_step(task, state, action);
  EnvState next = state;
  bool grounded = false;
  if (action == Pickup) {
    if (!has_key(state) && agent_x(state) == key_x(state) &&
        agent_y(state) == key_y(state)) {
      next.internal[2] = 1;
      grounded = true;
    }
  } else {
    const int nx = agent_x(state) + kDx[action];
    const int ny = agent_y(state) + kDy[action];
    if (passable(task, state, nx, ny)) {
      next.internal[0] = nx;
      next.internal[1] = ny;
      grounded = true;
    }
  }
  ++next.step_index;
  const bool at_goal = agent_x(next) == task.goal_spec[1] &&
                       agent_y(next) == task.goal_spec[2];
  StepResult r;
  r.grounded = grounded;
  r.observation_id = observe(task, next);
  r.done = at_goal || next.step_index >= task.max_steps;
  if (r.done) r.terminal_reward = at_goal ? 1.0 : 0.0;
  next.done = r.done;
  return {next, r};
}

int KeyDoorGrid::expert_action(const TaskInstance& task,
                               const EnvState& state) const {
  if (state.done) throw UsageError("expert_action called after episode end");
  const int sx = agent_x(state);
  const int sy = agent_y(state);
  int tx = task.goal_spec[1];
  int ty = task.goal_spec[2];
  if (!has_key(state)) {
    if (sx == key_x(state) && sy == key_y(state)) return Pickup;
    tx = key_x(state);
    ty = key_y(state);
  }
  // BFS backwards from the target gives each cell its distance to it; the
  // expert then takes the first action (in id order) that decreases it.
  std::array<int, kSize * kSize> dist;
  dist.fill(-1);
  std::deque<int> queue{tx + ty * kSize};
  dist[queue.front()] = 0;
  while (!queue.empty()) {
    const int c = queue.front();
    queue.pop_front();
    const int cx = c % kSize;
    const int cy = c / kSize;
    for (int a = 0; a < 4; ++a) {
      const int nx = cx + kDx[a];
      const int ny = cy + kDy[a];
      if (!passable(task, state, nx, ny)) continue;
      const int n = nx + ny * kSize;
      if (dist[n] < 0) {
        dist[n] = dist[c] + 1;
        queue.push_back(n);
      }
    }
  }
  const int here = dist[sx + sy * kSize];
  for (int a = 0; a < 4; ++a) {
    const int nx = sx + kDx[a];
    const int ny = sy + kDy[a];
    if (passable(task, state, nx, ny) && dist[nx + ny * kSize] == here - 1) {
      return a;
    }
  }
  throw UsageError("keydoorgrid expert found no path");
}

void KeyDoorGrid::encode_goal(const TaskInstance& task,
                              std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  out[task.goal_spec[0] - 1] = 1.0;
  const int gx = task.goal_spec[1] - (kWallColumn + 1);
  const int gy = task.goal_spec[2] - 1;
  out[5 + gx * 5 + gy] = 1.0;
}

std::uint64_t KeyDoorGrid::progress_hash(const EnvState& state) const {
  return hash_ints({agent_x(state), agent_y(state), has_key(state) ? 1 : 0});
}

// ---------------------------------------------------------------------------

std::unique_ptr<Environment> make_environment(std::string_view name,
                                              const EnvOptions& options) {
  if (name == "chaincraft") return std::make_unique<ChainCraft>(options);
  if (name == "keydoorgrid") return std::make_unique<KeyDoorGrid>(options);
  throw ConfigError("unknown environment '" + std::string(name) + "'");
}

std::vector<std::string> environment_names() {
  return {"chaincraft", "keydoorgrid"};
}

}  // namespace spa::env
