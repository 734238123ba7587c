#include "spa/explorer.hpp"

#include <cstring>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "spa/common.hpp"

namespace spa::explore {

using nlohmann::json;

Trajectory rollout(const env::Environment& env,
                   const agent::Featurizer& features,
                   const agent::PolicyNet& policy,
                   const env::TaskInstance& task, std::uint64_t seed,
                   double temperature) {
  Rng rng(derive_seed(seed, 0x5A3B5A3BULL));
  Trajectory traj;
  traj.task = task;
  traj.seed = seed;
  auto [state, obs] = env.reset(task, seed);
  traj.initial_observation = obs;
  traj.steps.reserve(task.max_steps);
  agent::FeatureVector x(features.width());
  while (!state.done) {
    features.encode(traj, traj.size(), x);
    const auto pick = agent::sample_action(policy, x, temperature, rng);
    auto [next, result] = env.step(task, state, pick.action);
    traj.steps.push_back(
        {pick.action, result.observation_id, result.grounded, pick.logprob});
    traj.terminal_reward = result.reward();
    state = std::move(next);
  }
  return traj;
}

std::string policy_hash(const nn::Mlp& net) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (int d : net.dims()) feed(&d, sizeof d);
  for (double p : net.params()) {
    std::uint64_t bits;
    std::memcpy(&bits, &p, sizeof bits);
    feed(&bits, sizeof bits);
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

std::span<const Trajectory> ExploreDataset::group(
    std::size_t task_index) const {
  const auto m = static_cast<std::size_t>(rollouts_per_task);
  return std::span<const Trajectory>(trajectories)
      .subspan(task_index * m, m);
}

ExploreDataset collect(const env::Environment& env,
                       const agent::Featurizer& features,
                       const agent::PolicyNet& policy,
                       const std::vector<env::TaskInstance>& tasks, int M,
                       double temperature, std::uint64_t base_seed) {
  if (M < 1) throw UsageError("collect needs at least one rollout per task");
  ExploreDataset ds;
  ds.env_name = std::string(env.name());
  ds.env_options = env.options();
  ds.rollouts_per_task = M;
  ds.temperature = temperature;
  ds.base_seed = base_seed;
  ds.policy_checkpoint = policy_hash(policy.net);
  for (const auto& t : tasks) ds.task_ids.push_back(t.task_id);
  ds.trajectories.resize(tasks.size() * static_cast<std::size_t>(M));
  parallel_for(ds.trajectories.size(), [&](std::size_t k) {
    const std::size_t i = k / M;
    const int j = static_cast<int>(k % M);
    ds.trajectories[k] = rollout(env, features, policy, tasks[i],
                                 rollout_seed(base_seed, i, M, j),
                                 temperature);
  });
  return ds;
}

DatasetStats dataset_stats(std::span<const Trajectory> trajectories) {
  if (trajectories.empty()) throw UsageError("dataset_stats of empty dataset");
  DatasetStats s;
  s.trajectories = trajectories.size();
  s.reward_histogram.assign(10, 0);
  std::size_t successes = 0;
  double reward_sum = 0.0;
  double grounding_sum = 0.0;
  for (const auto& t : trajectories) {
    const int bin = std::clamp(static_cast<int>(t.terminal_reward * 10.0), 0, 9);
    ++s.reward_histogram[bin];
    const std::size_t lbin = t.size() / 5;
    if (s.length_histogram.size() <= lbin) s.length_histogram.resize(lbin + 1);
    ++s.length_histogram[lbin];
    reward_sum += t.terminal_reward;
    if (t.terminal_reward >= 1.0) ++successes;
    grounding_sum += grounding_accuracy(t);
  }
  const double n = static_cast<double>(trajectories.size());
  s.mean_reward = reward_sum / n;
  s.success_rate = static_cast<double>(successes) / n;
  s.grounding_rate = grounding_sum / n;
  return s;
}

DatasetStats dataset_stats(const ExploreDataset& ds) {
  return dataset_stats(std::span<const Trajectory>(ds.trajectories));
}

// ---------------------------------------------------------------------------
// Files

namespace {

json options_json(const env::EnvOptions& o) {
  return {{"min_subtasks", o.min_subtasks},
          {"max_subtasks", o.max_subtasks},
          {"min_distractors", o.min_distractors},
          {"max_distractors", o.max_distractors},
          {"horizon", o.horizon},
          {"task_count", o.task_count}};
}

env::EnvOptions options_from_json(const json& j) {
  env::EnvOptions o;
  o.min_subtasks = j.at("min_subtasks").get<int>();
  o.max_subtasks = j.at("max_subtasks").get<int>();
  o.min_distractors = j.at("min_distractors").get<int>();
  o.max_distractors = j.at("max_distractors").get<int>();
  o.horizon = j.at("horizon").get<int>();
  o.task_count = j.at("task_count").get<int>();
  return o;
}

json header_json(const ExploreDataset& ds, const std::string& kind) {
  return {{"format", "spa-trajectories"},
          {"version", kTrajectoryFileVersion},
          {"kind", kind},
          {"env", ds.env_name},
          {"env_options", options_json(ds.env_options)},
          {"rollouts_per_task", ds.rollouts_per_task},
          {"temperature", ds.temperature},
          {"base_seed", ds.base_seed},
          {"policy", ds.policy_checkpoint},
          {"tasks", ds.task_ids},
          {"truncated", ds.truncated_tasks}};
}

json record_json(const Trajectory& t) {
  json actions = json::array(), observations = json::array(),
       grounded = json::array(), logprobs = json::array();
  for (const auto& s : t.steps) {
    actions.push_back(s.action);
    observations.push_back(s.observation);
    grounded.push_back(s.grounded ? 1 : 0);
    logprobs.push_back(s.logprob);
  }
  return {{"task", t.task.task_id},
          {"seed", t.seed},
          {"initial_observation", t.initial_observation},
          {"actions", actions},
          {"observations", observations},
          {"grounded", grounded},
          {"logprobs", logprobs},
          {"reward", t.terminal_reward}};
}

}  // namespace

TrajectoryWriter::TrajectoryWriter(const std::string& path,
                                   const ExploreDataset& header,
                                   const std::string& kind)
    : out_(path) {
  if (!out_) throw ConfigError("cannot write " + path);
  out_ << header_json(header, kind).dump() << '\n';
}

void TrajectoryWriter::append(const Trajectory& traj) {
  out_ << record_json(traj).dump() << '\n';
  if (!out_) throw std::runtime_error("trajectory file write failed");
}

void write_dataset(const ExploreDataset& ds, const std::string& path,
                   const std::string& kind) {
  TrajectoryWriter w(path, ds, kind);
  for (const auto& t : ds.trajectories) w.append(t);
}

ExploreDataset read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path + ": empty file");
  ExploreDataset ds;
  try {
    const json h = json::parse(line);
    if (h.at("format") != "spa-trajectories") {
      throw ConfigError(path + ": not a trajectory file");
    }
    if (h.at("version").get<int>() != kTrajectoryFileVersion) {
      throw ConfigError(path + ": unsupported trajectory file version");
    }
    ds.env_name = h.at("env").get<std::string>();
    ds.env_options = options_from_json(h.at("env_options"));
    ds.rollouts_per_task = h.at("rollouts_per_task").get<int>();
    ds.temperature = h.at("temperature").get<double>();
    ds.base_seed = h.at("base_seed").get<std::uint64_t>();
    ds.policy_checkpoint = h.at("policy").get<std::string>();
    ds.task_ids = h.at("tasks").get<std::vector<int>>();
    ds.truncated_tasks = h.at("truncated").get<std::vector<int>>();

    const auto env = env::make_environment(ds.env_name, ds.env_options);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json r = json::parse(line);
      Trajectory t;
      t.task = env->task(r.at("task").get<int>());
      t.seed = r.at("seed").get<std::uint64_t>();
      t.initial_observation = r.at("initial_observation").get<int>();
      const auto actions = r.at("actions").get<std::vector<int>>();
      const auto observations = r.at("observations").get<std::vector<int>>();
      const auto grounded = r.at("grounded").get<std::vector<int>>();
      const auto logprobs = r.at("logprobs").get<std::vector<double>>();
      if (observations.size() != actions.size() ||
          grounded.size() != actions.size() ||
          logprobs.size() != actions.size()) {
        throw ConfigError(path + ": record field lengths differ");
      }
      for (std::size_t i = 0; i < actions.size(); ++i) {
        t.steps.push_back(
            {actions[i], observations[i], grounded[i] != 0, logprobs[i]});
      }
      t.terminal_reward = r.at("reward").get<double>();
      ds.trajectories.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return ds;
}

}  // namespace spa::explore
