#pragma once

// Policy rollouts and the exploration dataset used to fit the progress
// estimator.

#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "spa/agent.hpp"
#include "spa/envsim.hpp"
#include "spa/trajectory.hpp"

namespace spa::explore {

// One episode from reset(task, seed). Action sampling uses an RNG derived
// from the episode seed alone, so episodes are reproducible in isolation.
Trajectory rollout(const env::Environment& env,
                   const agent::Featurizer& features,
                   const agent::PolicyNet& policy,
                   const env::TaskInstance& task, std::uint64_t seed,
                   double temperature);

// Hex digest of the network parameters; recorded as dataset provenance.
std::string policy_hash(const nn::Mlp& net);

struct ExploreDataset {
  std::string env_name;
  env::EnvOptions env_options;
  int rollouts_per_task = 0;
  double temperature = 0.0;
  std::uint64_t base_seed = 0;
  std::string policy_checkpoint;
  std::vector<int> task_ids;
  std::vector<int> truncated_tasks;
  // Task-major: rollouts of task_ids[i] occupy [i * M, (i + 1) * M).
  std::vector<Trajectory> trajectories;

  std::span<const Trajectory> group(std::size_t task_index) const;
  bool operator==(const ExploreDataset&) const = default;
};

// Seed of rollout j of the i-th task.
constexpr std::uint64_t rollout_seed(std::uint64_t base_seed, std::size_t i,
                                     int m, int j) {
  return base_seed + static_cast<std::uint64_t>(i) * m + j;
}

// |tasks| * M rollouts, rollout j of task i seeded with
// base_seed + i * M + j. Throws UsageError if M < 1.
ExploreDataset collect(const env::Environment& env,
                       const agent::Featurizer& features,
                       const agent::PolicyNet& policy,
                       const std::vector<env::TaskInstance>& tasks, int M,
                       double temperature, std::uint64_t base_seed);

struct DatasetStats {
  std::size_t trajectories = 0;
  // Ten bins of width 0.1 over [0, 1]; R = 1 falls in the last bin.
  std::vector<std::size_t> reward_histogram;
  // Bins of width 5 by trajectory length: 1-4 in bin 0, 5-9 in bin 1, ...
  std::vector<std::size_t> length_histogram;
  double mean_reward = 0.0;
  double success_rate = 0.0;
  double grounding_rate = 0.0;  // mean of per-trajectory grounding accuracy
};

DatasetStats dataset_stats(std::span<const Trajectory> trajectories);
DatasetStats dataset_stats(const ExploreDataset& ds);

// ---------------------------------------------------------------------------
// Trajectory files: JSON lines. The first line is a header object
//   {"format":"spa-trajectories","version":1,"kind":...,"env":...,
//    "env_options":{...},"rollouts_per_task":M,"temperature":T,
//    "base_seed":S,"policy":"<hash>","tasks":[...],"truncated":[...]}
// followed by one record per trajectory
//   {"task":id,"seed":s,"initial_observation":o,"actions":[...],
//    "observations":[...],"grounded":[0|1,...],"logprobs":[...],
//    "reward":R}
// Doubles are written with round-trip precision.

inline constexpr int kTrajectoryFileVersion = 1;

void write_dataset(const ExploreDataset& ds, const std::string& path,
                   const std::string& kind = "explore");
ExploreDataset read_dataset(const std::string& path);

// Append-only writer used for streaming records after a header.
class TrajectoryWriter {
 public:
  TrajectoryWriter(const std::string& path, const ExploreDataset& header,
                   const std::string& kind);
  void append(const Trajectory& traj);

 private:
  std::ofstream out_;
};

}  // namespace spa::explore
