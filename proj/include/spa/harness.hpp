#pragma once

// Experiment orchestration: run configs, the staged pipeline
// (bc -> explore -> estimator -> rl -> eval), evaluation metrics and
// cross-run comparison reports.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "spa/agent.hpp"
#include "spa/credit.hpp"
#include "spa/envsim.hpp"
#include "spa/rltrain.hpp"

namespace spa::harness {

inline constexpr int kConfigSchemaVersion = 1;

enum class RlAlgorithm { Ppo, Reinforce, Rloo, GrpoStyle };
std::string to_string(RlAlgorithm a);

struct BcSettings {
  int epochs = 3;
  int experts_per_task = 2;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
};

struct ExploreSettings {
  int rollouts_per_task = 10;
  double temperature = 0.7;
};

struct EstimatorSettings {
  credit::EstimatorMode mode = credit::EstimatorMode::Direct;
  int epochs = 1;
  int batch_size = 8;
  double learning_rate = 1e-3;
  std::vector<int> hidden = {64, 64};
};

struct RlSettings {
  RlAlgorithm algorithm = RlAlgorithm::Ppo;
  int iterations = 40;
  int tasks_per_iteration = 16;
  int rollouts_per_task = 4;
  double temperature = 1.0;
  double learning_rate = 3e-4;
};

struct RunConfig {
  int schema_version = kConfigSchemaVersion;
  std::string name = "run";
  std::string env = "chaincraft";
  env::EnvOptions env_options;
  std::vector<int> train_tasks;
  std::vector<int> test_tasks;
  int history_k = 8;
  agent::NetShape net;
  BcSettings bc;
  ExploreSettings explore;
  EstimatorSettings estimator;
  credit::RedistributionStrategy strategy;
  rl::PpoConfig ppo;
  RlSettings rl;
  int eval_seeds_per_task = 1;
  std::vector<std::uint64_t> seeds = {1};
  std::string output_dir = "runs/run";

  // Throws ConfigError.
  void validate() const;
  bool uses_estimator() const;
};

// Strict parsing: unknown keys, wrong types and a missing or different
// schema_version are ConfigErrors. Task splits may be given as an id list
// or as {"first": i, "count": n}.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::string& path);
nlohmann::json to_json(const RunConfig& cfg);

struct MetricsRecord {
  std::size_t episodes = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;
  double mean_reward = 0.0;
  double grounding_accuracy = 0.0;
  double mean_length = 0.0;
  // Step-interval bins of width 5 by episode length (0-4, 5-9, ...):
  // all evaluated episodes, and the successful ones.
  std::vector<std::size_t> interval_episodes;
  std::vector<std::size_t> interval_successes;
};

nlohmann::json to_json(const MetricsRecord& m);
MetricsRecord metrics_from_json(const nlohmann::json& j);

// Greedy (temperature 0) episode for every (task, seed) pair. Success means
// terminal reward 1.0.
MetricsRecord evaluate(const env::Environment& env,
                       const agent::Featurizer& features,
                       const agent::PolicyNet& policy,
                       const std::vector<env::TaskInstance>& tasks,
                       const std::vector<std::uint64_t>& seeds);

// Metrics of already collected episodes.
MetricsRecord summarize(std::span<const Trajectory> episodes);

enum class Stage { Bc = 0, Explore, Estimator, Rl, Eval };
inline constexpr int kStageCount = 5;
std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct RunOptions {
  // Restrict to one seed.
  std::optional<std::uint64_t> seed;
  // Recompute from this stage on; earlier stages must have checkpoints.
  std::optional<Stage> from_stage;
  // Stop after this stage (used to simulate interruption).
  std::optional<Stage> until_stage;
  bool quiet = true;
};

// Executes the pipeline for every configured seed under cfg.output_dir and
// returns that directory. Completed stages (marked by <stage>.done) are
// reused. Stage errors surface as StageFailure; earlier outputs remain.
std::filesystem::path run_pipeline(const RunConfig& cfg,
                                   const RunOptions& options = {});

// Per-seed final evaluation records of a run directory.
struct RunSummary {
  std::string name;
  RunConfig config;
  std::vector<std::uint64_t> seeds;
  std::vector<MetricsRecord> test_metrics;
};

RunSummary load_run(const std::filesystem::path& dir);

struct Dispersion {
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
};
Dispersion dispersion(std::vector<double> values);

struct MethodRow {
  std::string name;
  std::size_t seeds = 0;
  Dispersion success;
  Dispersion grounding;
  Dispersion mean_reward;
};

struct IntervalSeries {
  std::string baseline;
  std::vector<std::string> bins;               // "0-4", "5-9", ...
  std::vector<double> reference_successes;     // median over seeds
  std::vector<double> baseline_successes;      // median over seeds
  // (reference - baseline) / baseline; +inf when only the baseline is 0,
  // 0 when both are.
  std::vector<double> relative_improvement;
};

struct ComparisonReport {
  std::string reference;
  std::vector<MethodRow> methods;
  std::vector<IntervalSeries> intervals;
};

// The reference method is the first run using the spa strategy, or the
// first run if none does. Throws UsageError if the runs disagree on
// environment or task split.
ComparisonReport compare_runs(const std::vector<std::filesystem::path>& dirs);
nlohmann::json to_json(const ComparisonReport& r);
std::string to_markdown(const ComparisonReport& r);
// Writes <out>.json, <out>.md and <out>_intervals.csv.
void write_report(const ComparisonReport& r, const std::filesystem::path& out);

// Task ids -> instances.
std::vector<env::TaskInstance> make_tasks(const env::Environment& env,
                                          const std::vector<int>& ids);

}  // namespace spa::harness
