#include "spa/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "spa/explorer.hpp"

namespace spa::harness {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kStreamPolicyInit = 0x1001;
constexpr std::uint64_t kStreamExperts = 0x1002;
constexpr std::uint64_t kStreamBcShuffle = 0x1003;
constexpr std::uint64_t kStreamExplore = 0x2001;
constexpr std::uint64_t kStreamEstimatorInit = 0x3001;
constexpr std::uint64_t kStreamEstimatorShuffle = 0x3002;
constexpr std::uint64_t kStreamValueInit = 0x4001;
constexpr std::uint64_t kStreamRlTasks = 0x4002;
constexpr std::uint64_t kStreamRlEpisodes = 0x4003;
constexpr std::uint64_t kStreamRlCredit = 0x4004;
constexpr std::uint64_t kStreamRlUpdate = 0x4005;
constexpr std::uint64_t kStreamEval = 0x5001;

constexpr int kIntervalWidth = 5;

std::string num(double v) { return json(v).dump(); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ';';
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Metrics

json to_json(const MetricsRecord& m) {
  return {{"episodes", m.episodes},
          {"successes", m.successes},
          {"success_rate", m.success_rate},
          {"mean_reward", m.mean_reward},
          {"grounding_accuracy", m.grounding_accuracy},
          {"mean_length", m.mean_length},
          {"interval_episodes", m.interval_episodes},
          {"interval_successes", m.interval_successes}};
}

MetricsRecord metrics_from_json(const json& j) {
  MetricsRecord m;
  try {
    m.episodes = j.at("episodes").get<std::size_t>();
    m.successes = j.at("successes").get<std::size_t>();
    m.success_rate = j.at("success_rate").get<double>();
    m.mean_reward = j.at("mean_reward").get<double>();
    m.grounding_accuracy = j.at("grounding_accuracy").get<double>();
    m.mean_length = j.at("mean_length").get<double>();
    m.interval_episodes =
        j.at("interval_episodes").get<std::vector<std::size_t>>();
    m.interval_successes =
        j.at("interval_successes").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed metrics record: ") + e.what());
  }
  return m;
}

MetricsRecord evaluate(const env::Environment& env,
                       const agent::Featurizer& features,
                       const agent::PolicyNet& policy,
                       const std::vector<env::TaskInstance>& tasks,
                       const std::vector<std::uint64_t>& seeds) {
  if (tasks.empty() || seeds.empty()) {
    throw UsageError("evaluate needs at least one task and one seed");
  }
  const std::size_t n = tasks.size() * seeds.size();
  std::vector<Trajectory> episodes(n);
  parallel_for(n, [&](std::size_t i) {
    episodes[i] = explore::rollout(env, features, policy,
                                   tasks[i / seeds.size()],
                                   seeds[i % seeds.size()], 0.0);
  });
  return summarize(episodes);
}

MetricsRecord summarize(std::span<const Trajectory> episodes) {
  if (episodes.empty()) throw UsageError("summarize of no episodes");
  const std::size_t n = episodes.size();
  MetricsRecord m;
  m.episodes = n;
  double reward = 0.0, grounding = 0.0, length = 0.0;
  for (const Trajectory& t : episodes) {
    const bool success = t.terminal_reward == 1.0;
    const std::size_t bin = t.size() / kIntervalWidth;
    if (m.interval_episodes.size() <= bin) {
      m.interval_episodes.resize(bin + 1, 0);
      m.interval_successes.resize(bin + 1, 0);
    }
    ++m.interval_episodes[bin];
    if (success) {
      ++m.successes;
      ++m.interval_successes[bin];
    }
    reward += t.terminal_reward;
    grounding += grounding_accuracy(t);
    length += static_cast<double>(t.size());
  }
  const double dn = static_cast<double>(n);
  m.success_rate = static_cast<double>(m.successes) / dn;
  m.mean_reward = reward / dn;
  m.grounding_accuracy = grounding / dn;
  m.mean_length = length / dn;
  return m;
}

std::vector<env::TaskInstance> make_tasks(const env::Environment& env,
                                          const std::vector<int>& ids) {
  std::vector<env::TaskInstance> tasks;
  tasks.reserve(ids.size());
  for (int id : ids) tasks.push_back(env.task(id));
  return tasks;
}

// ---------------------------------------------------------------------------
// Stages

std::string to_string(Stage s) {
  switch (s) {
    case Stage::Bc:
      return "bc";
    case Stage::Explore:
      return "explore";
    case Stage::Estimator:
      return "estimator";
    case Stage::Rl:
      return "rl";
    case Stage::Eval:
      return "eval";
  }
  return "unknown";
}

Stage stage_from_string(const std::string& s) {
  for (int i = 0; i < kStageCount; ++i) {
    if (to_string(static_cast<Stage>(i)) == s) return static_cast<Stage>(i);
  }
  throw ConfigError("unknown stage '" + s + "'");
}

namespace {

struct SeedContext {
  const RunConfig& cfg;
  std::uint64_t seed;
  fs::path dir;
  const env::Environment& env;
  const agent::Featurizer& features;
  bool quiet;

  fs::path file(const std::string& name) const { return dir / name; }
  void log(const std::string& msg) const {
    if (!quiet) std::cerr << "[" << cfg.name << " seed " << seed << "] " << msg
                          << "\n";
  }
};

agent::PolicyNet load_policy(const fs::path& path) {
  return agent::PolicyNet{nn::load_file(path.string())};
}

void stage_bc(const SeedContext& c) {
  const auto tasks = make_tasks(c.env, c.cfg.train_tasks);
  const int per_task = c.cfg.bc.experts_per_task;
  std::vector<Trajectory> experts;
  std::vector<int> dropped;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    for (int j = 0; j < per_task; ++j) {
      const std::uint64_t s =
          derive_seed(derive_seed(c.seed, kStreamExperts), i * per_task + j);
      Trajectory t = expert_rollout(c.env, tasks[i], s);
      if (t.terminal_reward == 1.0) {
        experts.push_back(std::move(t));
      } else {
        dropped.push_back(tasks[i].task_id);
      }
    }
  }
  if (experts.empty()) throw NumericError("no successful expert episodes");

  explore::ExploreDataset ds;
  ds.env_name = c.cfg.env;
  ds.env_options = c.cfg.env_options;
  ds.rollouts_per_task = per_task;
  ds.base_seed = derive_seed(c.seed, kStreamExperts);
  ds.policy_checkpoint = "expert";
  ds.task_ids = c.cfg.train_tasks;
  ds.truncated_tasks = dropped;
  ds.trajectories = experts;
  explore::write_dataset(ds, c.file("experts.jsonl").string(), "expert");

  Rng rng(derive_seed(c.seed, kStreamPolicyInit));
  agent::PolicyNet policy = agent::make_policy(
      c.features.width(), c.features.action_count(), c.cfg.net, rng);
  agent::BcConfig bc;
  bc.epochs = c.cfg.bc.epochs;
  bc.batch_size = c.cfg.bc.batch_size;
  bc.optimizer.learning_rate = c.cfg.bc.learning_rate;
  bc.optimizer.weight_decay = c.cfg.bc.weight_decay;
  bc.shuffle_seed = derive_seed(c.seed, kStreamBcShuffle);
  const agent::BcResult result =
      agent::behavior_clone(policy, c.features, experts, bc);
  nn::save_file(policy.net, c.file("policy_bc.mlp").string());

  const json log = {
      {"experts", experts.size()},
      {"dropped_expert_episodes", dropped.size()},
      {"loss_curve", result.loss_curve},
      {"train_top1", agent::top1_accuracy(policy, c.features, experts)}};
  write_text(c.file("bc_log.json"), log.dump(2) + "\n");
  c.log("bc: nll " + num(result.loss_curve.front()) + " -> " +
        num(result.loss_curve.back()));
}

void stage_explore(const SeedContext& c) {
  const agent::PolicyNet policy = load_policy(c.file("policy_bc.mlp"));
  const auto tasks = make_tasks(c.env, c.cfg.train_tasks);
  explore::ExploreDataset ds = explore::collect(
      c.env, c.features, policy, tasks, c.cfg.explore.rollouts_per_task,
      c.cfg.explore.temperature, derive_seed(c.seed, kStreamExplore));
  ds.env_name = c.cfg.env;
  ds.env_options = c.cfg.env_options;
  ds.policy_checkpoint = "policy_bc.mlp#" + explore::policy_hash(policy.net);
  explore::write_dataset(ds, c.file("explore.jsonl").string(), "explore");

  const explore::DatasetStats st = explore::dataset_stats(ds);
  const json j = {{"trajectories", st.trajectories},
                  {"reward_histogram", st.reward_histogram},
                  {"length_histogram", st.length_histogram},
                  {"mean_reward", st.mean_reward},
                  {"success_rate", st.success_rate},
                  {"grounding_rate", st.grounding_rate}};
  write_text(c.file("explore_stats.json"), j.dump(2) + "\n");
  c.log("explore: " + std::to_string(st.trajectories) + " rollouts, mean R " +
        num(st.mean_reward));
}

void stage_estimator(const SeedContext& c) {
  const explore::ExploreDataset ds =
      explore::read_dataset(c.file("explore.jsonl").string());
  Rng rng(derive_seed(c.seed, kStreamEstimatorInit));
  agent::NetShape shape{c.cfg.estimator.hidden, c.cfg.net.activation};
  credit::ProgressEstimator est(c.features, c.cfg.estimator.mode, shape, rng);
  credit::EstimatorTrainConfig tc;
  tc.epochs = c.cfg.estimator.epochs;
  tc.batch_size = c.cfg.estimator.batch_size;
  tc.optimizer.learning_rate = c.cfg.estimator.learning_rate;
  tc.shuffle_seed = derive_seed(c.seed, kStreamEstimatorShuffle);
  const credit::EstimatorTrainResult result =
      credit::train_estimator(est, ds, tc);
  credit::save_estimator(est, c.file("estimator.mlp").string());
  const json log = {{"loss_curve", result.loss_curve},
                    {"batch_losses", result.batch_losses}};
  write_text(c.file("estimator_log.json"), log.dump(2) + "\n");
  c.log("estimator: loss " + num(result.loss_curve.front()) + " -> " +
        num(result.loss_curve.back()));
}

std::vector<int> sample_tasks(const std::vector<int>& ids, int count,
                              Rng& rng) {
  std::vector<int> pool = ids;
  std::vector<int> out;
  for (int i = 0; i < count; ++i) {
    if (pool.empty()) pool = ids;
    const int k = uniform_int(rng, static_cast<int>(pool.size()));
    out.push_back(pool[k]);
    pool[k] = pool.back();
    pool.pop_back();
  }
  return out;
}

void stage_rl(const SeedContext& c) {
  const RunConfig& cfg = c.cfg;
  agent::PolicyNet policy = load_policy(c.file("policy_bc.mlp"));
  Rng init_rng(derive_seed(c.seed, kStreamValueInit));
  agent::ValueNet value =
      agent::make_value(c.features.width(), cfg.net, init_rng);

  std::optional<credit::ProgressEstimator> estimator;
  if (cfg.uses_estimator()) {
    estimator.emplace(
        credit::load_estimator(c.features, c.file("estimator.mlp").string()));
  }

  nn::OptimizerConfig oc{.kind = nn::OptimizerKind::Adam,
                         .learning_rate = cfg.rl.learning_rate};
  rl::PpoOptimizers ppo_opts = rl::make_ppo_optimizers(policy, value, oc);
  nn::Optimizer pg_opt(oc, policy.net.params().size());

  Rng task_rng(derive_seed(c.seed, kStreamRlTasks));
  Rng update_rng(derive_seed(c.seed, kStreamRlUpdate));
  const int per_task = cfg.rl.rollouts_per_task;

  std::ofstream jsonl(c.file("train.jsonl"), std::ios::binary);
  std::ofstream csv(c.file("train.csv"), std::ios::binary);
  csv << "iteration,episodes,mean_return,success_rate,mean_length,"
         "mean_shaped_return,grounding,policy_loss,value_loss,entropy,"
         "clip_fraction,approx_kl\n";

  for (int it = 0; it < cfg.rl.iterations; ++it) {
    const std::vector<int> ids =
        sample_tasks(cfg.train_tasks, cfg.rl.tasks_per_iteration, task_rng);
    const std::size_t n = ids.size() * per_task;
    const std::uint64_t it_seed =
        derive_seed(derive_seed(c.seed, kStreamRlEpisodes), it);
    const std::uint64_t credit_seed =
        derive_seed(derive_seed(c.seed, kStreamRlCredit), it);

    std::vector<Trajectory> batch(n);
    std::vector<std::vector<double>> rewards(n);
    const bool needs_rewards = cfg.rl.algorithm == RlAlgorithm::Ppo;
    credit::RedistributionContext ctx{&c.env, &c.features, &policy,
                                      estimator ? &*estimator : nullptr};
    parallel_for(n, [&](std::size_t i) {
      const env::TaskInstance task = c.env.task(ids[i / per_task]);
      batch[i] = explore::rollout(c.env, c.features, policy, task,
                                  derive_seed(it_seed, i), cfg.rl.temperature);
      if (needs_rewards) {
        Rng r(derive_seed(credit_seed, i));
        rewards[i] = credit::redistribute(cfg.strategy, ctx, batch[i], r);
      }
    });

    double ret = 0.0, succ = 0.0, len = 0.0, shaped = 0.0, ground = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ret += batch[i].terminal_reward;
      succ += batch[i].terminal_reward == 1.0 ? 1.0 : 0.0;
      len += static_cast<double>(batch[i].size());
      ground += grounding_accuracy(batch[i]);
      for (double r : rewards[i]) shaped += r;
    }
    const double dn = static_cast<double>(n);

    json rec = {{"iteration", it},
                {"episodes", n},
                {"mean_return", ret / dn},
                {"success_rate", succ / dn},
                {"mean_length", len / dn},
                {"mean_shaped_return", shaped / dn},
                {"grounding", ground / dn}};
    if (cfg.rl.algorithm == RlAlgorithm::Ppo) {
      const rl::PpoStats st =
          rl::ppo_update(policy, value, c.features, batch, rewards, cfg.ppo,
                         ppo_opts, update_rng);
      rec["policy_loss"] = st.policy_loss;
      rec["value_loss"] = st.value_loss;
      rec["entropy"] = st.entropy;
      rec["clip_fraction"] = st.clip_fraction;
      rec["approx_kl"] = st.approx_kl;
    } else {
      const rl::TrajectoryBaseline kind =
          cfg.rl.algorithm == RlAlgorithm::Reinforce
              ? rl::TrajectoryBaseline::Reinforce
          : cfg.rl.algorithm == RlAlgorithm::Rloo
              ? rl::TrajectoryBaseline::Rloo
              : rl::TrajectoryBaseline::GrpoStyle;
      const rl::BaselineStats st = rl::trajectory_baseline_update(
          policy, c.features, batch, kind, pg_opt, cfg.ppo.max_grad_norm);
      rec["policy_loss"] = st.loss;
      rec["value_loss"] = 0.0;
      rec["entropy"] = 0.0;
      rec["clip_fraction"] = 0.0;
      rec["approx_kl"] = 0.0;
    }
    jsonl << rec.dump() << "\n";
    csv << it;
    for (const char* key :
         {"episodes", "mean_return", "success_rate", "mean_length",
          "mean_shaped_return", "grounding", "policy_loss", "value_loss",
          "entropy", "clip_fraction", "approx_kl"}) {
      csv << "," << rec[key].dump();
    }
    csv << "\n";
    if (!c.quiet && (it % 10 == 0 || it + 1 == cfg.rl.iterations)) {
      c.log("rl iter " + std::to_string(it) + ": success " +
            num(succ / dn) + " return " + num(ret / dn));
    }
  }
  if (!jsonl || !csv) throw std::runtime_error("failed writing train logs");
  nn::save_file(policy.net, c.file("policy_rl.mlp").string());
  nn::save_file(value.net, c.file("value_rl.mlp").string());
}

std::vector<std::uint64_t> eval_seeds(const RunConfig& cfg,
                                      std::uint64_t seed) {
  std::vector<std::uint64_t> seeds;
  for (int j = 0; j < cfg.eval_seeds_per_task; ++j) {
    seeds.push_back(derive_seed(derive_seed(seed, kStreamEval), j));
  }
  return seeds;
}

json eval_record(std::uint64_t seed, const std::string& phase,
                 const MetricsRecord& m) {
  json j = {{"seed", seed}, {"phase", phase}, {"split", "test"}};
  j.update(to_json(m));
  return j;
}

void stage_eval(const SeedContext& c) {
  const auto tasks = make_tasks(c.env, c.cfg.test_tasks);
  const auto seeds = eval_seeds(c.cfg, c.seed);
  std::string lines;
  for (const auto& [phase, file] :
       {std::pair{"bc", "policy_bc.mlp"}, std::pair{"final", "policy_rl.mlp"}}) {
    const agent::PolicyNet policy = load_policy(c.file(file));
    const MetricsRecord m = evaluate(c.env, c.features, policy, tasks, seeds);
    lines += eval_record(c.seed, phase, m).dump() + "\n";
    c.log(std::string("eval ") + phase + ": success " + num(m.success_rate) +
          " grounding " + num(m.grounding_accuracy));
  }
  write_text(c.file("metrics.jsonl"), lines);
}

void write_aggregate(const RunConfig& cfg, const fs::path& root) {
  std::string jsonl;
  std::string csv =
      "seed,phase,split,episodes,successes,success_rate,mean_reward,"
      "grounding_accuracy,mean_length,interval_episodes,interval_successes\n";
  for (std::uint64_t seed : cfg.seeds) {
    const fs::path file =
        root / ("seed_" + std::to_string(seed)) / "metrics.jsonl";
    if (!fs::exists(file)) continue;
    std::istringstream in(read_text(file));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      jsonl += line + "\n";
      const json j = json::parse(line);
      const MetricsRecord m = metrics_from_json(j);
      csv += std::to_string(seed) + "," + j.at("phase").get<std::string>() +
             "," + j.at("split").get<std::string>() + "," +
             std::to_string(m.episodes) + "," + std::to_string(m.successes) +
             "," + num(m.success_rate) + "," + num(m.mean_reward) + "," +
             num(m.grounding_accuracy) + "," + num(m.mean_length) + "," +
             join(m.interval_episodes) + "," + join(m.interval_successes) +
             "\n";
    }
  }
  write_text(root / "metrics.jsonl", jsonl);
  write_text(root / "metrics.csv", csv);
}

}  // namespace

fs::path run_pipeline(const RunConfig& cfg, const RunOptions& options) {
  cfg.validate();
  const fs::path root = cfg.output_dir;
  fs::create_directories(root);
  write_text(root / "config.json", to_json(cfg).dump(2) + "\n");

  const auto env = env::make_environment(cfg.env, cfg.env_options);
  const agent::Featurizer features(*env, cfg.history_k);

  std::vector<std::uint64_t> seeds = cfg.seeds;
  if (options.seed) {
    if (std::find(seeds.begin(), seeds.end(), *options.seed) == seeds.end()) {
      throw ConfigError("seed " + std::to_string(*options.seed) +
                        " is not in the config's seed list");
    }
    seeds = {*options.seed};
  }

  using Fn = void (*)(const SeedContext&);
  const Fn stages[kStageCount] = {stage_bc, stage_explore, stage_estimator,
                                  stage_rl, stage_eval};

  for (std::uint64_t seed : seeds) {
    const fs::path dir = root / ("seed_" + std::to_string(seed));
    fs::create_directories(dir);
    SeedContext ctx{cfg, seed, dir, *env, features, options.quiet};
    json timing = json::object();
    if (fs::exists(dir / "timing.json")) {
      timing = json::parse(read_text(dir / "timing.json"));
    }
    if (options.from_stage) {
      for (int s = static_cast<int>(*options.from_stage); s < kStageCount;
           ++s) {
        fs::remove(dir / (to_string(static_cast<Stage>(s)) + ".done"));
      }
    }
    for (int s = 0; s < kStageCount; ++s) {
      const Stage stage = static_cast<Stage>(s);
      const std::string name = to_string(stage);
      const bool skip = (stage == Stage::Explore ||
                         stage == Stage::Estimator) &&
                        !cfg.uses_estimator();
      const fs::path marker = dir / (name + ".done");
      if (!skip && !fs::exists(marker)) {
        const auto start = std::chrono::steady_clock::now();
        try {
          stages[s](ctx);
        } catch (const StageFailure&) {
          throw;
        } catch (const std::exception& e) {
          throw StageFailure(name, e.what());
        }
        const std::chrono::duration<double> dt =
            std::chrono::steady_clock::now() - start;
        timing[name] = dt.count();
        write_text(dir / "timing.json", timing.dump(2) + "\n");
        write_text(marker, "");
      }
      if (options.until_stage && stage == *options.until_stage) break;
    }
  }
  write_aggregate(cfg, root);
  return root;
}

// ---------------------------------------------------------------------------
// Reports

RunSummary load_run(const fs::path& dir) {
  RunSummary r;
  json cj;
  try {
    cj = json::parse(read_text(dir / "config.json"));
  } catch (const json::exception& e) {
    throw ConfigError(dir.string() + "/config.json: " + e.what());
  }
  r.config = parse_config(cj);
  r.name = r.config.name;
  std::istringstream in(read_text(dir / "metrics.jsonl"));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ConfigError(dir.string() + "/metrics.jsonl: " + e.what());
    }
    if (j.value("phase", "") != "final") continue;
    r.seeds.push_back(j.at("seed").get<std::uint64_t>());
    r.test_metrics.push_back(metrics_from_json(j));
  }
  if (r.test_metrics.empty()) {
    throw ConfigError(dir.string() + " has no final metrics");
  }
  return r;
}

Dispersion dispersion(std::vector<double> values) {
  if (values.empty()) throw UsageError("dispersion of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  Dispersion d;
  d.min = values.front();
  d.max = values.back();
  d.median = n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
  return d;
}

namespace {

double median_bin(const RunSummary& run, std::size_t bin) {
  std::vector<double> v;
  for (const MetricsRecord& m : run.test_metrics) {
    v.push_back(bin < m.interval_successes.size()
                    ? static_cast<double>(m.interval_successes[bin])
                    : 0.0);
  }
  return dispersion(v).median;
}

std::size_t bin_count(const RunSummary& run) {
  std::size_t n = 0;
  for (const MetricsRecord& m : run.test_metrics) {
    n = std::max(n, m.interval_successes.size());
  }
  return n;
}

}  // namespace

ComparisonReport compare_runs(const std::vector<fs::path>& dirs) {
  if (dirs.empty()) throw UsageError("compare needs at least one run");
  std::vector<RunSummary> runs;
  for (const fs::path& d : dirs) runs.push_back(load_run(d));
  const RunConfig& first = runs.front().config;
  for (const RunSummary& r : runs) {
    if (r.config.env != first.env || !(r.config.env_options == first.env_options)) {
      throw UsageError("runs use different environments: " + first.name +
                       " vs " + r.name);
    }
    if (r.config.train_tasks != first.train_tasks ||
        r.config.test_tasks != first.test_tasks) {
      throw UsageError("runs use different task splits: " + first.name +
                       " vs " + r.name);
    }
  }

  std::size_t ref = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (runs[i].config.strategy.kind == credit::StrategyKind::Spa) {
      ref = i;
      break;
    }
  }

  ComparisonReport report;
  report.reference = runs[ref].name;
  for (const RunSummary& r : runs) {
    MethodRow row;
    row.name = r.name;
    row.seeds = r.test_metrics.size();
    std::vector<double> s, g, m;
    for (const MetricsRecord& rec : r.test_metrics) {
      s.push_back(rec.success_rate);
      g.push_back(rec.grounding_accuracy);
      m.push_back(rec.mean_reward);
    }
    row.success = dispersion(s);
    row.grounding = dispersion(g);
    row.mean_reward = dispersion(m);
    report.methods.push_back(row);
  }

  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (i == ref && runs.size() > 1) continue;
    IntervalSeries series;
    series.baseline = runs[i].name;
    const std::size_t bins = std::max(bin_count(runs[ref]), bin_count(runs[i]));
    for (std::size_t b = 0; b < bins; ++b) {
      series.bins.push_back(std::to_string(b * kIntervalWidth) + "-" +
                            std::to_string(b * kIntervalWidth +
                                           kIntervalWidth - 1));
      const double a = median_bin(runs[ref], b);
      const double base = median_bin(runs[i], b);
      series.reference_successes.push_back(a);
      series.baseline_successes.push_back(base);
      double rel = 0.0;
      if (base != 0.0) {
        rel = (a - base) / base;
      } else if (a != 0.0) {
        rel = std::numeric_limits<double>::infinity();
      }
      series.relative_improvement.push_back(rel);
    }
    report.intervals.push_back(series);
  }
  return report;
}

namespace {

json dispersion_json(const Dispersion& d) {
  return {{"median", d.median}, {"min", d.min}, {"max", d.max}};
}

// JSON has no infinity; the report writes it as the string "inf".
json finite_or_string(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

std::string fixed(double v, int digits) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(digits);
  ss << v;
  return ss.str();
}

std::string pct(double v) { return fixed(100.0 * v, 1); }

}  // namespace

json to_json(const ComparisonReport& r) {
  json methods = json::array();
  for (const MethodRow& m : r.methods) {
    methods.push_back({{"name", m.name},
                       {"seeds", m.seeds},
                       {"success", dispersion_json(m.success)},
                       {"grounding", dispersion_json(m.grounding)},
                       {"mean_reward", dispersion_json(m.mean_reward)}});
  }
  json intervals = json::array();
  for (const IntervalSeries& s : r.intervals) {
    json rel = json::array();
    for (double v : s.relative_improvement) rel.push_back(finite_or_string(v));
    intervals.push_back({{"baseline", s.baseline},
                         {"bins", s.bins},
                         {"reference_successes", s.reference_successes},
                         {"baseline_successes", s.baseline_successes},
                         {"relative_improvement", rel}});
  }
  return {{"reference", r.reference},
          {"methods", methods},
          {"intervals", intervals}};
}

std::string to_markdown(const ComparisonReport& r) {
  std::ostringstream md;
  md << "# Comparison (reference: " << r.reference << ")\n\n";
  md << "| Method | Seeds | Succ. (%) | Gro. (%) | Mean reward |\n";
  md << "|---|---|---|---|---|\n";
  for (const MethodRow& m : r.methods) {
    md << "| " << m.name << " | " << m.seeds << " | " << pct(m.success.median)
       << " [" << pct(m.success.min) << ", " << pct(m.success.max) << "] | "
       << pct(m.grounding.median) << " [" << pct(m.grounding.min) << ", "
       << pct(m.grounding.max) << "] | " << fixed(m.mean_reward.median, 3)
       << " |\n";
  }
  for (const IntervalSeries& s : r.intervals) {
    md << "\n## " << r.reference << " vs " << s.baseline
       << " by step interval\n\n";
    md << "| Steps | " << r.reference << " | " << s.baseline
       << " | Relative improvement |\n|---|---|---|---|\n";
    for (std::size_t b = 0; b < s.bins.size(); ++b) {
      const double v = s.relative_improvement[b];
      md << "| " << s.bins[b] << " | " << fixed(s.reference_successes[b], 1)
         << " | " << fixed(s.baseline_successes[b], 1) << " | "
         << (std::isinf(v) ? std::string("inf") : pct(v) + "%") << " |\n";
    }
  }
  return md.str();
}

void write_report(const ComparisonReport& r, const fs::path& out) {
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const std::string base = out.string();
  write_text(base + ".json", to_json(r).dump(2) + "\n");
  write_text(base + ".md", to_markdown(r));
  std::string csv =
      "reference,baseline,bin,reference_successes,baseline_successes,"
      "relative_improvement\n";
  for (const IntervalSeries& s : r.intervals) {
    for (std::size_t b = 0; b < s.bins.size(); ++b) {
      const double v = s.relative_improvement[b];
      csv += r.reference + "," + s.baseline + "," + s.bins[b] + "," +
             num(s.reference_successes[b]) + "," +
             num(s.baseline_successes[b]) + "," +
             (std::isinf(v) ? std::string("inf") : num(v)) + "\n";
    }
  }
  write_text(base + "_intervals.csv", csv);
}

}  // namespace spa::harness
