#include <fstream>
#include <set>

#include "spa/harness.hpp"

namespace spa::harness {

using nlohmann::json;

std::string to_string(RlAlgorithm a) {
  switch (a) {
    case RlAlgorithm::Ppo:
      return "ppo";
    case RlAlgorithm::Reinforce:
      return "reinforce";
    case RlAlgorithm::Rloo:
      return "rloo";
    case RlAlgorithm::GrpoStyle:
      return "grpo_style";
  }
  return "unknown";
}

namespace {

RlAlgorithm algorithm_from_string(const std::string& s) {
  if (s == "ppo") return RlAlgorithm::Ppo;
  if (s == "reinforce") return RlAlgorithm::Reinforce;
  if (s == "rloo") return RlAlgorithm::Rloo;
  if (s == "grpo_style") return RlAlgorithm::GrpoStyle;
  throw ConfigError("unknown rl algorithm '" + s + "'");
}

// Reads optional keys of one JSON object and rejects the ones nobody asked
// for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  const json* sub(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  std::string where(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) {
        throw ConfigError("unknown config key '" + where(item.key()) + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<int> parse_split(const json& j, const std::string& where) {
  if (j.is_array()) {
    try {
      return j.get<std::vector<int>>();
    } catch (const json::exception&) {
      throw ConfigError(where + " must be a list of task ids");
    }
  }
  Section s(j, where);
  int first = 0, count = 0;
  s.get("first", first);
  s.get("count", count);
  s.finish();
  if (count < 0) throw ConfigError(where + ".count must be >= 0");
  std::vector<int> ids(count);
  for (int i = 0; i < count; ++i) ids[i] = first + i;
  return ids;
}

}  // namespace

RunConfig parse_config(const json& j) {
  RunConfig c;
  Section root(j, "");
  int version = -1;
  root.get("schema_version", version);
  if (version != kConfigSchemaVersion) {
    throw ConfigError("schema_version must be " +
                      std::to_string(kConfigSchemaVersion));
  }
  root.get("name", c.name);
  root.get("env", c.env);
  if (const json* o = root.sub("env_options")) {
    Section s(*o, "env_options");
    s.get("min_subtasks", c.env_options.min_subtasks);
    s.get("max_subtasks", c.env_options.max_subtasks);
    s.get("min_distractors", c.env_options.min_distractors);
    s.get("max_distractors", c.env_options.max_distractors);
    s.get("horizon", c.env_options.horizon);
    s.get("task_count", c.env_options.task_count);
    s.finish();
  }
  if (const json* t = root.sub("train_tasks")) {
    c.train_tasks = parse_split(*t, "train_tasks");
  }
  if (const json* t = root.sub("test_tasks")) {
    c.test_tasks = parse_split(*t, "test_tasks");
  }
  root.get("history_k", c.history_k);
  if (const json* o = root.sub("net")) {
    Section s(*o, "net");
    s.get("hidden", c.net.hidden);
    std::string act = nn::to_string(c.net.activation);
    s.get("activation", act);
    c.net.activation = nn::activation_from_string(act);
    s.finish();
  }
  if (const json* o = root.sub("bc")) {
    Section s(*o, "bc");
    s.get("epochs", c.bc.epochs);
    s.get("experts_per_task", c.bc.experts_per_task);
    s.get("batch_size", c.bc.batch_size);
    s.get("learning_rate", c.bc.learning_rate);
    s.get("weight_decay", c.bc.weight_decay);
    s.finish();
  }
  if (const json* o = root.sub("explore")) {
    Section s(*o, "explore");
    s.get("rollouts_per_task", c.explore.rollouts_per_task);
    s.get("temperature", c.explore.temperature);
    s.finish();
  }
  if (const json* o = root.sub("estimator")) {
    Section s(*o, "estimator");
    std::string mode = credit::to_string(c.estimator.mode);
    s.get("mode", mode);
    c.estimator.mode = credit::estimator_mode_from_string(mode);
    s.get("epochs", c.estimator.epochs);
    s.get("batch_size", c.estimator.batch_size);
    s.get("learning_rate", c.estimator.learning_rate);
    s.get("hidden", c.estimator.hidden);
    s.finish();
  }
  if (const json* o = root.sub("strategy")) {
    Section s(*o, "strategy");
    std::string kind = credit::to_string(c.strategy.kind);
    s.get("kind", kind);
    c.strategy.kind = credit::strategy_from_string(kind);
    s.get("alpha", c.strategy.alpha);
    s.get("beta", c.strategy.beta);
    s.get("add_terminal", c.strategy.add_terminal);
    s.get("mc_rollouts", c.strategy.mc_rollouts);
    s.get("mc_temperature", c.strategy.mc_temperature);
    s.finish();
  }
  if (const json* o = root.sub("ppo")) {
    Section s(*o, "ppo");
    s.get("gamma", c.ppo.gamma);
    s.get("lam", c.ppo.lam);
    s.get("clip_eps", c.ppo.clip_eps);
    s.get("ppo_epochs", c.ppo.ppo_epochs);
    s.get("minibatch_size", c.ppo.minibatch_size);
    s.get("value_coef", c.ppo.value_coef);
    s.get("entropy_coef", c.ppo.entropy_coef);
    s.get("max_grad_norm", c.ppo.max_grad_norm);
    s.get("normalize_advantages", c.ppo.normalize_advantages);
    s.finish();
  }
  if (const json* o = root.sub("rl")) {
    Section s(*o, "rl");
    std::string algo = to_string(c.rl.algorithm);
    s.get("algorithm", algo);
    c.rl.algorithm = algorithm_from_string(algo);
    s.get("iterations", c.rl.iterations);
    s.get("tasks_per_iteration", c.rl.tasks_per_iteration);
    s.get("rollouts_per_task", c.rl.rollouts_per_task);
    s.get("temperature", c.rl.temperature);
    s.get("learning_rate", c.rl.learning_rate);
    s.finish();
  }
  if (const json* o = root.sub("eval")) {
    Section s(*o, "eval");
    s.get("seeds_per_task", c.eval_seeds_per_task);
    s.finish();
  }
  root.get("seeds", c.seeds);
  root.get("output_dir", c.output_dir);
  root.finish();
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_config(j);
}

void RunConfig::validate() const {
  if (schema_version != kConfigSchemaVersion) {
    throw ConfigError("unsupported schema_version");
  }
  const auto e = env::make_environment(env, env_options);
  if (train_tasks.empty()) throw ConfigError("train_tasks is empty");
  if (test_tasks.empty()) throw ConfigError("test_tasks is empty");
  for (int id : train_tasks) e->task(id);
  for (int id : test_tasks) e->task(id);
  if (history_k < 0) throw ConfigError("history_k must be >= 0");
  if (bc.epochs < 0 || bc.experts_per_task < 1) {
    throw ConfigError("bc.epochs >= 0 and bc.experts_per_task >= 1 required");
  }
  if (explore.rollouts_per_task < 1) {
    throw ConfigError("explore.rollouts_per_task must be >= 1");
  }
  if (explore.temperature < 0.0 || rl.temperature <= 0.0) {
    throw ConfigError("temperatures must be non-negative (rl: positive)");
  }
  if (rl.algorithm == RlAlgorithm::Ppo && rl.temperature != 1.0) {
    throw ConfigError("ppo samples at rl.temperature 1");
  }
  if (estimator.epochs < 0) throw ConfigError("estimator.epochs must be >= 0");
  if (strategy.mc_rollouts < 1) throw ConfigError("mc_rollouts must be >= 1");
  ppo.validate();
  if (!(ppo.clip_eps < 1.0)) throw ConfigError("ppo.clip_eps must be in (0, 1)");
  if (ppo.gamma * ppo.lam > 1.0) throw ConfigError("gamma * lam must be <= 1");
  if (rl.iterations < 0 || rl.tasks_per_iteration < 1 ||
      rl.rollouts_per_task < 1) {
    throw ConfigError("rl iteration settings must be positive");
  }
  if ((rl.algorithm == RlAlgorithm::Rloo ||
       rl.algorithm == RlAlgorithm::GrpoStyle) &&
      rl.rollouts_per_task < 2) {
    throw ConfigError("rloo / grpo_style need rl.rollouts_per_task >= 2");
  }
  if (eval_seeds_per_task < 1) throw ConfigError("eval.seeds_per_task >= 1");
  if (seeds.empty()) throw ConfigError("seeds list is empty");
  if (output_dir.empty()) throw ConfigError("output_dir is empty");
}

bool RunConfig::uses_estimator() const {
  return rl.algorithm == RlAlgorithm::Ppo &&
         strategy.kind == credit::StrategyKind::Spa;
}

json to_json(const RunConfig& c) {
  return {
      {"schema_version", c.schema_version},
      {"name", c.name},
      {"env", c.env},
      {"env_options",
       {{"min_subtasks", c.env_options.min_subtasks},
        {"max_subtasks", c.env_options.max_subtasks},
        {"min_distractors", c.env_options.min_distractors},
        {"max_distractors", c.env_options.max_distractors},
        {"horizon", c.env_options.horizon},
        {"task_count", c.env_options.task_count}}},
      {"train_tasks", c.train_tasks},
      {"test_tasks", c.test_tasks},
      {"history_k", c.history_k},
      {"net",
       {{"hidden", c.net.hidden},
        {"activation", nn::to_string(c.net.activation)}}},
      {"bc",
       {{"epochs", c.bc.epochs},
        {"experts_per_task", c.bc.experts_per_task},
        {"batch_size", c.bc.batch_size},
        {"learning_rate", c.bc.learning_rate},
        {"weight_decay", c.bc.weight_decay}}},
      {"explore",
       {{"rollouts_per_task", c.explore.rollouts_per_task},
        {"temperature", c.explore.temperature}}},
      {"estimator",
       {{"mode", credit::to_string(c.estimator.mode)},
        {"epochs", c.estimator.epochs},
        {"batch_size", c.estimator.batch_size},
        {"learning_rate", c.estimator.learning_rate},
        {"hidden", c.estimator.hidden}}},
      {"strategy",
       {{"kind", credit::to_string(c.strategy.kind)},
        {"alpha", c.strategy.alpha},
        {"beta", c.strategy.beta},
        {"add_terminal", c.strategy.add_terminal},
        {"mc_rollouts", c.strategy.mc_rollouts},
        {"mc_temperature", c.strategy.mc_temperature}}},
      {"ppo",
       {{"gamma", c.ppo.gamma},
        {"lam", c.ppo.lam},
        {"clip_eps", c.ppo.clip_eps},
        {"ppo_epochs", c.ppo.ppo_epochs},
        {"minibatch_size", c.ppo.minibatch_size},
        {"value_coef", c.ppo.value_coef},
        {"entropy_coef", c.ppo.entropy_coef},
        {"max_grad_norm", c.ppo.max_grad_norm},
        {"normalize_advantages", c.ppo.normalize_advantages}}},
      {"rl",
       {{"algorithm", to_string(c.rl.algorithm)},
        {"iterations", c.rl.iterations},
        {"tasks_per_iteration", c.rl.tasks_per_iteration},
        {"rollouts_per_task", c.rl.rollouts_per_task},
        {"temperature", c.rl.temperature},
        {"learning_rate", c.rl.learning_rate}}},
      {"eval", {{"seeds_per_task", c.eval_seeds_per_task}}},
      {"seeds", c.seeds},
      {"output_dir", c.output_dir},
  };
}

}  // namespace spa::harness
