#include "spa/agent.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace spa::agent {

Featurizer::Featurizer(const env::Environment& env, int history_k)
    : env_(&env),
      history_k_(history_k),
      actions_(env.action_count()),
      observations_(env.observation_count()),
      goal_width_(env.goal_width()) {
  if (history_k < 0) throw ConfigError("history length must be >= 0");
  block_ = actions_ + observations_ + 1;
  width_ = goal_width_ + observations_ + history_k_ * block_ + 1;
}

void Featurizer::encode(const Trajectory& traj, std::size_t t,
                        std::span<double> out) const {
  if (t > traj.size()) throw UsageError("featurize beyond trajectory end");
  if (static_cast<int>(out.size()) != width_) {
    throw UsageError("feature buffer width mismatch");
  }
  std::fill(out.begin(), out.end(), 0.0);
  env_->encode_goal(traj.task, out.subspan(0, goal_width_));
  std::size_t pos = goal_width_;
  const int current =
      t == 0 ? traj.initial_observation : traj.steps[t - 1].observation;
  out[pos + current] = 1.0;
  pos += observations_;
  for (int k = 0; k < history_k_; ++k, pos += block_) {
    if (static_cast<std::size_t>(k) >= t) continue;
    const Step& s = traj.steps[t - 1 - k];
    out[pos + s.action] = 1.0;
    out[pos + actions_ + s.observation] = 1.0;
    out[pos + actions_ + observations_] = s.grounded ? 1.0 : 0.0;
  }
  out[pos] = static_cast<double>(t) / traj.task.max_steps;
}

FeatureVector Featurizer::operator()(const Trajectory& traj,
                                     std::size_t t) const {
  FeatureVector x(width_);
  encode(traj, t, x);
  return x;
}

namespace {
std::vector<int> layer_dims(int in, const NetShape& shape, int out) {
  std::vector<int> dims{in};
  dims.insert(dims.end(), shape.hidden.begin(), shape.hidden.end());
  dims.push_back(out);
  return dims;
}
}  // namespace

PolicyNet make_policy(int feature_width, int action_count,
                      const NetShape& shape, Rng& rng) {
  PolicyNet p{nn::Mlp(layer_dims(feature_width, shape, action_count),
                      shape.activation)};
  p.net.init_glorot(rng);
  return p;
}

ValueNet make_value(int feature_width, const NetShape& shape, Rng& rng) {
  ValueNet v{nn::Mlp(layer_dims(feature_width, shape, 1), shape.activation)};
  v.net.init_glorot(rng);
  return v;
}

ActionSample sample_from_logits(std::span<const double> logits,
                                double temperature, Rng& rng) {
  if (temperature < 0.0) throw UsageError("temperature must be >= 0");
  if (temperature == 0.0) {
    const int a = static_cast<int>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    return {a, nn::softmax_logprob(logits, a).value};
  }
  std::vector<double> scaled(logits.begin(), logits.end());
  for (double& z : scaled) z /= temperature;
  const auto p = nn::softmax(scaled);
  const double u = uniform01(rng);
  double cum = 0.0;
  int a = static_cast<int>(p.size()) - 1;
  for (std::size_t i = 0; i < p.size(); ++i) {
    cum += p[i];
    if (u < cum) {
      a = static_cast<int>(i);
      break;
    }
  }
  return {a, nn::softmax_logprob(scaled, a).value};
}

ActionSample sample_action(const PolicyNet& policy, std::span<const double> x,
                           double temperature, Rng& rng) {
  const auto logits = policy.net.predict(x);
  return sample_from_logits(logits, temperature, rng);
}

namespace {

struct Sample {
  FeatureVector x;
  int action;
};

std::vector<Sample> flatten(const Featurizer& features,
                            const std::vector<Trajectory>& trajectories) {
  std::vector<Sample> out;
  for (const auto& traj : trajectories) {
    for (std::size_t t = 0; t < traj.size(); ++t) {
      out.push_back({features(traj, t), traj.steps[t].action});
    }
  }
  return out;
}

double mean_nll(const PolicyNet& policy, const std::vector<Sample>& samples) {
  double total = 0.0;
  for (const auto& s : samples) {
    total -= nn::softmax_logprob(policy.net.predict(s.x), s.action).value;
  }
  return total / static_cast<double>(samples.size());
}

}  // namespace

double mean_nll(const PolicyNet& policy, const Featurizer& features,
                const std::vector<Trajectory>& trajectories) {
  const auto samples = flatten(features, trajectories);
  if (samples.empty()) throw UsageError("mean_nll of an empty dataset");
  return mean_nll(policy, samples);
}

double top1_accuracy(const PolicyNet& policy, const Featurizer& features,
                     const std::vector<Trajectory>& trajectories) {
  const auto samples = flatten(features, trajectories);
  if (samples.empty()) throw UsageError("top1_accuracy of an empty dataset");
  std::size_t hits = 0;
  for (const auto& s : samples) {
    const auto logits = policy.net.predict(s.x);
    const auto best = std::max_element(logits.begin(), logits.end());
    if (best - logits.begin() == s.action) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

BcResult behavior_clone(PolicyNet& policy, const Featurizer& features,
                        const std::vector<Trajectory>& experts,
                        const BcConfig& config) {
  if (experts.empty()) throw UsageError("behavior cloning needs expert data");
  for (const auto& t : experts) {
    if (t.terminal_reward < 1.0) {
      throw UsageError("behavior cloning expects successful trajectories");
    }
  }
  auto samples = flatten(features, experts);
  if (samples.empty()) throw UsageError("expert trajectories have no steps");
  const std::size_t n = samples.size();
  const std::size_t batch =
      config.batch_size > 0 ? static_cast<std::size_t>(config.batch_size) : n;
  const long batches_per_epoch = static_cast<long>((n + batch - 1) / batch);

  nn::OptimizerConfig opt_cfg = config.optimizer;
  if (opt_cfg.schedule == nn::Schedule::Cosine && opt_cfg.total_steps <= 0) {
    opt_cfg.total_steps = batches_per_epoch * config.epochs;
  }
  nn::Optimizer opt(opt_cfg, policy.net.params().size());
  Rng rng(config.shuffle_seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  BcResult result;
  result.loss_curve.push_back(mean_nll(policy, samples));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) {
      std::swap(order[i - 1], order[uniform_int(rng, static_cast<int>(i))]);
    }
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      policy.net.zero_grad();
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const auto& s = samples[order[i]];
        const auto logits = policy.net.forward(s.x);
        auto lp = nn::softmax_logprob(logits, s.action);
        for (double& g : lp.nll_grad) g *= scale;
        policy.net.backward(lp.nll_grad, false);
      }
      opt.step(policy.net.params(), policy.net.grads());
    }
    result.loss_curve.push_back(mean_nll(policy, samples));
  }
  return result;
}

}  // namespace spa::agent
