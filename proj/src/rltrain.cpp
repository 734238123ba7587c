#include "spa/rltrain.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

namespace spa::rl {

void PpoConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in (0, 1]");
  if (!(lam >= 0.0 && lam <= 1.0)) throw ConfigError("lam must be in [0, 1]");
  if (!(clip_eps > 0.0)) throw ConfigError("clip_eps must be > 0");
  if (ppo_epochs < 1) throw ConfigError("ppo_epochs must be >= 1");
  if (minibatch_size < 1) throw ConfigError("minibatch_size must be >= 1");
  if (!(max_grad_norm > 0.0)) throw ConfigError("max_grad_norm must be > 0");
  if (value_coef < 0.0 || entropy_coef < 0.0) {
    throw ConfigError("loss coefficients must be non-negative");
  }
}

AdvantageBatch compute_gae(std::span<const double> rewards,
                           std::span<const double> values, double bootstrap,
                           double gamma, double lam) {
  if (rewards.size() != values.size()) {
    throw UsageError("compute_gae: rewards and values differ in length");
  }
  const std::size_t n = rewards.size();
  AdvantageBatch b;
  b.deltas.resize(n);
  b.advantages.resize(n);
  b.returns_to_go.resize(n);
  b.value_targets.resize(n);
  double next_value = bootstrap;
  double next_adv = 0.0;
  double next_ret = bootstrap;
  for (std::size_t i = n; i-- > 0;) {
    b.deltas[i] = rewards[i] + gamma * next_value - values[i];
    b.advantages[i] = b.deltas[i] + gamma * lam * next_adv;
    b.returns_to_go[i] = rewards[i] + gamma * next_ret;
    b.value_targets[i] = b.advantages[i] + values[i];
    next_value = values[i];
    next_adv = b.advantages[i];
    next_ret = b.returns_to_go[i];
  }
  return b;
}

VanishingReport vanishing_advantage_report(int n, double gamma, double lam,
                                           double expected_reward,
                                           double realized_reward) {
  if (n < 2) throw UsageError("vanishing_advantage_report needs n >= 2");
  const std::size_t steps = static_cast<std::size_t>(n - 1);
  // Index i holds decision step t = i + 1; its transition reward is
  // r_{t+1}, non-zero only for the last transition.
  std::vector<double> values(steps);
  std::vector<double> rewards(steps, 0.0);
  values[steps - 1] = expected_reward;
  for (std::size_t i = steps - 1; i-- > 0;) values[i] = gamma * values[i + 1];
  rewards[steps - 1] = realized_reward;
  const auto gae = compute_gae(rewards, values, 0.0, gamma, lam);

  VanishingReport rep;
  rep.n = n;
  rep.gamma = gamma;
  rep.lam = lam;
  rep.expected_reward = expected_reward;
  rep.realized_reward = realized_reward;
  const double last_delta = gae.deltas[steps - 1];
  for (std::size_t i = 0; i < steps; ++i) {
    VanishingRow row;
    row.t = static_cast<int>(i + 1);
    row.value = values[i];
    row.delta = gae.deltas[i];
    row.advantage = gae.advantages[i];
    row.closed_form =
        std::pow(gamma * lam, static_cast<double>(steps - 1 - i)) * last_delta;
    if (i + 1 < steps) {
      rep.max_intermediate_delta =
          std::max(rep.max_intermediate_delta, std::abs(row.delta));
    }
    rep.max_closed_form_gap = std::max(
        rep.max_closed_form_gap, std::abs(row.advantage - row.closed_form));
    rep.rows.push_back(row);
  }
  rep.verified =
      rep.max_intermediate_delta == 0.0 && rep.max_closed_form_gap <= 1e-12;
  return rep;
}

double clipped_surrogate(double ratio, double advantage, double clip_eps) {
  const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
  return std::min(ratio * advantage, clipped * advantage);
}

double clipped_surrogate_grad(double ratio, double advantage,
                              double clip_eps) {
  const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
  // d(ratio)/d(logp) = ratio; the clipped branch is constant.
  return ratio * advantage <= clipped * advantage ? ratio * advantage : 0.0;
}

std::vector<PpoSample> build_samples(
    const agent::Featurizer& features, const agent::ValueNet& value,
    std::span<const Trajectory> batch,
    std::span<const std::vector<double>> rewards, const PpoConfig& config) {
  if (batch.size() != rewards.size()) {
    throw UsageError("one reward stream per trajectory required");
  }
  std::vector<PpoSample> samples;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto& traj = batch[k];
    if (rewards[k].size() != traj.size()) {
      throw UsageError("reward stream length differs from trajectory");
    }
    std::vector<double> values(traj.size());
    const std::size_t first = samples.size();
    for (std::size_t t = 0; t < traj.size(); ++t) {
      PpoSample s;
      s.x = features(traj, t);
      s.action = traj.steps[t].action;
      s.old_logprob = traj.steps[t].logprob;
      values[t] = value.net.predict(s.x)[0];
      samples.push_back(std::move(s));
    }
    const auto gae =
        compute_gae(rewards[k], values, 0.0, config.gamma, config.lam);
    for (std::size_t t = 0; t < traj.size(); ++t) {
      samples[first + t].advantage = gae.advantages[t];
      samples[first + t].value_target = gae.value_targets[t];
    }
  }
  if (config.normalize_advantages && samples.size() > 1) {
    double mean = 0.0;
    for (const auto& s : samples) mean += s.advantage;
    mean /= static_cast<double>(samples.size());
    double var = 0.0;
    for (const auto& s : samples) var += (s.advantage - mean) * (s.advantage - mean);
    const double std = std::sqrt(var / static_cast<double>(samples.size()));
    for (auto& s : samples) s.advantage = (s.advantage - mean) / (std + 1e-8);
  }
  return samples;
}

PpoOptimizers make_ppo_optimizers(const agent::PolicyNet& policy,
                                  const agent::ValueNet& value,
                                  const nn::OptimizerConfig& config) {
  return {nn::Optimizer(config, policy.net.params().size()),
          nn::Optimizer(config, value.net.params().size())};
}

PpoStats ppo_minibatch_gradients(agent::PolicyNet& policy,
                                 agent::ValueNet& value,
                                 std::span<const PpoSample> samples,
                                 std::span<const std::size_t> indices,
                                 const PpoConfig& config) {
  policy.net.zero_grad();
  value.net.zero_grad();
  PpoStats st;
  if (indices.empty()) return st;
  const double scale = 1.0 / static_cast<double>(indices.size());
  std::size_t clipped = 0;
  double vgrad[1];
  for (std::size_t idx : indices) {
    const PpoSample& s = samples[idx];
    const auto logits = policy.net.forward(s.x);
    auto lp = nn::softmax_logprob(logits, s.action);
    const double ratio = std::exp(lp.value - s.old_logprob);
    const double surrogate = clipped_surrogate(ratio, s.advantage, config.clip_eps);
    const double dsur = clipped_surrogate_grad(ratio, s.advantage, config.clip_eps);
    if (std::abs(ratio - 1.0) > config.clip_eps) ++clipped;

    // d(-surrogate)/d(logits) = dsur * (softmax - onehot).
    std::vector<double> g(lp.nll_grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = dsur * lp.nll_grad[i];

    const auto p = nn::softmax(logits);
    double entropy = 0.0;
    for (double pi : p) {
      if (pi > 0.0) entropy -= pi * std::log(pi);
    }
    if (config.entropy_coef > 0.0) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double logp = p[i] > 0.0 ? std::log(p[i]) : 0.0;
        g[i] += config.entropy_coef * p[i] * (logp + entropy);
      }
    }
    for (double& v : g) v *= scale;
    policy.net.backward(g, false);

    const double v = value.net.forward(s.x)[0];
    const auto mse = nn::mse_loss(v, s.value_target);
    vgrad[0] = config.value_coef * mse.grad * scale;
    value.net.backward(vgrad, false);

    st.policy_loss -= surrogate * scale;
    st.value_loss += mse.loss * scale;
    st.entropy += entropy * scale;
    st.approx_kl += (s.old_logprob - lp.value) * scale;
  }
  st.clip_fraction = static_cast<double>(clipped) * scale;
  st.updates = 1;
  return st;
}

PpoStats ppo_update(agent::PolicyNet& policy, agent::ValueNet& value,
                    std::span<const PpoSample> samples,
                    const PpoConfig& config, PpoOptimizers& opts, Rng& rng) {
  config.validate();
  PpoStats total;
  if (samples.empty()) return total;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t mb = static_cast<std::size_t>(config.minibatch_size);
  for (int epoch = 0; epoch < config.ppo_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[uniform_int(rng, static_cast<int>(i))]);
    }
    for (std::size_t start = 0; start < order.size(); start += mb) {
      const std::size_t end = std::min(order.size(), start + mb);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const auto st = ppo_minibatch_gradients(policy, value, samples, idx, config);
      if (!std::isfinite(st.policy_loss) || !std::isfinite(st.value_loss) ||
          !std::isfinite(st.entropy)) {
        std::ostringstream msg;
        msg << "non-finite PPO loss (epoch " << epoch << ", minibatch at "
            << start << ", size " << idx.size() << "): policy "
            << st.policy_loss << ", value " << st.value_loss << ", entropy "
            << st.entropy << ", approx_kl " << st.approx_kl;
        throw NumericError(msg.str());
      }
      nn::clip_grad_norm(policy.net.grads(), config.max_grad_norm);
      nn::clip_grad_norm(value.net.grads(), config.max_grad_norm);
      opts.policy.step(policy.net.params(), policy.net.grads());
      opts.value.step(value.net.params(), value.net.grads());
      total.policy_loss += st.policy_loss;
      total.value_loss += st.value_loss;
      total.entropy += st.entropy;
      total.clip_fraction += st.clip_fraction;
      total.approx_kl += st.approx_kl;
      ++total.updates;
    }
  }
  const double k = static_cast<double>(total.updates);
  total.policy_loss /= k;
  total.value_loss /= k;
  total.entropy /= k;
  total.clip_fraction /= k;
  total.approx_kl /= k;
  return total;
}

PpoStats ppo_update(agent::PolicyNet& policy, agent::ValueNet& value,
                    const agent::Featurizer& features,
                    std::span<const Trajectory> batch,
                    std::span<const std::vector<double>> rewards,
                    const PpoConfig& config, PpoOptimizers& opts, Rng& rng) {
  const auto samples = build_samples(features, value, batch, rewards, config);
  return ppo_update(policy, value, samples, config, opts, rng);
}

// ---------------------------------------------------------------------------

std::string to_string(TrajectoryBaseline k) {
  switch (k) {
    case TrajectoryBaseline::Reinforce:
      return "reinforce";
    case TrajectoryBaseline::Rloo:
      return "rloo";
    case TrajectoryBaseline::GrpoStyle:
      return "grpo_style";
  }
  return "unknown";
}

TrajectoryBaseline trajectory_baseline_from_string(const std::string& s) {
  if (s == "reinforce") return TrajectoryBaseline::Reinforce;
  if (s == "rloo") return TrajectoryBaseline::Rloo;
  if (s == "grpo_style") return TrajectoryBaseline::GrpoStyle;
  throw ConfigError("unknown trajectory baseline '" + s + "'");
}

std::vector<double> trajectory_weights(std::span<const double> rewards,
                                       TrajectoryBaseline kind) {
  const std::size_t n = rewards.size();
  std::vector<double> w(rewards.begin(), rewards.end());
  if (kind == TrajectoryBaseline::Reinforce) return w;
  if (n < 2) throw UsageError(to_string(kind) + " needs groups of >= 2 rollouts");
  if (std::all_of(rewards.begin(), rewards.end(),
                  [&](double r) { return r == rewards[0]; })) {
    return std::vector<double>(n, 0.0);
  }
  const double sum = std::accumulate(rewards.begin(), rewards.end(), 0.0);
  const double mean = sum / static_cast<double>(n);
  if (kind == TrajectoryBaseline::Rloo) {
    for (std::size_t j = 0; j < n; ++j) {
      w[j] = rewards[j] - (sum - rewards[j]) / static_cast<double>(n - 1);
    }
    return w;
  }
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double std = std::sqrt(var / static_cast<double>(n));
  for (std::size_t j = 0; j < n; ++j) w[j] = (rewards[j] - mean) / (std + 1e-8);
  return w;
}

BaselineStats trajectory_baseline_update(agent::PolicyNet& policy,
                                         const agent::Featurizer& features,
                                         std::span<const Trajectory> batch,
                                         TrajectoryBaseline kind,
                                         nn::Optimizer& opt,
                                         double max_grad_norm) {
  std::map<int, std::vector<std::size_t>> groups;
  std::vector<int> group_order;
  std::size_t total_steps = 0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    auto [it, fresh] = groups.try_emplace(batch[k].task.task_id);
    if (fresh) group_order.push_back(batch[k].task.task_id);
    it->second.push_back(k);
    total_steps += batch[k].size();
  }
  std::vector<double> weight(batch.size(), 0.0);
  for (int id : group_order) {
    const auto& members = groups[id];
    std::vector<double> r;
    for (std::size_t k : members) r.push_back(batch[k].terminal_reward);
    const auto w = trajectory_weights(r, kind);
    for (std::size_t m = 0; m < members.size(); ++m) weight[members[m]] = w[m];
  }

  BaselineStats st;
  policy.net.zero_grad();
  if (total_steps == 0) return st;
  const double scale = 1.0 / static_cast<double>(total_steps);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto& traj = batch[k];
    st.mean_weight += weight[k] / static_cast<double>(batch.size());
    if (weight[k] == 0.0) continue;
    for (std::size_t t = 0; t < traj.size(); ++t) {
      const auto x = features(traj, t);
      const auto logits = policy.net.forward(x);
      auto lp = nn::softmax_logprob(logits, traj.steps[t].action);
      st.loss -= weight[k] * lp.value * scale;
      for (double& g : lp.nll_grad) g *= weight[k] * scale;
      policy.net.backward(lp.nll_grad, false);
    }
  }
  if (!std::isfinite(st.loss)) {
    throw NumericError("non-finite trajectory-baseline loss");
  }
  st.grad_norm = nn::clip_grad_norm(policy.net.grads(), max_grad_norm);
  opt.step(policy.net.params(), policy.net.grads());
  return st;
}

}  // namespace spa::rl
