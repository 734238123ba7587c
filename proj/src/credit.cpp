#include "spa/credit.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace spa::credit {

std::string to_string(EstimatorMode m) {
  return m == EstimatorMode::Direct ? "direct" : "potential";
}

EstimatorMode estimator_mode_from_string(const std::string& s) {
  if (s == "direct") return EstimatorMode::Direct;
  if (s == "potential") return EstimatorMode::Potential;
  throw ConfigError("unknown estimator mode '" + s + "'");
}

namespace {
int width_for(const agent::Featurizer& f, EstimatorMode mode) {
  return mode == EstimatorMode::Direct ? f.width() + f.action_count()
                                       : f.width();
}
}  // namespace

ProgressEstimator::ProgressEstimator(const agent::Featurizer& features,
                                     EstimatorMode mode,
                                     const agent::NetShape& shape, Rng& rng)
    : features_(&features), mode_(mode) {
  std::vector<int> dims{width_for(features, mode)};
  dims.insert(dims.end(), shape.hidden.begin(), shape.hidden.end());
  dims.push_back(1);
  net_ = nn::Mlp(dims, shape.activation);
  net_.init_glorot(rng);
  // Zero output layer: every trajectory starts at R_hat = 0.
  const std::size_t last = net_.layer_count() - 1;
  auto p = net_.params();
  std::fill(p.begin() + net_.weight_offset(last), p.end(), 0.0);
}

ProgressEstimator::ProgressEstimator(const agent::Featurizer& features,
                                     EstimatorMode mode, nn::Mlp net)
    : features_(&features), mode_(mode), net_(std::move(net)) {
  if (net_.input_size() != width_for(features, mode) ||
      net_.output_size() != 1) {
    throw ConfigError("estimator network shape does not match features");
  }
}

int ProgressEstimator::input_width() const {
  return width_for(*features_, mode_);
}

// Direct mode: features before step t plus the action taken at t.
// Potential mode: features of the history including step t.
void ProgressEstimator::step_input(const Trajectory& traj, std::size_t t,
                                   std::span<double> out) const {
  const int f = features_->width();
  if (mode_ == EstimatorMode::Direct) {
    features_->encode(traj, t, out.subspan(0, f));
    std::fill(out.begin() + f, out.end(), 0.0);
    out[f + traj.steps[t].action] = 1.0;
  } else {
    features_->encode(traj, t + 1, out);
  }
}

std::vector<double> ProgressEstimator::potentials(
    const Trajectory& traj) const {
  if (mode_ != EstimatorMode::Potential) {
    throw UsageError("potentials() requires potential mode");
  }
  std::vector<double> phi(traj.size() + 1, 0.0);
  std::vector<double> x(input_width());
  for (std::size_t t = 0; t < traj.size(); ++t) {
    step_input(traj, t, x);
    phi[t + 1] = net_.predict(x)[0];
  }
  return phi;
}

ContributionProfile ProgressEstimator::predict(const Trajectory& traj) const {
  ContributionProfile p;
  p.contributions.resize(traj.size());
  if (mode_ == EstimatorMode::Direct) {
    std::vector<double> x(input_width());
    for (std::size_t t = 0; t < traj.size(); ++t) {
      step_input(traj, t, x);
      p.contributions[t] = net_.predict(x)[0];
    }
  } else {
    const auto phi = potentials(traj);
    for (std::size_t t = 0; t < traj.size(); ++t) {
      p.contributions[t] = phi[t + 1] - phi[t];
    }
  }
  p.predicted_completion =
      std::accumulate(p.contributions.begin(), p.contributions.end(), 0.0);
  return p;
}

double ProgressEstimator::accumulate_gradient(const Trajectory& traj,
                                              double target, double scale) {
  const double r_hat = predict(traj).predicted_completion;
  const double d_rhat = scale * nn::mse_loss(r_hat, target).grad;
  const std::size_t n = traj.size();
  // Coefficient of each network evaluation in R_hat.
  std::vector<double> coef(n, 1.0);
  if (mode_ == EstimatorMode::Potential) {
    // phi_t enters c_t with +1 and c_{t+1} with -1; only phi_n survives.
    for (std::size_t t = 0; t + 1 < n; ++t) coef[t] = 0.0;
  }
  std::vector<double> x(input_width());
  double upstream[1];
  for (std::size_t t = 0; t < n; ++t) {
    if (coef[t] == 0.0) continue;
    step_input(traj, t, x);
    net_.forward(x);
    upstream[0] = d_rhat * coef[t];
    net_.backward(upstream, false);
  }
  return r_hat;
}

double estimator_loss(const ProgressEstimator& est,
                      std::span<const Trajectory> data) {
  if (data.empty()) throw UsageError("estimator_loss of empty dataset");
  double total = 0.0;
  for (const auto& t : data) {
    total += nn::mse_loss(est.predict(t).predicted_completion,
                          t.terminal_reward)
                 .loss;
  }
  return total / static_cast<double>(data.size());
}

EstimatorTrainResult train_estimator(ProgressEstimator& est,
                                     std::span<const Trajectory> data,
                                     const EstimatorTrainConfig& config) {
  if (data.empty()) throw UsageError("estimator training needs data");
  const std::size_t n = data.size();
  const std::size_t batch = config.batch_size > 0
                                ? static_cast<std::size_t>(config.batch_size)
                                : n;
  nn::OptimizerConfig opt_cfg = config.optimizer;
  if (opt_cfg.schedule == nn::Schedule::Cosine && opt_cfg.total_steps <= 0) {
    opt_cfg.total_steps =
        static_cast<long>((n + batch - 1) / batch) * config.epochs;
  }
  nn::Optimizer opt(opt_cfg, est.net().params().size());
  Rng rng(config.shuffle_seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  EstimatorTrainResult result;
  result.loss_curve.push_back(estimator_loss(est, data));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) {
      std::swap(order[i - 1], order[uniform_int(rng, static_cast<int>(i))]);
    }
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      const double scale = 1.0 / static_cast<double>(end - start);
      est.net().zero_grad();
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const auto& t = data[order[i]];
        const double r_hat =
            est.accumulate_gradient(t, t.terminal_reward, scale);
        batch_loss += nn::mse_loss(r_hat, t.terminal_reward).loss * scale;
      }
      if (!std::isfinite(batch_loss)) {
        std::ostringstream msg;
        msg << "non-finite estimator loss in epoch " << epoch
            << ", batch starting at " << start;
        throw NumericError(msg.str());
      }
      result.batch_losses.push_back(batch_loss);
      opt.step(est.net().params(), est.net().grads());
    }
    result.loss_curve.push_back(estimator_loss(est, data));
  }
  return result;
}

EstimatorTrainResult train_estimator(ProgressEstimator& est,
                                     const explore::ExploreDataset& ds,
                                     const EstimatorTrainConfig& config) {
  return train_estimator(est, std::span<const Trajectory>(ds.trajectories),
                         config);
}

void save_estimator(const ProgressEstimator& est, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "mode " << to_string(est.mode()) << "\n";
  nn::save(est.net(), out);
}

ProgressEstimator load_estimator(const agent::Featurizer& features,
                                 const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  std::string tag, mode;
  if (!(in >> tag >> mode) || tag != "mode") {
    throw ConfigError(path + ": missing estimator mode tag");
  }
  return ProgressEstimator(features, estimator_mode_from_string(mode),
                           nn::load(in));
}

// ---------------------------------------------------------------------------

std::vector<double> fuse_rewards(const ContributionProfile& profile,
                                 const std::vector<bool>& grounded,
                                 double alpha, double beta, bool add_terminal,
                                 double terminal_reward) {
  if (profile.contributions.size() != grounded.size()) {
    throw UsageError("contribution and grounding lengths differ");
  }
  std::vector<double> r(grounded.size());
  for (std::size_t t = 0; t < r.size(); ++t) {
    r[t] = alpha * profile.contributions[t] + beta * (grounded[t] ? 1.0 : 0.0);
  }
  if (add_terminal && !r.empty()) r.back() += terminal_reward;
  return r;
}

std::vector<double> mc_values(const env::Environment& env,
                              const agent::Featurizer& features,
                              const agent::PolicyNet& policy,
                              const Trajectory& traj, int rollouts,
                              double temperature, Rng& rng) {
  if (rollouts < 1) throw UsageError("mc needs at least one rollout");
  const std::size_t n = traj.size();
  std::vector<double> values(n + 1, 0.0);
  auto [state, obs] = env.reset(traj.task, traj.seed);
  Trajectory prefix;
  prefix.task = traj.task;
  prefix.seed = traj.seed;
  prefix.initial_observation = obs;
  agent::FeatureVector x(features.width());
  for (std::size_t t = 0; t <= n; ++t) {
    if (state.done) {
      values[t] = traj.terminal_reward;
    } else {
      double total = 0.0;
      for (int r = 0; r < rollouts; ++r) {
        Trajectory cont = prefix;
        env::EnvState s = state;
        double reward = 0.0;
        while (!s.done) {
          features.encode(cont, cont.size(), x);
          const auto pick = agent::sample_action(policy, x, temperature, rng);
          auto [next, result] = env.step(cont.task, s, pick.action);
          cont.steps.push_back({pick.action, result.observation_id,
                                result.grounded, pick.logprob});
          reward = result.reward();
          s = std::move(next);
        }
        total += reward;
      }
      values[t] = total / rollouts;
    }
    if (t == n) break;
    if (state.done) throw UsageError("trajectory continues past episode end");
    auto [next, result] = env.step(traj.task, state, traj.steps[t].action);
    prefix.steps.push_back({traj.steps[t].action, result.observation_id,
                            result.grounded, traj.steps[t].logprob});
    state = std::move(next);
  }
  return values;
}

std::vector<double> mc_redistribute(const env::Environment& env,
                                    const agent::Featurizer& features,
                                    const agent::PolicyNet& policy,
                                    const Trajectory& traj, int rollouts,
                                    double temperature, Rng& rng) {
  const auto v = mc_values(env, features, policy, traj, rollouts, temperature,
                           rng);
  std::vector<double> r(traj.size());
  for (std::size_t t = 0; t < r.size(); ++t) r[t] = v[t + 1] - v[t];
  return r;
}

std::string to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::Spa:
      return "spa";
    case StrategyKind::Mc:
      return "mc";
    case StrategyKind::Random:
      return "random";
    case StrategyKind::Mean:
      return "mean";
    case StrategyKind::None:
      return "none";
  }
  return "unknown";
}

StrategyKind strategy_from_string(const std::string& s) {
  if (s == "spa") return StrategyKind::Spa;
  if (s == "mc") return StrategyKind::Mc;
  if (s == "random") return StrategyKind::Random;
  if (s == "mean") return StrategyKind::Mean;
  if (s == "none") return StrategyKind::None;
  throw ConfigError("unknown redistribution strategy '" + s + "'");
}

std::vector<double> baseline_redistribute(StrategyKind kind,
                                          const Trajectory& traj, Rng& rng) {
  const std::size_t n = traj.size();
  std::vector<double> r(n, 0.0);
  if (n == 0) return r;
  switch (kind) {
    case StrategyKind::Random:
      for (double& v : r) v = uniform01(rng);
      break;
    case StrategyKind::Mean: {
      const double share = traj.terminal_reward / static_cast<double>(n);
      double partial = 0.0;
      for (std::size_t t = 0; t + 1 < n; ++t) {
        r[t] = share;
        partial += share;
      }
      // partial >= R / 2 for n >= 2, so the subtraction is exact and the
      // left-to-right sum lands on R.
      r[n - 1] = traj.terminal_reward - partial;
      break;
    }
    case StrategyKind::None:
      r[n - 1] = traj.terminal_reward;
      break;
    default:
      throw UsageError("baseline_redistribute handles random, mean and none");
  }
  return r;
}

std::vector<double> redistribute(const RedistributionStrategy& strategy,
                                 const RedistributionContext& ctx,
                                 const Trajectory& traj, Rng& rng) {
  switch (strategy.kind) {
    case StrategyKind::Spa: {
      if (ctx.estimator == nullptr) {
        throw UsageError("spa redistribution needs an estimator");
      }
      return fuse_rewards(ctx.estimator->predict(traj), traj.grounded_bits(),
                          strategy.alpha, strategy.beta,
                          strategy.add_terminal, traj.terminal_reward);
    }
    case StrategyKind::Mc:
      if (!ctx.env || !ctx.features || !ctx.policy) {
        throw UsageError("mc redistribution needs env, features and policy");
      }
      return mc_redistribute(*ctx.env, *ctx.features, *ctx.policy, traj,
                             strategy.mc_rollouts, strategy.mc_temperature,
                             rng);
    default:
      return baseline_redistribute(strategy.kind, traj, rng);
  }
}

}  // namespace spa::credit
