#include "spa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "spa/agent.hpp"
#include "spa/credit.hpp"
#include "spa/explorer.hpp"

namespace spa::gradcheck {

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

namespace {

std::vector<std::size_t> pick_parameters(const nn::Mlp& net, int weights,
                                         Rng& rng) {
  std::vector<std::size_t> idx;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    for (int i = 0; i < net.dims()[l + 1]; ++i) {
      idx.push_back(net.bias_offset(l) + i);
    }
  }
  const std::size_t total = net.params().size();
  for (int k = 0; k < weights; ++k) {
    idx.push_back(static_cast<std::size_t>(uniform01(rng) * total));
  }
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

// Returns max relative error over the selected parameters of `net`, where
// `loss` evaluates the scalar objective and `analytic` fills net.grads().
double check(nn::Mlp& net, const std::function<double()>& loss,
             const std::function<void()>& analytic,
             const std::vector<std::size_t>& params, double h) {
  net.zero_grad();
  analytic();
  const std::vector<double> grad(net.grads().begin(), net.grads().end());
  double worst = 0.0;
  for (std::size_t i : params) {
    double& p = net.params()[i];
    const double saved = p;
    p = saved + h;
    const double up = loss();
    p = saved - h;
    const double down = loss();
    p = saved;
    worst = std::max(worst, relative_error(grad[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

bool near_kink(const nn::Mlp& net) {
  if (net.activation() != nn::Activation::Relu) return false;
  for (std::size_t l = 0; l + 1 < net.layer_count(); ++l) {
    for (double z : net.preactivation(l)) {
      if (std::abs(z) <= 1e-3) return true;
    }
  }
  return false;
}

}  // namespace

std::vector<CheckResult> run_suite(const SuiteOptions& o) {
  const auto env = env::make_environment("chaincraft");
  const agent::Featurizer features(*env, 2);
  const int F = features.width();
  const int A = features.action_count();
  std::vector<CheckResult> results;

  // Single-input networks: loss = c . net(x) with random c.
  const struct {
    const char* name;
    std::vector<int> dims;
  } shapes[] = {{"policy", {F, 32, A}}, {"value", {F, 64, 64, 1}}};
  for (const auto& shape : shapes) {
    for (auto act : {nn::Activation::Tanh, nn::Activation::Relu}) {
      CheckResult r;
      r.name = std::string(shape.name) + "/" + nn::to_string(act);
      Rng rng(derive_seed(o.seed, results.size()));
      while (r.configurations < o.configurations) {
        nn::Mlp net(shape.dims, act);
        net.init_glorot(rng);
        for (double& p : net.params()) p += 0.1 * (uniform01(rng) - 0.5);
        std::vector<double> x(F), c(shape.dims.back());
        for (double& v : x) v = uniform01(rng);
        for (double& v : c) v = 2.0 * uniform01(rng) - 1.0;
        net.forward(x);
        if (near_kink(net)) continue;
        const auto idx = pick_parameters(net, o.weights_per_configuration, rng);
        auto loss = [&] {
          const auto y = net.predict(x);
          return std::inner_product(y.begin(), y.end(), c.begin(), 0.0);
        };
        auto analytic = [&] {
          net.forward(x);
          net.backward(c);
        };
        r.max_rel_error =
            std::max(r.max_rel_error, check(net, loss, analytic, idx, o.step));
        r.parameters_checked += static_cast<long>(idx.size());
        ++r.configurations;
      }
      r.passed = r.max_rel_error < o.tolerance;
      results.push_back(r);
    }
  }

  // Estimators: loss = (sum_t c_t - R)^2 over a random-policy trajectory.
  Rng traj_rng(derive_seed(o.seed, 0xE57ULL));
  agent::PolicyNet random_policy{
      nn::Mlp({F, A}, nn::Activation::Tanh)};  // zero weights: uniform
  for (auto mode : {credit::EstimatorMode::Direct,
                    credit::EstimatorMode::Potential}) {
    for (auto act : {nn::Activation::Tanh, nn::Activation::Relu}) {
      CheckResult r;
      r.name = "estimator-" + credit::to_string(mode) + "/" + nn::to_string(act);
      Rng rng(derive_seed(o.seed, 100 + results.size()));
      while (r.configurations < o.configurations) {
        const int task_id = uniform_int(rng, env->task_count());
        auto traj = explore::rollout(*env, features, random_policy,
                                     env->task(task_id), rng(), 1.0);
        if (traj.size() > 8) traj.steps.resize(8);
        const double target = uniform01(rng);
        const int width =
            features.width() + (mode == credit::EstimatorMode::Direct
                                     ? features.action_count()
                                     : 0);
        nn::Mlp net({width, 32, 32, 1}, act);
        net.init_glorot(rng);
        credit::ProgressEstimator est(features, mode, std::move(net));
        // Reject draws where any step evaluation sits near a relu kink.
        bool kink = false;
        std::vector<double> in(est.input_width());
        for (std::size_t t = 0; t < traj.size() && !kink; ++t) {
          const int f = features.width();
          if (mode == credit::EstimatorMode::Direct) {
            features.encode(traj, t, std::span<double>(in).subspan(0, f));
            std::fill(in.begin() + f, in.end(), 0.0);
            in[f + traj.steps[t].action] = 1.0;
          } else {
            features.encode(traj, t + 1, in);
          }
          est.net().forward(in);
          kink = near_kink(est.net());
        }
        if (kink) continue;
        const auto idx =
            pick_parameters(est.net(), o.weights_per_configuration, rng);
        auto loss = [&] {
          const double d = est.predict(traj).predicted_completion - target;
          return d * d;
        };
        auto analytic = [&] { est.accumulate_gradient(traj, target, 1.0); };
        r.max_rel_error = std::max(
            r.max_rel_error, check(est.net(), loss, analytic, idx, o.step));
        r.parameters_checked += static_cast<long>(idx.size());
        ++r.configurations;
      }
      r.passed = r.max_rel_error < o.tolerance;
      results.push_back(r);
    }
  }
  return results;
}

}  // namespace spa::gradcheck
