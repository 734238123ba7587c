// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.
//
//   acceptance [--configs DIR] [--out DIR] [--only N,N,...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "credit_fixtures.hpp"
#include "spa/credit.hpp"
#include "spa/gradcheck.hpp"
#include "spa/harness.hpp"
#include "spa/rltrain.hpp"
#include "spa/theory.hpp"
#include "toy_env.hpp"

using namespace spa;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome gradient_suite() {
  const auto start = Clock::now();
  gradcheck::SuiteOptions o;
  o.configurations = 64;
  const auto results = gradcheck::run_suite(o);
  const double dt = seconds_since(start);
  bool ok = dt < 60.0;
  double worst = 0.0;
  std::set<std::string> families;
  for (const auto& r : results) {
    ok = ok && r.passed && r.configurations >= 64;
    worst = std::max(worst, r.max_rel_error);
    families.insert(r.name.substr(0, r.name.find('/')));
  }
  ok = ok && families.size() == 4;
  return {ok, "max rel err " + fmt("%.2e", worst) + ", " + fmt("%.1f", dt) + " s"};
}

Outcome gae_oracle() {
  Rng rng(2024);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int n = 1 + uniform_int(rng, 50);
    std::vector<double> r(n), v(n);
    for (double& x : r) x = 2 * uniform01(rng) - 1;
    for (double& x : v) x = 2 * uniform01(rng) - 1;
    const double boot = uniform01(rng);
    const double gamma = 0.5 + 0.5 * uniform01(rng);
    const double lam = uniform01(rng);
    const auto b = rl::compute_gae(r, v, boot, gamma, lam);
    for (int t = 0; t < n; ++t) {
      double a = 0.0;
      for (int k = 0; t + k < n; ++k) {
        const double next = t + k + 1 < n ? v[t + k + 1] : boot;
        a += std::pow(gamma * lam, k) * (r[t + k] + gamma * next - v[t + k]);
      }
      worst = std::max(worst, std::abs(a - b.advantages[t]));
    }
  }
  return {worst <= 1e-10, "max |diff| " + fmt("%.2e", worst)};
}

Outcome vanishing() {
  const auto det = rl::vanishing_advantage_report(20, 0.99, 0.95, 1.0, 1.0);
  double max_adv = 0.0;
  for (const auto& row : det.rows) max_adv = std::max(max_adv, std::abs(row.advantage));
  const auto rep = rl::vanishing_advantage_report(20, 0.99, 0.95, 0.5, 1.0);
  const double expect = std::pow(0.9405, 18) * 0.5;
  const double gap = std::abs(rep.rows.front().advantage - expect);
  return {max_adv == 0.0 && gap <= 1e-12,
          "deterministic max |A| " + fmt("%g", max_adv) + ", A_1 " +
              fmt("%.15f", rep.rows.front().advantage) + " gap " + fmt("%.1e", gap)};
}

Outcome telescoping() {
  auto env = env::make_environment("chaincraft");
  agent::Featurizer f(*env, 8);
  Rng rng(4);
  nn::Mlp net({f.width(), 32, 1}, nn::Activation::Tanh);
  net.init_glorot(rng);
  credit::ProgressEstimator est(f, credit::EstimatorMode::Potential, std::move(net));
  const agent::PolicyNet uniform{
      nn::Mlp({f.width(), f.action_count()}, nn::Activation::Tanh)};
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto t = explore::rollout(*env, f, uniform, env->task(i), i, 1.0);
    const auto p = est.predict(t);
    const double sum = std::accumulate(p.contributions.begin(), p.contributions.end(), 0.0);
    worst = std::max(worst, std::abs(sum - est.net().predict(f(t, t.size()))[0]));
  }
  return {worst <= 1e-12, "max |sum c - phi_n| " + fmt("%.2e", worst)};
}

Outcome invariance() {
  const auto rep = theory::policy_gradient_invariance(20, 5);
  return {rep.trials == 20 && rep.worst_diff <= 1e-10,
          "worst component diff " + fmt("%.2e", rep.worst_diff) +
              " (miscalibrated phi_n: " + fmt("%.2e", rep.worst_miscalibrated_diff) + ")"};
}

Outcome estimator_fidelity() {
  const auto start = Clock::now();
  auto env = env::make_environment("chaincraft");
  agent::Featurizer f(*env, 8);
  const int designated = 5;
  const auto train = fixtures::designated_action_dataset(*env, f, 2000, 0, designated);
  const auto held_out = fixtures::designated_action_dataset(*env, f, 500, 1000000, designated);
  Rng rng(6);
  credit::ProgressEstimator est(f, credit::EstimatorMode::Direct, {}, rng);
  credit::train_estimator(est, train, {});
  double on = 0, off = 0, n_on = 0, n_off = 0, err = 0, base = 0, mean = 0;
  for (const auto& t : train) mean += t.terminal_reward / train.size();
  for (const auto& t : held_out) {
    const auto p = est.predict(t);
    for (std::size_t k = 0; k < t.size(); ++k) {
      if (t.steps[k].action == designated) {
        on += p.contributions[k];
        ++n_on;
      } else {
        off += p.contributions[k];
        ++n_off;
      }
    }
    err += std::abs(p.predicted_completion - t.terminal_reward);
    base += std::abs(mean - t.terminal_reward);
  }
  const double improvement = 1.0 - err / base;
  const double dt = seconds_since(start);
  return {on / n_on > off / n_off && improvement >= 0.30 && dt < 300.0,
          "mean c designated " + fmt("%.4f", on / n_on) + " vs other " +
              fmt("%.4f", off / n_off) + ", |R_hat-R| improvement " +
              fmt("%.1f%%", 100 * improvement) + ", " + fmt("%.1f", dt) + " s"};
}

Outcome mean_conservation() {
  auto env = env::make_environment("chaincraft");
  agent::Featurizer f(*env, 2);
  const agent::PolicyNet uniform{
      nn::Mlp({f.width(), f.action_count()}, nn::Activation::Tanh)};
  Rng rng(7);
  int exact = 0;
  for (int i = 0; i < 1000; ++i) {
    auto t = explore::rollout(*env, f, uniform, env->task(i), 50000 + i, 1.0);
    t.steps.resize(1 + uniform_int(rng, static_cast<int>(t.size())));
    t.terminal_reward = uniform01(rng);
    const auto r = credit::baseline_redistribute(credit::StrategyKind::Mean, t, rng);
    exact += std::accumulate(r.begin(), r.end(), 0.0) == t.terminal_reward;
  }
  return {exact == 1000, std::to_string(exact) + "/1000 exact"};
}

Outcome mc_oracle() {
  toy::TwoStep env;
  agent::Featurizer f(env, 2);
  double worst = 0.0;
  for (int task_id = 0; task_id < 4; ++task_id) {
    Rng init(derive_seed(8, task_id));
    auto policy = agent::make_policy(f.width(), f.action_count(),
                                     {{8}, nn::Activation::Tanh}, init);
    for (double& w : policy.net.params()) w *= 3.0;
    const auto t = explore::rollout(env, f, policy, env.task(task_id), 1, 1.0);

    // Exact values by enumerating both steps.
    auto probs = [&](const Trajectory& prefix) {
      const auto logits = policy.net.predict(f(prefix, prefix.size()));
      std::vector<double> p;
      for (int a = 0; a < 3; ++a) p.push_back(std::exp(nn::softmax_logprob(logits, a).value));
      return p;
    };
    Trajectory root = t;
    root.steps.clear();
    const auto p1 = probs(root);
    std::vector<double> v1(3, 0.0);
    double v0 = 0.0;
    for (int a1 = 0; a1 < 3; ++a1) {
      Trajectory one = root;
      one.steps.push_back({a1, a1, true, 0.0});
      const auto p2 = probs(one);
      for (int a2 = 0; a2 < 3; ++a2) v1[a1] += p2[a2] * toy::TwoStep::reward(task_id, a1, a2);
      v0 += p1[a1] * v1[a1];
    }
    const double r1 = v1[t.steps[0].action] - v0;
    const double r2 = t.terminal_reward - v1[t.steps[0].action];
    Rng rng(task_id);
    const auto r = credit::mc_redistribute(env, f, policy, t, 10000, 1.0, rng);
    worst = std::max({worst, std::abs(r[0] - r1), std::abs(r[1] - r2)});
  }
  return {worst <= 0.02, "max |mc - exact| " + fmt("%.4f", worst)};
}

struct ArmResult {
  fs::path dir;
  harness::Dispersion success;
};

struct EndToEnd {
  bool ran = false;
  std::string error;
  std::map<std::string, ArmResult> arms;
  double seconds = 0.0;
  harness::ComparisonReport report;
};

const char* kArms[] = {"spa", "ppo", "mc", "mean", "random"};

EndToEnd run_arms(const fs::path& configs, const fs::path& out) {
  EndToEnd e;
  const auto start = Clock::now();
  try {
    std::vector<fs::path> dirs;
    for (const char* arm : kArms) {
      auto cfg = harness::load_config((configs / (std::string("chaincraft_") + arm + ".json")).string());
      cfg.output_dir = (out / arm).string();
      fs::remove_all(cfg.output_dir);
      const auto t0 = Clock::now();
      harness::run_pipeline(cfg);
      std::printf("  arm %-6s %6.1f s\n", arm, seconds_since(t0));
      std::fflush(stdout);
      const auto run = harness::load_run(cfg.output_dir);
      std::vector<double> s;
      for (const auto& m : run.test_metrics) s.push_back(m.success_rate);
      e.arms[arm] = {cfg.output_dir, harness::dispersion(s)};
      dirs.push_back(cfg.output_dir);
    }
    e.seconds = seconds_since(start);
    e.report = harness::compare_runs(dirs);
    harness::write_report(e.report, out / "comparison");
    e.ran = true;
  } catch (const std::exception& ex) {
    e.error = ex.what();
  }
  return e;
}

Outcome directional(const EndToEnd& e) {
  if (!e.ran) return {false, e.error};
  const auto& a = e.arms;
  const double spa = a.at("spa").success.median;
  bool ok = spa > a.at("ppo").success.median;
  for (const char* other : {"mc", "mean", "random"}) ok = ok && spa >= a.at(other).success.median;
  ok = ok && a.at("random").success.median <= a.at("ppo").success.max;
  ok = ok && e.seconds < 1800.0;
  std::string d;
  for (const char* arm : kArms) {
    const auto& s = a.at(arm).success;
    d += std::string(arm) + " " + fmt("%.3f", s.median) + " [" + fmt("%.3f", s.min) + "," +
         fmt("%.3f", s.max) + "]  ";
  }
  return {ok, d + fmt("%.0f s", e.seconds)};
}

Outcome long_horizon(const EndToEnd& e) {
  if (!e.ran) return {false, e.error};
  for (const auto& s : e.report.intervals) {
    if (s.baseline != "ppo") continue;
    for (std::size_t b = s.bins.size(); b-- > 0;) {
      if (s.reference_successes[b] == 0.0 && s.baseline_successes[b] == 0.0) continue;
      const double rel = s.relative_improvement[b];
      return {rel >= 0.0, "bin " + s.bins[b] + ": spa " + fmt("%.1f", s.reference_successes[b]) +
                              " vs ppo " + fmt("%.1f", s.baseline_successes[b]) +
                              ", relative " + (std::isinf(rel) ? "inf" : fmt("%+.3f", rel))};
    }
    return {false, "no populated bin"};
  }
  return {false, "no spa vs ppo series"};
}

Outcome determinism(const EndToEnd& e, const fs::path& configs, const fs::path& out) {
  if (!e.ran) return {false, e.error};
  try {
    auto cfg = harness::load_config((configs / "chaincraft_spa.json").string());
    cfg.output_dir = (out / "spa_rerun").string();
    fs::remove_all(cfg.output_dir);
    harness::run_pipeline(cfg);
    int same = 0;
    for (const char* f : {"metrics.jsonl", "metrics.csv"}) {
      same += slurp(out / "spa" / f) == slurp(fs::path(cfg.output_dir) / f);
    }
    return {same == 2, std::to_string(same) + "/2 metrics files byte-identical"};
  } catch (const std::exception& ex) {
    return {false, ex.what()};
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string configs = "configs";
  std::string out = "acceptance_runs";
  std::vector<int> only;
  app.add_option("--configs", configs, "directory with the chaincraft_<arm>.json configs");
  app.add_option("--out", out, "scratch directory for end-to-end runs");
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  auto want = [&](int n) {
    return only.empty() || std::find(only.begin(), only.end(), n) != only.end();
  };
  int failures = 0;
  auto report = [&](int n, const char* name, const Outcome& o) {
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", n, name, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  };
  auto guarded = [](const std::function<Outcome()>& fn) {
    try {
      return fn();
    } catch (const std::exception& e) {
      return Outcome{false, std::string("exception: ") + e.what()};
    }
  };

  if (want(1)) report(1, "gradient suite", guarded(gradient_suite));
  if (want(2)) report(2, "GAE oracle", guarded(gae_oracle));
  if (want(3)) report(3, "vanishing advantage", guarded(vanishing));
  if (want(4)) report(4, "telescoping", guarded(telescoping));
  if (want(5)) report(5, "policy-gradient invariance", guarded(invariance));
  if (want(6)) report(6, "estimator fidelity", guarded(estimator_fidelity));
  if (want(7)) report(7, "mean conservation", guarded(mean_conservation));
  if (want(8)) report(8, "MC oracle", guarded(mc_oracle));
  if (want(9) || want(10) || want(11)) {
    const auto e = run_arms(configs, out);
    if (want(9)) report(9, "directional end-to-end", directional(e));
    if (want(10)) report(10, "long-horizon trend", long_horizon(e));
    if (want(11)) report(11, "determinism", determinism(e, configs, out));
  }
  return failures == 0 ? 0 : 1;
}
