#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "spa/gradcheck.hpp"
#include "spa/harness.hpp"
#include "spa/rltrain.hpp"
#include "spa/theory.hpp"

namespace {

using nlohmann::json;
using namespace spa;

enum Exit { kOk = 0, kConfig = 2, kStage = 3, kInvariant = 4 };

void emit(const json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream f(out);
  if (!f) throw ConfigError("cannot write " + out);
  f << j.dump(2) << "\n";
}

int cmd_run(const std::string& config, const std::optional<std::uint64_t>& seed,
            const std::string& stage, const std::string& until, bool verbose) {
  const harness::RunConfig cfg = harness::load_config(config);
  harness::RunOptions opts;
  opts.seed = seed;
  if (!stage.empty()) opts.from_stage = harness::stage_from_string(stage);
  if (!until.empty()) opts.until_stage = harness::stage_from_string(until);
  opts.quiet = !verbose;
  const auto dir = harness::run_pipeline(cfg, opts);
  std::cout << dir.string() << "\n";
  return kOk;
}

int cmd_eval(const std::string& config, const std::string& checkpoint,
             const std::string& split, std::uint64_t seed, int seeds_per_task,
             const std::string& out) {
  const harness::RunConfig cfg = harness::load_config(config);
  const auto env = env::make_environment(cfg.env, cfg.env_options);
  const agent::Featurizer features(*env, cfg.history_k);
  agent::PolicyNet policy{nn::load_file(checkpoint)};
  if (policy.net.dims().front() != features.width() ||
      policy.net.dims().back() != features.action_count()) {
    throw ConfigError("checkpoint does not match the config's feature layout");
  }
  if (split != "train" && split != "test") {
    throw ConfigError("split must be train or test");
  }
  const auto tasks = harness::make_tasks(
      *env, split == "train" ? cfg.train_tasks : cfg.test_tasks);
  std::vector<std::uint64_t> seeds;
  for (int j = 0; j < seeds_per_task; ++j) seeds.push_back(derive_seed(seed, j));
  const harness::MetricsRecord m =
      harness::evaluate(*env, features, policy, tasks, seeds);
  json j = harness::to_json(m);
  j["split"] = split;
  j["checkpoint"] = checkpoint;
  emit(j, out);
  return kOk;
}

int cmd_compare(const std::vector<std::string>& dirs, const std::string& out) {
  std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
  const harness::ComparisonReport r = harness::compare_runs(paths);
  harness::write_report(r, out);
  std::cout << harness::to_markdown(r);
  return kOk;
}

int cmd_gradcheck(int configurations, std::uint64_t seed,
                  const std::string& out) {
  gradcheck::SuiteOptions opts;
  opts.configurations = configurations;
  opts.seed = seed;
  const auto results = gradcheck::run_suite(opts);
  json j = json::array();
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-28s %s  configs=%d params=%ld max_rel_err=%.3e\n",
                r.name.c_str(), r.passed ? "ok  " : "FAIL", r.configurations,
                r.parameters_checked, r.max_rel_error);
    j.push_back({{"name", r.name},
                 {"configurations", r.configurations},
                 {"parameters_checked", r.parameters_checked},
                 {"max_rel_error", r.max_rel_error},
                 {"passed", r.passed}});
    ok = ok && r.passed;
  }
  if (!out.empty()) emit(j, out);
  return ok ? kOk : kInvariant;
}

int cmd_theory(int n, double gamma, double lam, double expected,
               double realized, int trials, std::uint64_t seed,
               const std::string& out) {
  const rl::VanishingReport v =
      rl::vanishing_advantage_report(n, gamma, lam, expected, realized);
  const rl::VanishingReport calibrated =
      rl::vanishing_advantage_report(n, gamma, lam, realized, realized);
  const theory::InvarianceReport inv =
      theory::policy_gradient_invariance(trials, seed);

  std::printf("vanishing advantage: n=%d gamma=%g lambda=%g E[r]=%g r=%g\n",
              n, gamma, lam, expected, realized);
  std::printf("%4s %14s %14s %14s %14s\n", "t", "V(s_t)", "delta_t", "A_t",
              "closed form");
  for (const auto& row : v.rows) {
    std::printf("%4d %14.6e %14.6e %14.6e %14.6e\n", row.t, row.value,
                row.delta, row.advantage, row.closed_form);
  }
  std::printf("max |intermediate delta| = %.3e, max closed-form gap = %.3e\n",
              v.max_intermediate_delta, v.max_closed_form_gap);
  double calibrated_max = 0.0;
  for (const auto& row : calibrated.rows) {
    calibrated_max = std::max(calibrated_max, std::abs(row.advantage));
  }
  std::printf("deterministic reward: max |A_t| = %.3e\n", calibrated_max);
  std::printf("policy-gradient invariance: %d trials, worst diff %.3e "
              "(miscalibrated potential: %.3e)\n",
              inv.trials, inv.worst_diff, inv.worst_miscalibrated_diff);

  json rows = json::array();
  for (const auto& row : v.rows) {
    rows.push_back({{"t", row.t},
                    {"value", row.value},
                    {"delta", row.delta},
                    {"advantage", row.advantage},
                    {"closed_form", row.closed_form}});
  }
  const bool ok = v.verified && calibrated.verified && calibrated_max == 0.0 &&
                  inv.worst_diff <= 1e-10;
  if (!out.empty()) {
    emit({{"vanishing",
           {{"n", n},
            {"gamma", gamma},
            {"lambda", lam},
            {"expected_reward", expected},
            {"realized_reward", realized},
            {"rows", rows},
            {"max_intermediate_delta", v.max_intermediate_delta},
            {"max_closed_form_gap", v.max_closed_form_gap},
            {"deterministic_max_advantage", calibrated_max}}},
          {"invariance",
           {{"trials", inv.trials},
            {"worst_diff", inv.worst_diff},
            {"worst_miscalibrated_diff", inv.worst_miscalibrated_diff},
            {"per_trial_diff", inv.per_trial_diff}}},
          {"verified", ok}},
         out);
  }
  return ok ? kOk : kInvariant;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stepwise progress attribution experiments"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run the training pipeline");
  std::string config, stage, until;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
  run->add_option("config", config, "run config (JSON)")->required();
  run->add_option("--seed", seed, "only run this seed");
  run->add_option("--stage", stage,
                  "recompute from this stage (bc, explore, estimator, rl, eval)");
  run->add_option("--until", until, "stop after this stage");
  run->add_flag("-v,--verbose", verbose, "progress on stderr");

  auto* ev = app.add_subcommand("eval", "evaluate a policy checkpoint");
  std::string checkpoint, split = "test", out;
  std::uint64_t eval_seed = 0;
  int seeds_per_task = 1;
  ev->add_option("config", config, "run config naming env and split")
      ->required();
  ev->add_option("--checkpoint", checkpoint, "policy .mlp file")->required();
  ev->add_option("--split", split, "train or test");
  ev->add_option("--seed", eval_seed, "episode seed base");
  ev->add_option("--seeds-per-task", seeds_per_task);
  ev->add_option("-o,--out", out, "write metrics JSON here");

  auto* cmp = app.add_subcommand("compare", "compare run directories");
  std::vector<std::string> dirs;
  std::string report = "comparison";
  cmp->add_option("dirs", dirs, "run directories")->required();
  cmp->add_option("-o,--out", report,
                  "output prefix (.json, .md, _intervals.csv)");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  int configurations = 64;
  std::uint64_t gc_seed = 1;
  gc->add_option("--configurations", configurations);
  gc->add_option("--seed", gc_seed);
  gc->add_option("-o,--out", out);

  auto* th = app.add_subcommand("theory", "vanishing-advantage and invariance reports");
  int n = 20, trials = 20;
  double gamma = 0.99, lam = 0.95, expected = 0.5, realized = 1.0;
  std::uint64_t th_seed = 7;
  th->add_option("-n", n, "episode length");
  th->add_option("--gamma", gamma);
  th->add_option("--lambda", lam);
  th->add_option("--expected", expected, "E[r_n] known to the critic");
  th->add_option("--realized", realized, "observed r_n");
  th->add_option("--trials", trials);
  th->add_option("--seed", th_seed);
  th->add_option("-o,--out", out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*run) return cmd_run(config, seed, stage, until, verbose);
    if (*ev) return cmd_eval(config, checkpoint, split, eval_seed,
                             seeds_per_task, out);
    if (*cmp) return cmd_compare(dirs, report);
    if (*gc) return cmd_gradcheck(configurations, gc_seed, out);
    if (*th) return cmd_theory(n, gamma, lam, expected, realized, trials,
                               th_seed, out);
  } catch (const StageFailure& e) {
    std::cerr << "stage failure: " << e.what() << "\n";
    return kStage;
  } catch (const NumericError& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return kInvariant;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kStage;
  }
  return kOk;
}
