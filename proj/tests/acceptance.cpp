// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Criterion 1 trains the default configuration and dominates the runtime.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dialcot/commands.hpp"
#include "dialcot/config.hpp"
#include "dialcot/dialogue.hpp"
#include "dialcot/ppo.hpp"
#include "dialcot/report.hpp"
#include "dialcot/synthetic.hpp"
#include "dialcot/trainer.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace dialcot;
using namespace dialcot::testing;

namespace {

// Pinned tolerances.
constexpr double kTargetAccuracy = 0.95;
constexpr double kBaselineTolerance = 0.02;
constexpr int kBaselineEpisodes = 5000;
constexpr double kGreedyCeiling = 0.5;
constexpr double kRuntimeBudgetSeconds = 300.0;
constexpr int kGradientConfigs = 100;
constexpr double kGradientTolerance = 1e-4;
constexpr double kGaeArbitraryTolerance = 1e-12;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << x;
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dialcot_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

int cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"dialcot"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

double baseline_accuracy(SyntheticConfig config, int n_steps, bool random, std::uint64_t seed) {
  config.n_steps_min = config.n_steps_max = n_steps;
  Rng rng(seed);
  int hits = 0;
  for (int i = 0; i < kBaselineEpisodes; ++i) {
    const auto index = static_cast<std::uint64_t>(i);
    const Problem p = synthetic_problem(config, kDatasetStream, index).problem;
    RandomSelector uniform(rng);
    GreedySelector greedy;
    Selector& s = random ? static_cast<Selector&>(uniform) : greedy;
    hits += run_synthetic_episode(p, s, config, seed ^ index).final_correct ? 1 : 0;
  }
  return hits / static_cast<double>(kBaselineEpisodes);
}

Outcome learning() {
  const fs::path dir = scratch("learning");
  const RunConfig config = load_config("", {"out=" + nlohmann::json(dir.string()).dump()});
  std::ostringstream log;
  const auto start = std::chrono::steady_clock::now();
  const TrainResult trained = cmd_train_ppo(config, log);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  SyntheticEnvironment env(config.synthetic);
  const double accuracy = evaluate_policy(env, trained.net, config.resolved_workers());
  const double random2 = baseline_accuracy(config.synthetic, 2, true, 101);
  const double random3 = baseline_accuracy(config.synthetic, 3, true, 102);
  const double greedy2 = baseline_accuracy(config.synthetic, 2, false, 103);
  const double greedy3 = baseline_accuracy(config.synthetic, 3, false, 104);

  const bool learned = accuracy >= kTargetAccuracy && env.validation_size() == 500;
  const bool random_ok =
      std::abs(random2 - 1.0 / 9) <= kBaselineTolerance && std::abs(random3 - 1.0 / 27) <= kBaselineTolerance;
  const bool greedy_ok = greedy2 < kGreedyCeiling && greedy3 < kGreedyCeiling;
  const bool fast = seconds <= kRuntimeBudgetSeconds;
  return {learned && random_ok && greedy_ok && fast,
          "held-out accuracy " + fmt(accuracy) + " on " + std::to_string(env.validation_size()) + " after " +
              std::to_string(trained.updates) + " updates; random n=2 " + fmt(random2) + " (1/9), n=3 " +
              fmt(random3) + " (1/27); greedy n=2 " + fmt(greedy2) + ", n=3 " + fmt(greedy3) + "; training " +
              fmt(seconds, 3) + " s on " + std::to_string(std::thread::hardware_concurrency()) + " core(s)"};
}

Outcome gradient() {
  Rng rng(2);
  double worst = 0.0;
  int binding = 0;
  for (int i = 0; i < kGradientConfigs; ++i) {
    const GradientCheck c = check_ppo_gradient(rng, i % 2 == 0);
    worst = std::max(worst, c.max_rel_error);
    if (c.clip_fraction > 0.0) ++binding;
  }
  return {worst < kGradientTolerance && binding >= kGradientConfigs / 2,
          "max relative error " + fmt(worst, 3) + " over " + std::to_string(kGradientConfigs) + " configurations, " +
              std::to_string(binding) + " with the clip binding"};
}

Outcome clip_examples() {
  const double a = clipped_policy_term(1.0, 2.0, 0.2);
  const double b = clipped_policy_term(2.0, 1.0, 0.2);
  const double c = clipped_policy_term(2.0, -1.0, 0.2);
  return {a == -2.0 && b == -1.2 && c == 2.0, "ratio 1, A=2 -> " + fmt(a, 17) + "; ratio 2, A=1 -> " + fmt(b, 17) +
                                                   "; ratio 2, A=-1 -> " + fmt(c, 17)};
}

AdvantageResult gae(const std::vector<double>& r, const std::vector<double>& v, const std::vector<bool>& dones,
                    double gamma, double lambda) {
  std::unique_ptr<bool[]> d(new bool[dones.size()]);
  for (std::size_t i = 0; i < dones.size(); ++i) d[i] = dones[i];
  return compute_advantages(r, v, std::span<const bool>(d.get(), dones.size()), gamma, lambda);
}

// Rounding differs between the recursive and the summed form unless every
// intermediate is exact, so bitwise equality is checked on dyadic inputs
// (multiples of 1/8, gamma*lambda a power of two) and arbitrary inputs are
// held to a pinned absolute tolerance.
Outcome advantages() {
  Rng rng(4);
  const double gammas[] = {1.0, 0.5};
  const double lambdas[] = {1.0, 0.5, 0.25, 0.0};
  std::size_t exact_cases = 0, mismatches = 0;
  for (std::size_t n = 1; n <= 8; ++n) {
    for (unsigned pattern = 0; pattern < (1u << n); ++pattern) {
      std::vector<bool> dones(n);
      for (std::size_t i = 0; i < n; ++i) dones[i] = ((pattern >> i) & 1u) != 0;
      for (int rep = 0; rep < 4; ++rep) {
        std::vector<double> r(n), v(n);
        for (std::size_t i = 0; i < n; ++i) {
          r[i] = static_cast<double>(uniform_int(rng, -32, 32)) / 8.0;
          v[i] = static_cast<double>(uniform_int(rng, -32, 32)) / 8.0;
        }
        const double g = gammas[uniform_index(rng, 2)];
        const double l = lambdas[uniform_index(rng, 4)];
        const auto got = gae(r, v, dones, g, l);
        const auto want = direct_sum_advantages(r, v, dones, g, l);
        ++exact_cases;
        if (got.advantages != want.advantages || got.returns != want.returns) ++mismatches;
      }
    }
  }
  double worst = 0.0;
  for (int trial = 0; trial < 20000; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 8);
    std::vector<double> r(n), v(n);
    std::vector<bool> dones(n);
    for (std::size_t i = 0; i < n; ++i) {
      r[i] = normal01(rng);
      v[i] = normal01(rng);
      dones[i] = uniform01(rng) < 0.3;
    }
    const auto got = gae(r, v, dones, 1.0, 0.95);
    const auto want = direct_sum_advantages(r, v, dones, 1.0, 0.95);
    for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(got.advantages[i] - want.advantages[i]));
  }
  return {mismatches == 0 && worst <= kGaeArbitraryTolerance,
          std::to_string(exact_cases) + " exhaustive dyadic trajectories, " + std::to_string(mismatches) +
              " not bitwise equal; arbitrary inputs max deviation " + fmt(worst, 3)};
}

Outcome call_counts() {
  GreedySelector greedy;
  std::string failures;
  for (std::size_t n = 1; n <= 5; ++n) {
    const Problem p = chain_problem(n);
    const std::pair<Strategy, std::size_t> expected[] = {{Strategy::A, 2}, {Strategy::M, 1 + n}, {Strategy::S, 2 * n}};
    for (const auto& [strategy, calls] : expected) {
      auto gen = oracle_generator(p);
      DialogueEngine engine(gen, PromptTemplate::builtin());
      engine.run(strategy, p, greedy);
      if (gen.call_count() != calls) {
        failures += " " + std::string(1, strategy_letter(strategy)) + " n=" + std::to_string(n) + " made " +
                    std::to_string(gen.call_count());
      }
    }
  }
  return {failures.empty(), failures.empty() ? "A=2, M=1+n, S=2n for n in 1..5" : "mismatch:" + failures};
}

Outcome goldens() {
  std::size_t matched = 0;
  std::string failures;
  const auto cases = golden_prompt_cases();
  for (const auto& [name, prompt] : cases) {
    const fs::path path = fs::path(DIALCOT_TEST_DATA) / "golden" / (name + ".txt");
    if (fs::exists(path) && read_text(path) == prompt) {
      ++matched;
    } else {
      failures += " " + name;
    }
  }
  return {matched == cases.size(), std::to_string(matched) + "/" + std::to_string(cases.size()) +
                                       " prompts byte-identical" + (failures.empty() ? "" : "; differ:" + failures)};
}

Outcome rewards() {
  const Problem gold = reward_gold();
  const bool all_right = solver_rewards({"7", "14", "11"}, gold, 0.3) == std::vector<double>{0.3, 0.3, 1.0};
  const bool all_wrong = solver_rewards({"1", "2", "3"}, gold, 0.3) == std::vector<double>{0.0, 0.0, 0.0};
  const bool no_shaping = solver_rewards({"7", "14", "11"}, gold, 0.0) == std::vector<double>{0.0, 0.0, 1.0};
  const bool wrong_final = solver_rewards({"7", "5", "12"}, gold, 0.3) == std::vector<double>{0.3, 0.0, 0.0};
  auto [t, traj] = s_episode({"1", "2", "3"});
  assign_rewards(t, traj, gold, RewardConfig{0.3, 1.0});
  bool decomposer_zero = true;
  for (const auto& tr : traj) decomposer_zero = decomposer_zero && tr.reward == 0.0;
  const bool pass = all_right && all_wrong && no_shaping && wrong_final && decomposer_zero;
  return {pass, std::string("final step replaced by r_f: ") + (all_right ? "ok" : "FAIL") +
                    "; all-zero case: " + (all_wrong && decomposer_zero ? "ok" : "FAIL") +
                    "; r_m=0: " + (no_shaping ? "ok" : "FAIL") + "; wrong final: " + (wrong_final ? "ok" : "FAIL")};
}

const char* kSmallSynthetic = R"({
  "backend": "synthetic",
  "workers": 1,
  "synthetic": {"validation_size": 50},
  "ppo": {"hidden": 32, "batch_size": 256, "minibatch_size": 64, "learning_rate": 0.003},
  "train": {"max_updates": 4}
})";

Outcome k_sweep() {
  const fs::path dir = scratch("k_sweep");
  write_text(dir / "config.json", kSmallSynthetic);
  const int code = cli({"--config", (dir / "config.json").string(), "--out", (dir / "out").string(), "eval",
                        "--k-sweep", "2,3,4,5,6"});
  if (code != 0) return {false, "eval --k-sweep exited " + std::to_string(code)};
  std::ifstream in(dir / "out" / "k_sweep.csv");
  const auto rows = read_k_sweep_csv(in);
  std::string summary;
  bool ks_ok = rows.size() == 5;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ks_ok = ks_ok && rows[i].k == static_cast<int>(i) + 2;
    summary += " k=" + std::to_string(rows[i].k) + ":" + fmt(rows[i].policy_accuracy, 3);
  }
  return {ks_ok, "k_sweep.csv with " + std::to_string(rows.size()) + " rows, policy accuracy" + summary};
}

// Every command on the synthetic and scripted backends, run twice.
void run_all_commands(const fs::path& dir) {
  write_text(dir / "synthetic.json", kSmallSynthetic);
  write_text(dir / "script.json", R"([
    {"match": ".", "role": "Decomposer", "candidates": [{"text": "1. How many apples are left?", "logprob": -0.2},
                                                         {"text": "1. How many apples at first?", "logprob": -0.9}]},
    {"match": ".", "role": "Solver", "candidates": [{"text": "The answer is 5.", "logprob": -0.1},
                                                     {"text": "The answer is 6.", "logprob": -0.7}]}
  ])");
  std::string data;
  for (int i = 0; i < 6; ++i) {
    data += nlohmann::json{{"id", "p" + std::to_string(i)},
                           {"question", "Sam has " + std::to_string(i + 7) + " apples and eats some. How many apples are left?"},
                           {"answer", "#### 5"},
                           {"sub_questions", {"How many apples are left?"}},
                           {"sub_answers", {"5"}}}
                .dump() +
            "\n";
  }
  write_text(dir / "data.jsonl", data);
  write_text(dir / "scripted.json",
             nlohmann::json{{"backend", "scripted"},
                            {"workers", 1},
                            {"dataset", {{"path", (dir / "data.jsonl").string()}}},
                            {"scripted", {{"script", (dir / "script.json").string()}, {"feature_dim", 6}}}}
                 .dump());
  const std::string syn = (dir / "synthetic.json").string();
  const std::string scr = (dir / "scripted.json").string();
  const auto out = [&](const char* name) { return (dir / name).string(); };
  const std::vector<std::vector<std::string>> commands = {
      {"--config", syn, "gen-synthetic", "--count", "50", "--output", out("gen.jsonl")},
      {"--config", syn, "--out", out("run_S"), "run"},
      {"--config", syn, "--set", "strategy=A", "--out", out("run_A"), "run"},
      {"--config", syn, "--set", "strategy=M", "--out", out("run_M"), "run"},
      {"--config", scr, "--set", "strategy=A", "--out", out("scripted_A"), "run"},
      {"--config", scr, "--set", "strategy=M", "--out", out("scripted_M"), "run"},
      {"--config", scr, "--set", "strategy=S", "--out", out("scripted_S"), "run"},
      {"--config", syn, "--out", out("train"), "train-ppo"},
      {"--config", syn, "--out", out("eval"), "eval", "--checkpoint", out("train") + "/policy.ckpt"},
      {"--config", syn, "--set", "train.max_updates=1", "--out", out("sweep"), "eval", "--k-sweep", "2,4"},
      {"--config", scr, "--set", "ppo.hidden=8", "--set", "ppo.batch_size=16", "--set", "ppo.minibatch_size=8",
       "--set", "train.max_updates=2", "--set", "dataset.validation_size=2", "--out", out("scripted_train"),
       "train-ppo"},
  };
  for (const auto& c : commands) {
    const int code = cli(c);
    if (code != 0) throw std::runtime_error("command failed with exit " + std::to_string(code) + ": " + c.back());
  }
}

Outcome determinism() {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  run_all_commands(a);
  run_all_commands(b);
  std::size_t compared = 0;
  std::string differ;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    // Inputs embed their own directory; everything else must match exactly.
    if (rel == "scripted.json" || rel == "data.jsonl") continue;
    ++compared;
    if (!fs::exists(b / rel) || read_text(a / rel) != read_text(b / rel)) differ += " " + rel.string();
  }
  std::size_t in_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) in_b += e.is_regular_file() ? 1 : 0;
  const bool same_count = in_b == compared + 2;
  return {differ.empty() && same_count && compared > 0,
          std::to_string(compared) + " output files compared across two runs" +
              (differ.empty() ? ", all byte-identical" : "; differ:" + differ)};
}

Outcome old_policy_sync() {
  SyntheticConfig synthetic;
  synthetic.feature_dim = 8;
  PPOConfig config;
  config.hidden = 32;
  config.batch_size = 128;
  config.minibatch_size = 32;
  config.learning_rate = 3e-3;
  Rng rng(10);
  auto net = PolicyNetwork<double>::random(config.k, synthetic.feature_dim, config.hidden, rng);
  auto old_net = net;
  AdamState opt = AdamState::for_network(net);
  constexpr int kUpdates = 10;
  int synced = 0, moved = 0;
  std::uint64_t index = 0;
  for (int u = 0; u < kUpdates; ++u) {
    RolloutBuffer buffer;
    while (buffer.transition_count() < config.batch_size) {
      const Problem p = synthetic_problem(synthetic, kTrainStream, index++).problem;
      buffer.trajectories.push_back(episode(p, old_net, SelectMode::Explore, synthetic, rng).trajectory);
    }
    const auto before = net;
    update_policy(net, old_net, buffer, config, opt, rng);
    synced += old_net == net ? 1 : 0;
    moved += before == net ? 0 : 1;
  }
  return {synced == kUpdates && moved == kUpdates,
          "theta_old == theta bitwise after " + std::to_string(synced) + "/" + std::to_string(kUpdates) +
              " updates; parameters changed in " + std::to_string(moved)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"PPO learning on the synthetic environment", learning},
      {"gradient check", gradient},
      {"clipped-objective point tests", clip_examples},
      {"advantage oracle", advantages},
      {"dialogue call counts", call_counts},
      {"prompt golden files", goldens},
      {"reward examples", rewards},
      {"k-sweep harness", k_sweep},
      {"determinism", determinism},
      {"old-policy sync", old_policy_sync},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << "criterion " << i + 1 << " [" << criteria[i].first << "]: " << (o.pass ? "PASS" : "FAIL") << " - "
              << o.detail << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
