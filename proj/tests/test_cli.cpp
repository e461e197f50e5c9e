#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dialcot/commands.hpp"
#include "dialcot/config.hpp"
#include "dialcot/errors.hpp"
#include "dialcot/report.hpp"

using namespace dialcot;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("dialcot_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "dialcot");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

void write_text(const std::string& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Ten one-step problems whose gold answer is 5; the scripted Solver always says 5.
void write_scripted_fixture(const TempDir& dir, bool with_failure) {
  std::string data;
  for (int i = 0; i < 10; ++i) {
    const std::string question = with_failure && i == 4 ? "Tom has boom things. How many?" : "Tom has 5 pens. How many?";
    data += json{{"id", "p" + std::to_string(i)},
                 {"question", question},
                 {"answer", "#### 5"},
                 {"sub_questions", {"How many?"}},
                 {"sub_answers", {"5"}}}
                .dump() +
            "\n";
  }
  write_text(dir / "data.jsonl", data);
  write_text(dir / "script.json", R"([
    {"match": "boom", "error": "transport"},
    {"match": ".", "role": "Decomposer", "candidates": [{"text": "1. How many?", "logprob": -0.1}]},
    {"match": ".", "role": "Solver", "candidates": [{"text": "The answer is 5.", "logprob": -0.1}]}
  ])");
  write_text(dir / "config.json", json{{"strategy", "A"},
                                       {"backend", "scripted"},
                                       {"workers", 1},
                                       {"out", dir / "out"},
                                       {"dataset", {{"path", dir / "data.jsonl"}}},
                                       {"scripted", {{"script", dir / "script.json"}, {"feature_dim", 4}}}}
                                      .dump());
}

/// Tiny synthetic training setup (a few seconds on one core).
void write_synthetic_config(const TempDir& dir, int max_updates = 1) {
  write_text(dir / "config.json",
             json{{"backend", "synthetic"},
                  {"workers", 1},
                  {"out", dir / "out"},
                  {"synthetic", {{"validation_size", 12}, {"feature_dim", 8}}},
                  {"ppo", {{"hidden", 8}, {"batch_size", 48}, {"minibatch_size", 16}}},
                  {"train", {{"max_updates", max_updates}}}}
                 .dump());
}

std::vector<std::string> directory_listing(const fs::path& root) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) out.push_back(fs::relative(e.path(), root).string());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("config is strict and overrides apply") {
  CHECK_THROWS_AS(config_from_text(R"({"bogus": 1})"), ConfigError);
  CHECK_THROWS_AS(config_from_text(R"({"ppo": {"lr": 1}})"), ConfigError);
  CHECK_THROWS_AS(config_from_text(R"({"strategy": "Q"})"), ConfigError);
  CHECK_THROWS_AS(config_from_text(R"({"ppo": {"clip_epsilon": 1.5}})"), ConfigError);
  CHECK_THROWS_AS(config_from_text("not json"), ConfigError);

  const RunConfig d = config_from_text("{}");
  CHECK(d.k() == 3);
  CHECK(d.train.ppo.r_m == 0.3);
  CHECK(d.train.ppo.learning_rate == 3e-4);
  CHECK(d.train.ppo.batch_size == 4096u);
  CHECK(d.train.ppo.clip_epsilon == 0.2);
  CHECK(d.train.ppo.hidden == 1024);

  const RunConfig c = config_from_text(R"({"seed": 9})", {"ppo.k=4", "strategy=M", "synthetic.noise_std=0.5"});
  CHECK(c.k() == 4);
  CHECK(c.strategy == Strategy::M);
  CHECK(c.synthetic.noise.noise_std == 0.5);
  CHECK(c.synthetic.k == 4);
  CHECK(c.train.ppo.seed == 9);
  CHECK_THROWS_AS(config_from_text("{}", {"ppo.nope=1"}), ConfigError);
  CHECK_THROWS_AS(config_from_text("{}", {"novalue"}), ConfigError);

  const RunConfig back = config_from_text(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));
}

TEST_CASE("exit codes") {
  CHECK(exit_code_for(ConfigError("x")) == kExitConfig);
  CHECK(exit_code_for(DataError(1, "x")) == kExitData);
  CHECK(exit_code_for(NotANumber("x")) == kExitData);
  CHECK(exit_code_for(SizeError("x")) == kExitData);
  CHECK(exit_code_for(MissingGoldError("x")) == kExitMissingGold);
  CHECK(exit_code_for(ShapeError("x")) == kExitShape);
  CHECK(exit_code_for(std::runtime_error("x")) == kExitUnexpected);

  TempDir dir("exit");
  write_text(dir / "bad.json", R"({"bogus": true})");
  CHECK(cli({"--config", dir / "bad.json", "run"}).code == 2);
  CHECK(cli({"--config", dir / "missing.json", "run"}).code == 2);
  CHECK(cli({"--help"}).code == 0);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"--set", "strategy=A", "--set", "backend=scripted", "run", "--dataset", dir / "none.jsonl"}).code == 2);
  write_text(dir / "s.json", "[]");
  CHECK(cli({"--set", "backend=scripted", "--set", "scripted.script=" + json(dir / "s.json").dump(), "run",
             "--dataset", dir / "none.jsonl"})
            .code == 3);
}

TEST_CASE("scripted run scores every problem") {
  TempDir dir("run");
  write_scripted_fixture(dir, false);
  const CliResult r = cli({"--config", dir / "config.json", "run"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const AccuracyReport report = report_from_json(read_text(dir / "out/report.json"));
  CHECK(report.n_problems == 10);
  CHECK(report.n_failed_runs == 0);
  CHECK(report.overall_accuracy == 1.0);
  CHECK(report.selector == "greedy");
  CHECK(report.per_step_accuracy == std::vector<double>{1.0});
  CHECK_FALSE(report.wall_time.has_value());
  CHECK(fs::exists(dir / "out/transcripts/p0.json"));
  CHECK(fs::exists(dir / "out/transcripts/p9.json"));
}

TEST_CASE("a hard generator failure counts as a failed run") {
  TempDir dir("fail");
  write_scripted_fixture(dir, true);
  const RunConfig config = load_config(dir / "config.json");
  std::ostringstream log;
  const RunOutcome outcome = cmd_run(config, log);
  CHECK(outcome.report.n_problems == 10);
  CHECK(outcome.report.n_failed_runs == 1);
  CHECK(outcome.report.overall_accuracy <= 0.9);
  CHECK(outcome.transcripts.size() == 9);
  CHECK(log.str().find("p4") != std::string::npos);
}

TEST_CASE("empty dataset gives an empty report") {
  TempDir dir("empty");
  write_scripted_fixture(dir, false);
  write_text(dir / "data.jsonl", "");
  REQUIRE(cli({"--config", dir / "config.json", "run"}).code == 0);
  const AccuracyReport report = report_from_json(read_text(dir / "out/report.json"));
  CHECK(report.n_problems == 0);
  CHECK(report.overall_accuracy == 0.0);
}

TEST_CASE("every strategy runs on the synthetic backend") {
  TempDir dir("strategies");
  write_synthetic_config(dir);
  for (const char* s : {"A", "M", "S"}) {
    const CliResult r = cli({"--config", dir / "config.json", "--set", std::string("strategy=") + s, "run"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const AccuracyReport report = report_from_json(read_text(dir / "out/report.json"));
    CHECK(report.n_problems == 12);
    CHECK(report.strategy == s);
  }
}

TEST_CASE("gen-synthetic is byte-identical and round-trips") {
  TempDir dir("gen");
  REQUIRE(cli({"gen-synthetic", "--count", "100", "--output", dir / "a.jsonl"}).code == 0);
  REQUIRE(cli({"gen-synthetic", "--count", "100", "--output", dir / "b.jsonl"}).code == 0);
  CHECK(read_text(dir / "a.jsonl") == read_text(dir / "b.jsonl"));
  const ParsedDataset parsed = load_dataset(dir / "a.jsonl");
  CHECK(parsed.errors.empty());
  REQUIRE(parsed.problems.size() == 100);
  for (const auto& p : parsed.problems) {
    CHECK(p.has_decomposition());
    CHECK(p.gold_sub_answers.back() == p.gold_final_answer);
  }
  CHECK(cli({"--set", "seed=8", "gen-synthetic", "--count", "100", "--output", dir / "c.jsonl"}).code == 0);
  CHECK(read_text(dir / "c.jsonl") != read_text(dir / "a.jsonl"));

  REQUIRE(cli({"gen-synthetic", "--count", "0", "--output", dir / "zero.jsonl"}).code == 0);
  CHECK(read_text(dir / "zero.jsonl").empty());
}

TEST_CASE("training, evaluation and reports through the CLI") {
  TempDir dir("train");
  write_synthetic_config(dir);
  const CliResult trained = cli({"--config", dir / "config.json", "train-ppo"});
  REQUIRE_MESSAGE(trained.code == 0, trained.err);
  CHECK(fs::exists(dir / "out/policy.ckpt"));
  std::ifstream curve_in(dir / "out/curve.csv");
  const auto curve = read_curve_csv(curve_in);
  CHECK(curve.size() == 1);
  std::ifstream metrics(dir / "out/metrics.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(metrics, line)) {
    CHECK_NOTHROW(json::parse(line));
    ++lines;
  }
  CHECK(lines == 1);

  const CliResult eval = cli({"--config", dir / "config.json", "eval", "--checkpoint", dir / "out/policy.ckpt"});
  REQUIRE_MESSAGE(eval.code == 0, eval.err);
  const SelectorComparison cmp = comparison_from_json(read_text(dir / "out/report.json"));
  CHECK(cmp.greedy.n_problems == 12);
  CHECK(cmp.policy.n_problems == 12);
  CHECK(cmp.delta == cmp.policy.overall_accuracy - cmp.greedy.overall_accuracy);
  CHECK(cmp.greedy.selector == "greedy");
  CHECK(cmp.policy.selector == "policy");

  CHECK(cli({"--config", dir / "config.json", "--set", "ppo.k=4", "eval", "--checkpoint", dir / "out/policy.ckpt"})
            .code == 5);
  CHECK(cli({"--config", dir / "config.json", "--set", "synthetic.feature_dim=6", "eval", "--checkpoint",
             dir / "out/policy.ckpt"})
            .code == 5);
  CHECK(cli({"--config", dir / "config.json", "eval"}).code == 2);

  for (const char* file : {"out/report.json", "out/curve.csv"}) {
    const CliResult shown = cli({"report", dir / file});
    CHECK_MESSAGE(shown.code == 0, shown.err);
    CHECK_FALSE(shown.out.empty());
  }
  write_text(dir / "junk.txt", "hello");
  CHECK(cli({"report", dir / "junk.txt"}).code == 3);
}

TEST_CASE("budget zero writes the initial checkpoint and an empty curve") {
  TempDir dir("budget");
  write_synthetic_config(dir, 0);
  REQUIRE(cli({"--config", dir / "config.json", "train-ppo"}).code == 0);
  CHECK(fs::exists(dir / "out/policy.ckpt"));
  CHECK(read_text(dir / "out/curve.csv") == "update_index,mean_reward,val_accuracy,clip_fraction,approx_kl\n");
}

TEST_CASE("training without gold sub-answers fails with exit 4") {
  TempDir dir("gold");
  write_scripted_fixture(dir, false);
  std::string data;
  for (int i = 0; i < 10; ++i) data += R"({"question":"Tom has 5 pens. How many?","answer":"#### 5"})" "\n";
  write_text(dir / "data.jsonl", data);
  CHECK(cli({"--config", dir / "config.json", "--set", "dataset.validation_size=2", "train-ppo"}).code == 4);
  CHECK(cli({"--config", dir / "config.json", "--set", "dataset.validation_size=20", "train-ppo"}).code == 3);
}

TEST_CASE("commands are deterministic with fixed seeds") {
  TempDir a("det_a"), b("det_b");
  for (const TempDir* dir : {&a, &b}) {
    write_synthetic_config(*dir, 2);
    REQUIRE(cli({"--config", *dir / "config.json", "run"}).code == 0);
    REQUIRE(cli({"--config", *dir / "config.json", "--out", *dir / "train", "train-ppo"}).code == 0);
    REQUIRE(cli({"--config", *dir / "config.json", "--out", *dir / "eval", "eval", "--checkpoint",
                 *dir / "train/policy.ckpt"})
                .code == 0);
  }
  const auto files = directory_listing(a.path);
  CHECK(files == directory_listing(b.path));
  for (const auto& f : files) {
    if (fs::is_directory(a.path / f) || f == "config.json") continue;
    CHECK_MESSAGE(read_text(a / f) == read_text(b / f), f);
  }
}

TEST_CASE("report files round-trip through the readers") {
  AccuracyReport r;
  r.strategy = "S";
  r.selector = "policy";
  r.n_problems = 7;
  r.n_failed_runs = 1;
  r.overall_accuracy = 3.0 / 7;
  r.per_step_accuracy = {0.9, 0.1 + 0.2, 1.0 / 3};
  r.wall_time = 1.25;
  CHECK(report_from_json(report_to_json(r)) == r);

  SelectorComparison c{r, r, 0.0, 3};
  c.greedy.selector = "greedy";
  CHECK(comparison_from_json(comparison_to_json(c)) == c);

  std::vector<CurvePoint> curve(2);
  curve[0].mean_reward = 0.1 + 0.2;
  curve[1].update_index = 1;
  curve[1].val_accuracy = 0.97;
  curve[1].approx_kl = 1e-7;
  std::stringstream csv;
  write_curve_csv(csv, curve);
  const auto back = read_curve_csv(csv);
  REQUIRE(back.size() == 2);
  CHECK(back[0].mean_reward == curve[0].mean_reward);
  CHECK(back[1].val_accuracy == 0.97);
  CHECK(back[1].approx_kl == 1e-7);

  const std::vector<KSweepRow> rows{{2, 0.1, 0.5, 3}, {6, 0.01, 0.9, 4}};
  std::stringstream ks;
  write_k_sweep_csv(ks, rows);
  CHECK(read_k_sweep_csv(ks) == rows);
  std::stringstream broken("k,greedy\n1,2\n");
  CHECK_THROWS(read_k_sweep_csv(broken));
}
