#include "dialcot/commands.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dialcot/checkpoint.hpp"
#include "dialcot/errors.hpp"
#include "dialcot/http_generator.hpp"
#include "dialcot/synthetic.hpp"

namespace dialcot {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr std::uint64_t kGeneratorSalt = 0x67656e;  // per-problem synthetic candidate noise
constexpr std::uint64_t kPolicySalt = 0x706f6c;

/// Generator source for a command: one shared generator for http and scripted,
/// one seeded generator per problem for the synthetic backend.
class BackendHandle {
 public:
  explicit BackendHandle(const RunConfig& config) : config_(config) {
    switch (config.backend) {
      case Backend::Http: {
        std::shared_ptr<const FeatureExtractor> features;
        if (config.embedding_model.empty()) {
          features = std::make_shared<HashFeatureExtractor>(config.http_feature_dim);
        } else {
          features = std::make_shared<EmbeddingFeatureExtractor>(config.http, config.embedding_model,
                                                                 config.http_feature_dim);
        }
        shared_ = std::make_shared<HttpGenerator>(config.http, std::move(features));
        break;
      }
      case Backend::Scripted:
        shared_ = ScriptedGenerator::from_json_file(config.scripted.script, config.scripted.feature_dim);
        break;
      case Backend::Synthetic:
        break;
    }
  }

  std::shared_ptr<Generator> for_problem(const Problem& problem, std::size_t index) const {
    if (shared_) return shared_;
    return std::make_shared<SyntheticGenerator>(problem, config_.synthetic.feature_dim, config_.synthetic.noise,
                                                derive_seed(config_.seed, kGeneratorSalt, index));
  }

  Generator* shared() const { return shared_.get(); }

 private:
  const RunConfig& config_;
  std::shared_ptr<Generator> shared_;
};

PromptTemplate load_template(const RunConfig& config) {
  return config.template_path.empty() ? PromptTemplate::builtin() : PromptTemplate::load(config.template_path);
}

std::vector<Problem> read_problems(const std::string& path, std::ostream& log) {
  ParsedDataset parsed = load_dataset(path);
  for (const auto& e : parsed.errors) log << path << ":" << e.line << ": skipped record: " << e.message << "\n";
  return std::move(parsed.problems);
}

/// Evaluation problems: dataset.path, or the held-out synthetic set.
std::vector<Problem> evaluation_problems(const RunConfig& config, std::ostream& log) {
  if (!config.dataset.path.empty()) return read_problems(config.dataset.path, log);
  if (config.backend != Backend::Synthetic) throw ConfigError("dataset.path is required for the " +
                                                              std::string(backend_name(config.backend)) + " backend");
  std::vector<Problem> problems;
  for (std::size_t i = 0; i < config.synthetic.validation_size; ++i) {
    problems.push_back(synthetic_problem(config.synthetic, kValidationStream, i).problem);
  }
  return problems;
}

DialogueOptions dialogue_options(const RunConfig& config, Strategy strategy, const Problem& problem) {
  DialogueOptions o;
  o.k = config.k();
  o.max_turns = config.max_turns;
  if (strategy == Strategy::S && config.replay_gold_rounds && !problem.gold_sub_questions.empty()) {
    o.fixed_rounds = problem.gold_sub_questions.size();
  }
  return o;
}

std::string file_stem(const std::string& id) {
  std::string out;
  for (char c : id) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  if (out.empty() || out.front() == '.') out.insert(out.begin(), '_');
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

fs::path ensure_out_dir(const RunConfig& config) {
  fs::path dir(config.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory '" + dir.string() + "': " + ec.message());
  return dir;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

/// Problems, or the synthetic generator's own stream, as a training environment.
struct TrainingSetup {
  std::unique_ptr<BackendHandle> backend;
  std::unique_ptr<Environment> env;
};

TrainingSetup training_setup(const RunConfig& config, std::ostream& log) {
  TrainingSetup s;
  if (config.backend == Backend::Synthetic) {
    s.env = std::make_unique<SyntheticEnvironment>(config.synthetic);
    return s;
  }
  if (config.dataset.path.empty()) {
    throw ConfigError("dataset.path is required to train with the " + std::string(backend_name(config.backend)) +
                      " backend");
  }
  std::vector<Problem> train_set = read_problems(config.dataset.path, log);
  std::vector<Problem> validation;
  if (!config.dataset.validation_path.empty()) {
    validation = read_problems(config.dataset.validation_path, log);
  } else {
    DatasetSplit split = split_dataset(train_set, config.dataset.validation_size, config.seed);
    validation = std::move(split.validation);
    train_set = std::move(split.test);
  }
  if (config.train.ppo.r_m > 0.0) {
    for (const auto& p : train_set) {
      if (!p.has_decomposition()) {
        throw MissingGoldError("problem '" + p.id + "' has no gold sub-answers but ppo.r_m > 0");
      }
    }
  }
  s.backend = std::make_unique<BackendHandle>(config);
  DialogueOptions options;
  options.k = config.k();
  options.max_turns = config.max_turns;
  s.env = std::make_unique<DatasetEnvironment>(*s.backend->shared(), load_template(config), options,
                                               std::move(train_set), std::move(validation),
                                               config.episode_settings(), config.seed);
  if (s.env->feature_dim() != config.feature_dim()) throw ConfigError("backend feature_dim disagrees with config");
  return s;
}

/// Greedy and policy outcomes on the same problems; per-step accuracy over 3-step problems.
SelectorComparison compare_selectors(const RunConfig& config, const PolicyNetwork<double>& net,
                                     const std::vector<Problem>& problems, std::ostream& log) {
  const BackendHandle backend(config);
  const PromptTemplate tmpl = load_template(config);
  EpisodeSettings settings = config.episode_settings();
  settings.rewards.r_m = 0.0;  // rewards are not needed to score a run
  std::vector<ProblemOutcome> greedy(problems.size());
  std::vector<ProblemOutcome> policy(problems.size());
  std::vector<std::string> errors(problems.size());

  parallel_for(problems.size(), config.train.workers, [&](std::size_t i) {
    const Problem& p = problems[i];
    const auto generator = backend.for_problem(p, i);
    try {
      GreedySelector selector;
      const Transcript t = DialogueEngine(*generator, tmpl, dialogue_options(config, Strategy::S, p))
                               .run_step_by_step(p, selector);
      greedy[i] = score_transcript(t, p, config.tolerance);
    } catch (const Error& e) {
      greedy[i] = failed_outcome(p);
      errors[i] += std::string("greedy: ") + e.what() + "\n";
    }
    try {
      Rng rng(derive_seed(config.seed, kPolicySalt, i));
      const Episode ep = run_policy_episode(*generator, tmpl, dialogue_options(config, Strategy::S, p), p, net,
                                            SelectMode::Infer, rng, settings);
      policy[i] = score_transcript(ep.transcript, p, config.tolerance);
    } catch (const ShapeError&) {
      throw;
    } catch (const Error& e) {
      policy[i] = failed_outcome(p);
      errors[i] += std::string("policy: ") + e.what() + "\n";
    }
  });
  for (std::size_t i = 0; i < problems.size(); ++i) {
    if (!errors[i].empty()) log << "problem '" << problems[i].id << "' failed\n" << errors[i];
  }

  SelectorComparison c;
  c.step_depth = 3;
  c.greedy = aggregate(greedy, Strategy::S, "greedy", c.step_depth);
  c.policy = aggregate(policy, Strategy::S, "policy", c.step_depth);
  c.delta = c.policy.overall_accuracy - c.greedy.overall_accuracy;
  return c;
}

std::string describe(const std::exception& e) {
  std::string text = e.what();
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    text += "\n  caused by: " + describe(inner);
  } catch (...) {
  }
  return text;
}

std::string percent(double x) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(1) << 100.0 * x << "%";
  return ss.str();
}

void print_report(std::ostream& out, const AccuracyReport& r) {
  out << r.selector << " (strategy " << r.strategy << "): " << percent(r.overall_accuracy) << " over "
      << r.n_problems << " problems, " << r.n_failed_runs << " failed runs";
  if (r.wall_time) out << ", " << std::setprecision(3) << *r.wall_time << " s";
  out << "\n";
  for (std::size_t i = 0; i < r.per_step_accuracy.size(); ++i) {
    out << "  sub-step " << i + 1 << ": " << percent(r.per_step_accuracy[i]) << "\n";
  }
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const MissingGoldError*>(&e)) return kExitMissingGold;
  if (dynamic_cast<const ShapeError*>(&e)) return kExitShape;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const NotANumber*>(&e) ||
      dynamic_cast<const SizeError*>(&e)) {
    return kExitData;
  }
  return kExitUnexpected;
}

RunOutcome cmd_run(const RunConfig& config, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  const PromptTemplate tmpl = load_template(config);
  const BackendHandle backend(config);
  const std::vector<Problem> problems = evaluation_problems(config, log);
  const fs::path out_dir = ensure_out_dir(config);

  std::vector<std::optional<Transcript>> transcripts(problems.size());
  std::vector<ProblemOutcome> outcomes(problems.size());
  std::vector<std::string> errors(problems.size());
  parallel_for(problems.size(), config.train.workers, [&](std::size_t i) {
    const Problem& p = problems[i];
    try {
      const auto generator = backend.for_problem(p, i);
      GreedySelector selector;
      DialogueEngine engine(*generator, tmpl, dialogue_options(config, config.strategy, p));
      transcripts[i] = engine.run(config.strategy, p, selector);
      outcomes[i] = score_transcript(*transcripts[i], p, config.tolerance);
    } catch (const Error& e) {
      outcomes[i] = failed_outcome(p);
      errors[i] = describe(e);
    }
  });

  fs::create_directories(out_dir / "transcripts");
  std::map<std::string, int> used;
  RunOutcome result;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    if (!errors[i].empty()) log << "problem '" << problems[i].id << "' failed: " << errors[i] << "\n";
    if (!transcripts[i]) continue;
    std::string stem = file_stem(problems[i].id);
    if (const int n = used[stem]++; n > 0) stem += "-" + std::to_string(n);
    write_text(out_dir / "transcripts" / (stem + ".json"), transcript_to_json(*transcripts[i]) + "\n");
    result.transcripts.push_back(std::move(*transcripts[i]));
  }
  result.report = aggregate(outcomes, config.strategy, "greedy");
  if (config.record_wall_time) result.report.wall_time = seconds_since(start);
  write_text(out_dir / "report.json", report_to_json(result.report));
  return result;
}

TrainResult cmd_train_ppo(const RunConfig& config, std::ostream& log) {
  TrainingSetup setup = training_setup(config, log);
  const fs::path out_dir = ensure_out_dir(config);
  const fs::path checkpoint_path = out_dir / "policy.ckpt";
  std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::trunc);
  if (!metrics) throw DataError("cannot write metrics log under '" + out_dir.string() + "'");

  auto save = [&](const TrainResult& r) {
    save_checkpoint(checkpoint_path.string(),
                    Checkpoint{config.train.ppo, setup.env->feature_dim(), r.net, r.rng_state, r.updates});
  };
  TrainResult result = train(*setup.env, config.train, [&](const CurvePoint& p, const TrainResult& r) {
    metrics << curve_point_to_json(p) << "\n" << std::flush;
    log << "update " << p.update_index << ": mean reward " << p.mean_reward << ", validation accuracy "
        << percent(p.val_accuracy) << "\n";
    save(r);
  });
  save(result);
  std::ostringstream csv;
  write_curve_csv(csv, result.curve);
  write_text(out_dir / "curve.csv", csv.str());
  return result;
}

SelectorComparison cmd_eval(const RunConfig& config, const std::string& checkpoint_path, std::ostream& log) {
  if (checkpoint_path.empty()) throw ConfigError("eval needs --checkpoint");
  const Checkpoint ck = load_checkpoint(checkpoint_path, config.k(), config.feature_dim());
  const std::vector<Problem> problems = evaluation_problems(config, log);
  const fs::path out_dir = ensure_out_dir(config);
  const auto start = std::chrono::steady_clock::now();
  SelectorComparison c = compare_selectors(config, ck.net, problems, log);
  if (config.record_wall_time) c.greedy.wall_time = c.policy.wall_time = seconds_since(start);
  write_text(out_dir / "report.json", comparison_to_json(c));
  return c;
}

std::vector<KSweepRow> cmd_k_sweep(const RunConfig& config, const std::vector<int>& ks, std::ostream& log) {
  if (ks.empty()) throw ConfigError("k sweep needs at least one k");
  const fs::path out_dir = ensure_out_dir(config);
  std::vector<KSweepRow> rows;
  for (int k : ks) {
    RunConfig c = config;
    c.train.ppo.k = k;
    c.sync();
    c.validate();
    log << "k=" << k << ": training\n";
    TrainingSetup setup = training_setup(c, log);
    const TrainResult trained = train(*setup.env, c.train);
    const SelectorComparison cmp = compare_selectors(c, trained.net, evaluation_problems(c, log), log);
    rows.push_back(KSweepRow{k, cmp.greedy.overall_accuracy, cmp.policy.overall_accuracy, trained.updates});
    log << "k=" << k << ": greedy " << percent(rows.back().greedy_accuracy) << ", policy "
        << percent(rows.back().policy_accuracy) << "\n";
  }
  std::ostringstream csv;
  write_k_sweep_csv(csv, rows);
  write_text(out_dir / "k_sweep.csv", csv.str());
  return rows;
}

void cmd_gen_synthetic(const RunConfig& config, std::size_t count, const std::string& output_path) {
  std::vector<Problem> problems;
  problems.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    problems.push_back(synthetic_problem(config.synthetic, kDatasetStream, i).problem);
  }
  const fs::path path(output_path);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + output_path + "'");
  write_dataset(out, problems);
}

void cmd_report(const std::string& path, std::ostream& out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const std::string first_line = text.substr(0, text.find('\n'));

  if (first_line.rfind("update_index,", 0) == 0) {
    std::istringstream s(text);
    const auto curve = read_curve_csv(s);
    out << "update  mean_reward  val_accuracy  clip_fraction  approx_kl\n";
    for (const auto& p : curve) {
      out << std::setw(6) << p.update_index << "  " << std::setw(11) << std::setprecision(4) << p.mean_reward << "  "
          << std::setw(12) << percent(p.val_accuracy) << "  " << std::setw(13) << p.clip_fraction << "  "
          << std::setw(9) << p.approx_kl << "\n";
    }
    return;
  }
  if (first_line.rfind("k,", 0) == 0) {
    std::istringstream s(text);
    out << "k  greedy  policy  delta\n";
    for (const auto& r : read_k_sweep_csv(s)) {
      out << r.k << "  " << percent(r.greedy_accuracy) << "  " << percent(r.policy_accuracy) << "  "
          << percent(r.policy_accuracy - r.greedy_accuracy) << "\n";
    }
    return;
  }
  const json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw DataError("'" + path + "' is neither a report JSON nor a known CSV");
  if (doc.is_object() && doc.contains("greedy")) {
    const SelectorComparison c = comparison_from_json(text);
    print_report(out, c.greedy);
    print_report(out, c.policy);
    out << "delta (policy - greedy): " << percent(c.delta) << "\n";
    out << "per-step accuracy covers problems with " << c.step_depth << " gold sub-questions\n";
    return;
  }
  print_report(out, report_from_json(text));
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"DialCoT dialogue engine and PPO path selection"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  int workers = -1;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--set", overrides, "Override one config key, e.g. --set ppo.k=4")->take_all();
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--workers", workers, "Parallel workers (0 = all cores)");

  std::string dataset;
  auto* run = app.add_subcommand("run", "Greedy dialogues over a dataset");
  run->add_option("--dataset", dataset, "JSONL dataset");

  auto* train_cmd = app.add_subcommand("train-ppo", "Train the path-selection policy");
  train_cmd->add_option("--dataset", dataset, "JSONL dataset with gold sub-answers");

  std::string checkpoint;
  std::vector<int> k_sweep;
  auto* eval = app.add_subcommand("eval", "Compare greedy and policy selection");
  eval->add_option("--checkpoint", checkpoint, "Policy checkpoint");
  eval->add_option("--dataset", dataset, "JSONL dataset");
  eval->add_option("--k-sweep", k_sweep, "Train and evaluate one policy per k, e.g. 2,3,4,5,6")->delimiter(',');

  std::size_t count = 0;
  bool count_set = false;
  std::string output;
  auto* gen = app.add_subcommand("gen-synthetic", "Write generated problems as JSONL");
  gen->add_option("--count", count, "Number of problems")->each([&](const std::string&) { count_set = true; });
  gen->add_option("--output", output, "Output file (default <out>/synthetic.jsonl)");

  std::string report_path;
  auto* report = app.add_subcommand("report", "Summarize a report.json, curve.csv or k_sweep.csv");
  report->add_option("path", report_path, "File to summarize")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (report->parsed()) {
      cmd_report(report_path, out);
      return kExitOk;
    }
    if (!out_dir.empty()) overrides.push_back("out=" + json(out_dir).dump());
    if (workers >= 0) overrides.push_back("workers=" + std::to_string(workers));
    if (!dataset.empty()) overrides.push_back("dataset.path=" + json(dataset).dump());
    const RunConfig config = load_config(config_path, overrides);

    if (run->parsed()) {
      const RunOutcome r = cmd_run(config, err);
      print_report(out, r.report);
    } else if (train_cmd->parsed()) {
      const TrainResult r = cmd_train_ppo(config, err);
      out << "trained " << r.updates << " updates";
      if (!r.curve.empty()) out << ", final validation accuracy " << percent(r.curve.back().val_accuracy);
      out << "\n";
    } else if (eval->parsed()) {
      if (!k_sweep.empty()) {
        for (const auto& row : cmd_k_sweep(config, k_sweep, err)) {
          out << "k=" << row.k << ": greedy " << percent(row.greedy_accuracy) << ", policy "
              << percent(row.policy_accuracy) << "\n";
        }
      } else {
        const SelectorComparison c = cmd_eval(config, checkpoint, err);
        print_report(out, c.greedy);
        print_report(out, c.policy);
        out << "delta (policy - greedy): " << percent(c.delta) << "\n";
      }
    } else if (gen->parsed()) {
      const std::string path = output.empty() ? (fs::path(config.out_dir) / "synthetic.jsonl").string() : output;
      cmd_gen_synthetic(config, count_set ? count : config.synthetic_count, path);
      out << "wrote " << (count_set ? count : config.synthetic_count) << " problems to " << path << "\n";
    }
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << describe(e) << "\n";
    return exit_code_for(e);
  }
}

}  // namespace dialcot
