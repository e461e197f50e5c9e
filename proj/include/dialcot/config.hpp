#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dialcot/http_generator.hpp"
#include "dialcot/roles.hpp"
#include "dialcot/synthetic.hpp"
#include "dialcot/trainer.hpp"

namespace dialcot {

enum class Backend { Http, Scripted, Synthetic };

std::string_view backend_name(Backend b);

/// Everything a command needs. Built from one JSON document plus `--set`
/// overrides; unknown keys are rejected and every field is validated up front.
struct RunConfig {
  Strategy strategy = Strategy::S;
  Backend backend = Backend::Synthetic;
  std::uint64_t seed = 7;
  double tolerance = kDefaultAnswerTolerance;
  std::string template_path;  ///< empty = built-in template
  std::string out_dir = "out";
  int workers = 0;            ///< 0 = hardware concurrency
  std::size_t max_turns = 10;
  /// Run S dialogues for exactly the gold sub-question count when gold is known.
  bool replay_gold_rounds = true;
  /// Adds wall_time to reports. Off by default so outputs are reproducible byte for byte.
  bool record_wall_time = false;

  struct Dataset {
    std::string path;
    std::string validation_path;
    std::size_t validation_size = kDefaultValidationSize;
  } dataset;

  HttpSettings http;
  int http_feature_dim = 64;
  std::string embedding_model;  ///< empty = hashed features

  struct Scripted {
    std::string script;
    int feature_dim = 16;
  } scripted;

  SyntheticConfig synthetic;
  std::size_t synthetic_count = 100;  ///< problems written by gen-synthetic

  TrainConfig train;
  double r_f = 1.0;

  int k() const { return train.ppo.k; }
  int feature_dim() const;
  RewardConfig rewards() const { return RewardConfig{train.ppo.r_m, r_f, tolerance}; }
  EpisodeSettings episode_settings() const;
  /// Worker count with 0 resolved to the core count, capped by the HTTP in-flight limit.
  int resolved_workers() const;

  /// Copies shared settings (k, seed, rewards, turn limit) into the nested configs.
  void sync();
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

RunConfig config_from_text(std::string_view json_text, const std::vector<std::string>& overrides = {});
/// Empty `path` means defaults plus overrides.
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});
std::string config_to_json(const RunConfig& config);

}  // namespace dialcot
