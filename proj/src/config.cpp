#include "dialcot/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dialcot/errors.hpp"
#include "json_reader.hpp"

namespace dialcot {
namespace {

using json = nlohmann::json;

Backend parse_backend(const std::string& text) {
  if (text == "http") return Backend::Http;
  if (text == "scripted") return Backend::Scripted;
  if (text == "synthetic") return Backend::Synthetic;
  throw ConfigError("backend: expected http, scripted or synthetic, got '" + text + "'");
}

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) throw ConfigError("override '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

RunConfig from_json(const json& doc) {
  RunConfig c;
  detail::JsonReader r(doc, "");

  std::string strategy = std::string(1, strategy_letter(c.strategy));
  r.get("strategy", strategy);
  if (strategy == "A") c.strategy = Strategy::A;
  else if (strategy == "M") c.strategy = Strategy::M;
  else if (strategy == "S") c.strategy = Strategy::S;
  else throw ConfigError("strategy: expected A, M or S, got '" + strategy + "'");

  std::string backend(backend_name(c.backend));
  r.get("backend", backend);
  c.backend = parse_backend(backend);

  r.get("seed", c.seed);
  r.get("tolerance", c.tolerance);
  r.get("template", c.template_path);
  r.get("out", c.out_dir);
  r.get("workers", c.workers);
  r.get("max_turns", c.max_turns);
  r.get("replay_gold_rounds", c.replay_gold_rounds);
  r.get("record_wall_time", c.record_wall_time);

  {
    auto d = r.child("dataset");
    d.get("path", c.dataset.path);
    d.get("validation_path", c.dataset.validation_path);
    d.get("validation_size", c.dataset.validation_size);
    d.finish();
  }
  {
    auto h = r.child("http");
    h.get("base_url", c.http.base_url);
    h.get("model", c.http.model);
    h.get("max_tokens", c.http.max_tokens);
    h.get("timeout_s", c.http.timeout_s);
    h.get("max_in_flight", c.http.max_in_flight);
    h.get("max_retries", c.http.max_retries);
    h.get("backoff_base_s", c.http.backoff_base_s);
    h.get("max_k", c.http.max_k);
    h.get("api_key_env", c.http.api_key_env);
    h.get("max_prompt_bytes", c.http.max_prompt_bytes);
    h.get("feature_dim", c.http_feature_dim);
    h.get("embedding_model", c.embedding_model);
    h.finish();
  }
  {
    auto s = r.child("scripted");
    s.get("script", c.scripted.script);
    s.get("feature_dim", c.scripted.feature_dim);
    s.finish();
  }
  {
    auto s = r.child("synthetic");
    auto& sc = c.synthetic;
    s.get("n_steps_min", sc.n_steps_min);
    s.get("n_steps_max", sc.n_steps_max);
    s.get("feature_dim", sc.feature_dim);
    s.get("validation_size", sc.validation_size);
    s.get("count", c.synthetic_count);
    s.get("start_min", sc.range.start_min);
    s.get("start_max", sc.range.start_max);
    s.get("max_value", sc.range.max_value);
    s.get("add_max", sc.range.add_max);
    s.get("multiply_max", sc.range.multiply_max);
    s.get("p_correct_visible", sc.noise.p_correct_visible);
    s.get("distractor_delta_min", sc.noise.distractor_delta_min);
    s.get("distractor_delta_max", sc.noise.distractor_delta_max);
    s.get("signal_dims", sc.noise.signal_dims);
    s.get("noise_std", sc.noise.noise_std);
    s.finish();
  }
  {
    auto p = r.child("ppo");
    auto& pc = c.train.ppo;
    p.get("learning_rate", pc.learning_rate);
    p.get("batch_size", pc.batch_size);
    p.get("minibatch_size", pc.minibatch_size);
    p.get("clip_epsilon", pc.clip_epsilon);
    p.get("k", pc.k);
    p.get("r_m", pc.r_m);
    p.get("r_f", c.r_f);
    p.get("gamma", pc.gamma);
    p.get("gae_lambda", pc.gae_lambda);
    p.get("update_epochs", pc.update_epochs);
    p.get("value_coef", pc.value_coef);
    p.get("entropy_coef", pc.entropy_coef);
    p.get("max_grad_norm", pc.max_grad_norm);
    p.get("normalize_advantages", pc.normalize_advantages);
    p.get("hidden", pc.hidden);
    p.get("select_decomposer_steps", pc.select_decomposer_steps);
    p.finish();
  }
  {
    auto t = r.child("train");
    t.get("max_updates", c.train.max_updates);
    t.get("patience", c.train.patience);
    t.get("eval_interval", c.train.eval_interval);
    t.get("max_episode_retries", c.train.max_episode_retries);
    t.finish();
  }
  r.finish();
  c.sync();
  c.validate();
  return c;
}

}  // namespace

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::Http: return "http";
    case Backend::Scripted: return "scripted";
    case Backend::Synthetic: return "synthetic";
  }
  return "?";
}

int RunConfig::feature_dim() const {
  switch (backend) {
    case Backend::Http: return http_feature_dim;
    case Backend::Scripted: return scripted.feature_dim;
    case Backend::Synthetic: return synthetic.feature_dim;
  }
  return 0;
}

EpisodeSettings RunConfig::episode_settings() const {
  return EpisodeSettings{rewards(), train.ppo.select_decomposer_steps, replay_gold_rounds};
}

int RunConfig::resolved_workers() const {
  int w = workers > 0 ? workers : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (backend == Backend::Http) w = std::min(w, http.max_in_flight);
  return w;
}

void RunConfig::sync() {
  train.ppo.seed = seed;
  train.workers = resolved_workers();
  synthetic.k = train.ppo.k;
  synthetic.seed = seed;
  synthetic.max_turns = max_turns;
  synthetic.episode = episode_settings();
}

void RunConfig::validate() const {
  if (!(tolerance >= 0.0)) throw ConfigError("tolerance must be nonnegative");
  if (workers < 0) throw ConfigError("workers must be nonnegative");
  if (max_turns < 1) throw ConfigError("max_turns must be at least 1");
  if (out_dir.empty()) throw ConfigError("out must not be empty");
  if (!(r_f >= 0.0)) throw ConfigError("ppo.r_f must be nonnegative");
  if (train.max_updates < 0) throw ConfigError("train.max_updates must be nonnegative");
  if (train.patience < 1) throw ConfigError("train.patience must be at least 1");
  if (train.eval_interval < 1) throw ConfigError("train.eval_interval must be at least 1");
  if (train.max_episode_retries < 1) throw ConfigError("train.max_episode_retries must be at least 1");
  train.ppo.validate();
  switch (backend) {
    case Backend::Http:
      if (http.base_url.empty()) throw ConfigError("http.base_url must not be empty");
      if (http.max_in_flight < 1) throw ConfigError("http.max_in_flight must be at least 1");
      if (http.max_retries < 0) throw ConfigError("http.max_retries must be nonnegative");
      if (http.max_k < 1) throw ConfigError("http.max_k must be at least 1");
      if (http_feature_dim < 1) throw ConfigError("http.feature_dim must be positive");
      if (k() > http.max_k) throw ConfigError("ppo.k exceeds http.max_k");
      break;
    case Backend::Scripted:
      if (scripted.script.empty()) throw ConfigError("scripted.script is required for the scripted backend");
      if (scripted.feature_dim < 1) throw ConfigError("scripted.feature_dim must be positive");
      break;
    case Backend::Synthetic:
      synthetic.validate();
      if (synthetic.range.start_min < 1 || synthetic.range.start_max < synthetic.range.start_min ||
          synthetic.range.max_value < synthetic.range.start_max) {
        throw ConfigError("synthetic needs 1 <= start_min <= start_max <= max_value");
      }
      if (synthetic.range.add_max < 1 || synthetic.range.multiply_max < 2) {
        throw ConfigError("synthetic needs add_max >= 1 and multiply_max >= 2");
      }
      break;
  }
}

RunConfig config_from_text(std::string_view json_text, const std::vector<std::string>& overrides) {
  json doc = json::parse(json_text, nullptr, false, true);
  if (doc.is_discarded()) throw ConfigError("config is not valid JSON");
  if (doc.is_null()) doc = json::object();
  for (const auto& o : overrides) apply_override(doc, o);
  return from_json(doc);
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  if (path.empty()) return config_from_text("{}", overrides);
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_text(ss.str(), overrides);
}

std::string config_to_json(const RunConfig& c) {
  const auto& sc = c.synthetic;
  const auto& pc = c.train.ppo;
  json doc = {
      {"strategy", std::string(1, strategy_letter(c.strategy))},
      {"backend", std::string(backend_name(c.backend))},
      {"seed", c.seed},
      {"tolerance", c.tolerance},
      {"template", c.template_path},
      {"out", c.out_dir},
      {"workers", c.workers},
      {"max_turns", c.max_turns},
      {"replay_gold_rounds", c.replay_gold_rounds},
      {"record_wall_time", c.record_wall_time},
      {"dataset",
       {{"path", c.dataset.path},
        {"validation_path", c.dataset.validation_path},
        {"validation_size", c.dataset.validation_size}}},
      {"http",
       {{"base_url", c.http.base_url},
        {"model", c.http.model},
        {"max_tokens", c.http.max_tokens},
        {"timeout_s", c.http.timeout_s},
        {"max_in_flight", c.http.max_in_flight},
        {"max_retries", c.http.max_retries},
        {"backoff_base_s", c.http.backoff_base_s},
        {"max_k", c.http.max_k},
        {"api_key_env", c.http.api_key_env},
        {"max_prompt_bytes", c.http.max_prompt_bytes},
        {"feature_dim", c.http_feature_dim},
        {"embedding_model", c.embedding_model}}},
      {"scripted", {{"script", c.scripted.script}, {"feature_dim", c.scripted.feature_dim}}},
      {"synthetic",
       {{"n_steps_min", sc.n_steps_min},
        {"n_steps_max", sc.n_steps_max},
        {"feature_dim", sc.feature_dim},
        {"validation_size", sc.validation_size},
        {"count", c.synthetic_count},
        {"start_min", sc.range.start_min},
        {"start_max", sc.range.start_max},
        {"max_value", sc.range.max_value},
        {"add_max", sc.range.add_max},
        {"multiply_max", sc.range.multiply_max},
        {"p_correct_visible", sc.noise.p_correct_visible},
        {"distractor_delta_min", sc.noise.distractor_delta_min},
        {"distractor_delta_max", sc.noise.distractor_delta_max},
        {"signal_dims", sc.noise.signal_dims},
        {"noise_std", sc.noise.noise_std}}},
      {"ppo",
       {{"learning_rate", pc.learning_rate},
        {"batch_size", pc.batch_size},
        {"minibatch_size", pc.minibatch_size},
        {"clip_epsilon", pc.clip_epsilon},
        {"k", pc.k},
        {"r_m", pc.r_m},
        {"r_f", c.r_f},
        {"gamma", pc.gamma},
        {"gae_lambda", pc.gae_lambda},
        {"update_epochs", pc.update_epochs},
        {"value_coef", pc.value_coef},
        {"entropy_coef", pc.entropy_coef},
        {"max_grad_norm", pc.max_grad_norm},
        {"normalize_advantages", pc.normalize_advantages},
        {"hidden", pc.hidden},
        {"select_decomposer_steps", pc.select_decomposer_steps}}},
      {"train",
       {{"max_updates", c.train.max_updates},
        {"patience", c.train.patience},
        {"eval_interval", c.train.eval_interval},
        {"max_episode_retries", c.train.max_episode_retries}}},
  };
  return doc.dump(2);
}

}  // namespace dialcot
