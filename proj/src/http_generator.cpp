#include "dialcot/http_generator.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <random>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "dialcot/errors.hpp"

namespace dialcot {
namespace {

using json = nlohmann::json;

httplib::Headers auth_headers(const HttpSettings& s) {
  httplib::Headers headers;
  if (!s.api_key_env.empty()) {
    if (const char* key = std::getenv(s.api_key_env.c_str()); key != nullptr && *key != '\0') {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }
  return headers;
}

bool looks_like_length_error(const std::string& body) {
  return body.find("maximum context length") != std::string::npos ||
         body.find("too long") != std::string::npos ||
         body.find("context_length_exceeded") != std::string::npos;
}

// One POST; classifies failures into TransportError / PromptTooLong.
std::string post_json(const HttpSettings& s, const std::string& path, const std::string& body) {
  httplib::Client client(s.base_url);
  const auto timeout = std::chrono::duration<double>(s.timeout_s);
  const auto sec = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  const auto usec = std::chrono::duration_cast<std::chrono::microseconds>(timeout - sec);
  client.set_connection_timeout(sec.count(), usec.count());
  client.set_read_timeout(sec.count(), usec.count());
  client.set_write_timeout(sec.count(), usec.count());

  auto res = client.Post(path, auth_headers(s), body, "application/json");
  if (!res) {
    throw TransportError("request to " + s.base_url + path + " failed: " + httplib::to_string(res.error()),
                         true);
  }
  const int status = res->status;
  if (status >= 200 && status < 300) return res->body;
  if (status == 413 || (status == 400 && looks_like_length_error(res->body))) {
    throw PromptTooLong("server rejected prompt length (HTTP " + std::to_string(status) + ")");
  }
  const bool retryable = status == 429 || status >= 500;
  throw TransportError("HTTP " + std::to_string(status) + " from " + s.base_url + path, retryable, status);
}

template <typename Fn>
auto with_retries(const HttpSettings& s, Fn&& fn) {
  thread_local std::mt19937_64 jitter(std::random_device{}());
  for (int attempt = 0;; ++attempt) {
    try {
      return fn();
    } catch (const TransportError& e) {
      if (!e.retryable() || attempt >= s.max_retries) throw;
      std::uniform_real_distribution<double> scale(0.5, 1.0);
      const double wait = s.backoff_base_s * std::ldexp(1.0, attempt) * scale(jitter);
      std::this_thread::sleep_for(std::chrono::duration<double>(wait));
    }
  }
}

double sum_logprobs(const json& lp, bool& ok) {
  ok = false;
  if (lp.is_number()) {
    ok = true;
    return lp.get<double>();
  }
  if (!lp.is_object()) return 0.0;
  // OpenAI legacy completions: {"token_logprobs": [...]}.
  if (lp.contains("token_logprobs") && lp["token_logprobs"].is_array()) {
    double total = 0.0;
    for (const auto& v : lp["token_logprobs"]) {
      if (v.is_number()) total += v.get<double>();
    }
    ok = !lp["token_logprobs"].empty();
    return total;
  }
  // Chat-style: {"content": [{"logprob": ...}, ...]}.
  if (lp.contains("content") && lp["content"].is_array()) {
    double total = 0.0;
    for (const auto& t : lp["content"]) {
      if (t.contains("logprob") && t["logprob"].is_number()) total += t["logprob"].get<double>();
    }
    ok = !lp["content"].empty();
    return total;
  }
  return 0.0;
}

}  // namespace

std::vector<Candidate> parse_completion_choices(const std::string& body, bool& used_pseudo) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    throw TransportError(std::string("malformed completion response: ") + e.what(), false);
  }
  if (!doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty()) {
    throw TransportError("completion response has no choices", false);
  }
  const auto& choices = doc["choices"];
  std::vector<Candidate> out;
  out.reserve(choices.size());
  bool all_have_logprobs = true;
  for (const auto& choice : choices) {
    Candidate c;
    c.text = choice.value("text", std::string{});
    bool ok = false;
    if (choice.contains("logprobs") && !choice["logprobs"].is_null()) {
      c.logprob = sum_logprobs(choice["logprobs"], ok);
    }
    all_have_logprobs = all_have_logprobs && ok;
    out.push_back(std::move(c));
  }
  used_pseudo = !all_have_logprobs;
  if (used_pseudo) {
    // Server order stands in for probability order.
    for (std::size_t i = 0; i < out.size(); ++i) out[i].logprob = -static_cast<double>(i);
  }
  return out;
}

HttpGenerator::HttpGenerator(HttpSettings settings, std::shared_ptr<const FeatureExtractor> features)
    : settings_(std::move(settings)),
      features_(std::move(features)),
      in_flight_(std::max(1, settings_.max_in_flight)) {
  if (!features_) throw ConfigError("HTTP generator needs a feature extractor");
}

GeneratorInfo HttpGenerator::info() const {
  return GeneratorInfo{features_->dim(), settings_.max_k, "http", pseudo_logprobs_.load()};
}

std::string HttpGenerator::post_once(const std::string& body) {
  ++requests_;
  in_flight_.acquire();
  try {
    std::string response = post_json(settings_, "/v1/completions", body);
    in_flight_.release();
    return response;
  } catch (...) {
    in_flight_.release();
    throw;
  }
}

std::vector<Candidate> HttpGenerator::generate(const GenerationRequest& request, int k) {
  if (settings_.max_prompt_bytes > 0 && request.prompt.size() > settings_.max_prompt_bytes) {
    throw PromptTooLong("prompt of " + std::to_string(request.prompt.size()) + " bytes exceeds limit " +
                        std::to_string(settings_.max_prompt_bytes));
  }
  json body = {{"model", settings_.model},       {"prompt", request.prompt},
               {"n", k},                         {"max_tokens", settings_.max_tokens},
               {"temperature", 0},               {"logprobs", true}};
  const std::string payload = body.dump();
  const std::string response = with_retries(settings_, [&] { return post_once(payload); });

  bool used_pseudo = false;
  std::vector<Candidate> candidates = parse_completion_choices(response, used_pseudo);
  if (used_pseudo) pseudo_logprobs_ = true;

  std::vector<std::string> texts;
  texts.reserve(candidates.size());
  for (const auto& c : candidates) texts.push_back(c.text);
  auto features = features_->extract_all(texts);
  for (std::size_t i = 0; i < candidates.size(); ++i) candidates[i].features = std::move(features[i]);
  return candidates;
}

EmbeddingFeatureExtractor::EmbeddingFeatureExtractor(HttpSettings settings, std::string model, int d)
    : settings_(std::move(settings)), model_(std::move(model)), d_(d) {
  if (d <= 0) throw ConfigError("embedding dimension must be positive");
}

Eigen::VectorXd EmbeddingFeatureExtractor::extract(std::string_view text) const {
  return extract_all({std::string(text)}).front();
}

std::vector<Eigen::VectorXd> EmbeddingFeatureExtractor::extract_all(const std::vector<std::string>& texts) const {
  const json body = {{"model", model_}, {"input", texts}};
  const std::string payload = body.dump();
  const std::string response =
      with_retries(settings_, [&] { return post_json(settings_, "/v1/embeddings", payload); });
  json doc;
  try {
    doc = json::parse(response);
  } catch (const json::parse_error& e) {
    throw TransportError(std::string("malformed embedding response: ") + e.what(), false);
  }
  if (!doc.contains("data") || !doc["data"].is_array() || doc["data"].size() != texts.size()) {
    throw TransportError("embedding response does not match the request", false);
  }
  std::vector<Eigen::VectorXd> out(texts.size());
  for (const auto& item : doc["data"]) {
    const std::size_t index = item.value("index", std::size_t{0});
    const auto values = item.at("embedding").get<std::vector<double>>();
    if (index >= out.size()) throw TransportError("embedding index out of range", false);
    if (static_cast<int>(values.size()) != d_) {
      throw ShapeError("embedding dimension " + std::to_string(values.size()) + " != configured " +
                       std::to_string(d_));
    }
    out[index] = Eigen::Map<const Eigen::VectorXd>(values.data(), d_);
  }
  return out;
}

}  // namespace dialcot
