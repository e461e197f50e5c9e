#pragma once

#include <atomic>
#include <memory>
#include <semaphore>
#include <string>

#include "dialcot/generator.hpp"

namespace dialcot {

struct HttpSettings {
  std::string base_url = "http://127.0.0.1:8000";
  std::string model;
  int max_tokens = 256;
  double timeout_s = 60.0;
  int max_in_flight = 8;
  int max_retries = 3;
  double backoff_base_s = 0.5;
  int max_k = 8;
  /// Environment variable holding the bearer token. The token itself is never logged.
  std::string api_key_env = "DIALCOT_API_KEY";
  /// Requests whose prompt exceeds this many bytes fail with PromptTooLong (0 = unlimited).
  std::size_t max_prompt_bytes = 0;
};

/// Completion-server backend: POST {base_url}/v1/completions with n=k.
class HttpGenerator final : public Generator {
 public:
  HttpGenerator(HttpSettings settings, std::shared_ptr<const FeatureExtractor> features);

  GeneratorInfo info() const override;

  std::size_t requests_sent() const { return requests_.load(); }

 protected:
  std::vector<Candidate> generate(const GenerationRequest& request, int k) override;

 private:
  std::string post_once(const std::string& body);

  HttpSettings settings_;
  std::shared_ptr<const FeatureExtractor> features_;
  std::counting_semaphore<1024> in_flight_;
  std::atomic<std::size_t> requests_{0};
  std::atomic<bool> pseudo_logprobs_{false};
};

/// Maps a completions response body to candidates (features left empty).
/// Choices without usable logprobs get -rank, and `used_pseudo` is set.
std::vector<Candidate> parse_completion_choices(const std::string& body, bool& used_pseudo);

/// Feature extractor backed by POST {base_url}/v1/embeddings.
class EmbeddingFeatureExtractor final : public FeatureExtractor {
 public:
  EmbeddingFeatureExtractor(HttpSettings settings, std::string model, int d);

  int dim() const override { return d_; }
  Eigen::VectorXd extract(std::string_view text) const override;
  std::vector<Eigen::VectorXd> extract_all(const std::vector<std::string>& texts) const override;

 private:
  HttpSettings settings_;
  std::string model_;
  int d_;
};

}  // namespace dialcot
