#include "dialcot/generator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "dialcot/errors.hpp"
#include "dialcot/rng.hpp"

namespace dialcot {

std::vector<Eigen::VectorXd> FeatureExtractor::extract_all(const std::vector<std::string>& texts) const {
  std::vector<Eigen::VectorXd> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(extract(t));
  return out;
}

Eigen::VectorXd hash_features(std::string_view text, int d) {
  if (d <= 0) throw PreconditionError("feature dimension must be positive");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(d);
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) {
      // FNV-1a, then a finalizer so bucket and sign use independent bits.
      std::uint64_t h = 0xcbf29ce484222325ULL;
      for (std::size_t t = i; t < j; ++t) {
        h ^= static_cast<unsigned char>(text[t]);
        h *= 0x100000001b3ULL;
      }
      h = splitmix64(h);
      const auto bucket = static_cast<Eigen::Index>((h & 0xFFFFFFFFULL) % static_cast<std::uint64_t>(d));
      v[bucket] += (h >> 63) ? -1.0 : 1.0;
    }
    i = j;
  }
  const double norm = v.norm();
  if (norm > 0.0) v /= norm;
  return v;
}

HashFeatureExtractor::HashFeatureExtractor(int d) : d_(d) {
  if (d <= 0) throw PreconditionError("feature dimension must be positive");
}

std::vector<Candidate> Generator::generate_topk(const GenerationRequest& request, int k) {
  const GeneratorInfo gi = info();
  if (k < 1 || k > gi.max_k) {
    throw PreconditionError("k=" + std::to_string(k) + " outside [1, " + std::to_string(gi.max_k) + "]");
  }
  return finalize_candidates(generate(request, k), k, gi.feature_dim);
}

std::vector<Candidate> Generator::generate_topk(std::string_view prompt, int k) {
  GenerationRequest request;
  request.prompt = std::string(prompt);
  return generate_topk(request, k);
}

std::vector<Candidate> finalize_candidates(std::vector<Candidate> raw, int k, int feature_dim) {
  if (raw.empty()) throw TransportError("generator returned no candidates", false);
  std::stable_sort(raw.begin(), raw.end(),
                   [](const Candidate& a, const Candidate& b) { return a.logprob > b.logprob; });
  std::vector<Candidate> out;
  std::unordered_set<std::string> seen;
  for (auto& c : raw) {
    if (static_cast<int>(out.size()) == k) break;
    if (!seen.insert(c.text).second) continue;
    out.push_back(std::move(c));
  }
  for (const auto& c : out) {
    if (c.features.size() != feature_dim) {
      throw ShapeError("candidate feature dimension " + std::to_string(c.features.size()) +
                       " != " + std::to_string(feature_dim));
    }
    if (!c.features.allFinite() || !std::isfinite(c.logprob)) {
      throw ShapeError("candidate carries non-finite values");
    }
  }
  return out;
}

namespace {

using json = nlohmann::json;

std::vector<ScriptEntry> parse_script(const std::string& text, int feature_dim) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("script is not valid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw ConfigError("script must be a JSON array of entries");
  std::vector<ScriptEntry> entries;
  try {
    for (const auto& item : doc) {
      ScriptEntry e;
      e.match = item.value("match", std::string{});
      e.is_regex = item.value("regex", false);
      if (item.contains("role")) e.role = parse_role(item["role"].get<std::string>());
      e.error = item.value("error", std::string{});
      if (item.contains("candidates")) {
        for (const auto& c : item["candidates"]) {
          Candidate cand;
          cand.text = c.at("text").get<std::string>();
          cand.logprob = c.value("logprob", 0.0);
          if (c.contains("features")) {
            const auto values = c["features"].get<std::vector<double>>();
            cand.features = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
          } else {
            cand.features = hash_features(cand.text, feature_dim);
          }
          e.candidates.push_back(std::move(cand));
        }
      }
      entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed script entry: ") + e.what());
  }
  return entries;
}

}  // namespace

ScriptedGenerator::ScriptedGenerator(std::vector<ScriptEntry> script, int feature_dim, int max_k)
    : feature_dim_(feature_dim), max_k_(max_k) {
  for (auto& e : script) {
    Compiled c{std::move(e), std::nullopt};
    if (c.entry.is_regex) {
      try {
        c.pattern.emplace(c.entry.match);
      } catch (const std::regex_error& err) {
        throw ConfigError("script regex '" + c.entry.match + "': " + err.what());
      }
    }
    script_.push_back(std::move(c));
  }
}

std::unique_ptr<ScriptedGenerator> ScriptedGenerator::from_json_text(const std::string& text, int feature_dim,
                                                                    int max_k) {
  return std::make_unique<ScriptedGenerator>(parse_script(text, feature_dim), feature_dim, max_k);
}

std::unique_ptr<ScriptedGenerator> ScriptedGenerator::from_json_file(const std::string& path, int feature_dim, int max_k) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open script '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str(), feature_dim, max_k);
}

GeneratorInfo ScriptedGenerator::info() const {
  return GeneratorInfo{feature_dim_, max_k_, "scripted", false};
}

std::vector<GenerationRequest> ScriptedGenerator::call_log() const {
  std::lock_guard lock(log_mutex_);
  return log_;
}

std::vector<Candidate> ScriptedGenerator::generate(const GenerationRequest& request, int k) {
  ++calls_;
  {
    std::lock_guard lock(log_mutex_);
    log_.push_back(request);
    log_.back().history = {};  // the turns do not outlive the call
  }
  for (const auto& c : script_) {
    if (c.entry.role && *c.entry.role != request.role) continue;
    const bool hit = c.pattern ? std::regex_search(request.prompt, *c.pattern)
                               : request.prompt.find(c.entry.match) != std::string::npos;
    if (!hit) continue;
    if (c.entry.error == "transport") throw TransportError("scripted transport failure", false);
    if (c.entry.error == "transport-retryable") throw TransportError("scripted transient failure", true, 503);
    if (c.entry.error == "too-long") throw PromptTooLong("scripted prompt too long");
    std::vector<Candidate> out(c.entry.candidates.begin(),
                               c.entry.candidates.begin() +
                                   std::min<std::ptrdiff_t>(k, static_cast<std::ptrdiff_t>(c.entry.candidates.size())));
    return out;
  }
  std::string shown = request.prompt.substr(0, 200);
  throw ScriptMiss("no script entry matches prompt: '" + shown + "'");
}

CallbackGenerator::CallbackGenerator(Fn fn, int feature_dim, int max_k, std::string name)
    : fn_(std::move(fn)), feature_dim_(feature_dim), max_k_(max_k), name_(std::move(name)) {}

GeneratorInfo CallbackGenerator::info() const {
  return GeneratorInfo{feature_dim_, max_k_, name_, false};
}

std::vector<Candidate> CallbackGenerator::generate(const GenerationRequest& request, int k) {
  ++calls_;
  return fn_(request, k);
}

}  // namespace dialcot
