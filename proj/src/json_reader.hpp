#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "dialcot/errors.hpp"

namespace dialcot::detail {

/// Reads fields from one JSON object and rejects keys nobody asked for.
class JsonReader {
 public:
  JsonReader(const nlohmann::json& object, std::string path) : object_(object), path_(std::move(path)) {
    if (!object_.is_object()) throw ConfigError(where() + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!object_.contains(key)) return;
    try {
      out = object_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(field(key) + ": " + e.what());
    }
  }

  bool has(const char* key) const { return object_.contains(key); }

  JsonReader child(const char* key) {
    seen_.insert(key);
    static const nlohmann::json empty = nlohmann::json::object();
    return JsonReader(object_.contains(key) ? object_.at(key) : empty, field(key));
  }

  void finish() const {
    for (const auto& [key, value] : object_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key '" + field(key.c_str()) + "'");
    }
  }

  std::string field(const char* key) const { return path_.empty() ? std::string(key) : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? std::string("config") : path_; }

  const nlohmann::json& object_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace dialcot::detail
