#pragma once

#include <nlohmann/json.hpp>
#include <set>
#include <string>

#include "seqrisk/core.hpp"

SEQRISK_BEGIN_NAMESPACE

/// Reads optional fields of a JSON object, reporting type errors and unknown
/// keys as ConfigError with a dotted field path.
class JsonFields {
 public:
  JsonFields(const nlohmann::json& object, std::string path) : object_(object), path_(std::move(path)) {
    if (!object_.is_object()) throw ConfigError(path_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const char* name, T& out) {
    seen_.insert(name);
    auto it = object_.find(name);
    if (it == object_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(field(name) + ": " + e.what());
    }
  }

  bool has(const char* name) const { return object_.contains(name); }
  // Marks a field the caller parses itself; returns whether it is present.
  bool take(const char* name) {
    seen_.insert(name);
    return has(name);
  }
  std::string field(const char* name) const { return path_.empty() ? name : path_ + "." + name; }

  void reject_unknown() const {
    for (auto it = object_.begin(); it != object_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(field(it.key().c_str()) + ": unknown field");
    }
  }

 private:
  const nlohmann::json& object_;
  std::string path_;
  std::set<std::string> seen_;
};

SEQRISK_END_NAMESPACE
