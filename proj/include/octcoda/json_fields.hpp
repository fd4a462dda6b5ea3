#pragma once

// Strict field-by-field reading of JSON config objects. Every error names the
// offending field with its dotted path.

#include <json.hpp>

#include <set>
#include <string>

#include "octcoda/error.hpp"

namespace octcoda {

class FieldReader {
 public:
  FieldReader(const nlohmann::json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) {
      throw Error(ErrorCode::InvalidConfig, "field '" + path_ + "': expected an object");
    }
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) {
    known_.insert(key);
    return obj_.contains(key);
  }

  const nlohmann::json& raw(const std::string& key) {
    known_.insert(key);
    return obj_.at(key);
  }

  /// Overwrites `out` when `key` is present; a type mismatch names the field.
  template <typename T>
  void read(const std::string& key, T& out) {
    known_.insert(key);
    if (!obj_.contains(key)) return;
    try {
      out = obj_.at(key).template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::InvalidConfig,
                  "field '" + name(key) + "': wrong type (got " + obj_.at(key).dump() + ")");
    }
  }

  void reject_unknown() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!known_.count(key)) {
        throw Error(ErrorCode::InvalidConfig, "field '" + name(key) + "': unknown field");
      }
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    throw Error(ErrorCode::InvalidConfig, "field '" + name(key) + "': " + why);
  }

 private:
  const nlohmann::json& obj_;
  std::string path_;
  std::set<std::string> known_;
};

}  // namespace octcoda
