#pragma once

#include <nlohmann/json.hpp>

#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace mohba {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads typed fields out of one JSON object and rejects keys nobody asked
/// for. Errors carry the dotted key path, e.g. "train.batch_size".
class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const std::string& path() const { return path_; }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(key_path(key) + ": " + e.what());
    }
  }

  ConfigReader child(const std::string& key) {
    seen_.insert(key);
    static const nlohmann::json empty = nlohmann::json::object();
    return ConfigReader(j_.contains(key) ? j_.at(key) : empty, key_path(key));
  }

  /// Marks a key as handled without reading it.
  void accept(const std::string& key) { seen_.insert(key); }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError(key_path(key) + ": unknown key");
  }

  void require(bool ok, const std::string& key, const std::string& message) const {
    if (!ok) throw ConfigError(key_path(key) + ": " + message);
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace mohba
