#pragma once

#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace advlab::tools {

/// Bad config or bad request: exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Strict view of one JSON object. Every key must be read before done(),
/// otherwise done() reports the first unread key.
class Fields {
 public:
  Fields(const nlohmann::json& j, std::string where);

  bool has(const std::string& key) const { return j_->contains(key); }
  double number(const std::string& key, std::optional<double> fallback = std::nullopt);
  long integer(const std::string& key, std::optional<long> fallback = std::nullopt);
  bool boolean(const std::string& key, std::optional<bool> fallback = std::nullopt);
  std::string text(const std::string& key, std::optional<std::string> fallback = std::nullopt);
  std::vector<double> numbers(const std::string& key, std::optional<std::vector<double>> fallback = std::nullopt);
  std::vector<long> integers(const std::string& key, std::optional<std::vector<long>> fallback = std::nullopt);
  Fields object(const std::string& key);
  /// Object that may be absent; an absent key reads as {}.
  Fields object_or_empty(const std::string& key);
  const nlohmann::json& raw(const std::string& key);
  void done() const;

  const std::string& where() const { return where_; }

 private:
  const nlohmann::json& take(const std::string& key);
  [[noreturn]] void fail(const std::string& key, const std::string& what) const;

  const nlohmann::json* j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace advlab::tools
