#include "config_reader.hpp"

#include <cmath>

namespace advlab::tools {

namespace {

const nlohmann::json& empty_object() {
  static const nlohmann::json j = nlohmann::json::object();
  return j;
}

}  // namespace

Fields::Fields(const nlohmann::json& j, std::string where) : j_(&j), where_(std::move(where)) {
  if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
}

void Fields::fail(const std::string& key, const std::string& what) const {
  throw ConfigError(where_ + "." + key + ": " + what);
}

const nlohmann::json& Fields::take(const std::string& key) {
  seen_.insert(key);
  return j_->at(key);
}

double Fields::number(const std::string& key, std::optional<double> fallback) {
  if (!has(key)) {
    if (!fallback) fail(key, "required");
    return *fallback;
  }
  const auto& v = take(key);
  if (!v.is_number()) fail(key, "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) fail(key, "must be finite");
  return x;
}

long Fields::integer(const std::string& key, std::optional<long> fallback) {
  if (!has(key)) {
    if (!fallback) fail(key, "required");
    return *fallback;
  }
  const auto& v = take(key);
  if (!v.is_number_integer()) fail(key, "expected an integer");
  return v.get<long>();
}

bool Fields::boolean(const std::string& key, std::optional<bool> fallback) {
  if (!has(key)) {
    if (!fallback) fail(key, "required");
    return *fallback;
  }
  const auto& v = take(key);
  if (!v.is_boolean()) fail(key, "expected true or false");
  return v.get<bool>();
}

std::string Fields::text(const std::string& key, std::optional<std::string> fallback) {
  if (!has(key)) {
    if (!fallback) fail(key, "required");
    return *fallback;
  }
  const auto& v = take(key);
  if (!v.is_string()) fail(key, "expected a string");
  return v.get<std::string>();
}

std::vector<double> Fields::numbers(const std::string& key, std::optional<std::vector<double>> fallback) {
  if (!has(key)) {
    if (!fallback) fail(key, "required");
    return *fallback;
  }
  const auto& v = take(key);
  if (!v.is_array()) fail(key, "expected an array of numbers");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number() || !std::isfinite(e.get<double>())) fail(key, "expected an array of finite numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

std::vector<long> Fields::integers(const std::string& key, std::optional<std::vector<long>> fallback) {
  if (!has(key)) {
    if (!fallback) fail(key, "required");
    return *fallback;
  }
  const auto& v = take(key);
  if (!v.is_array()) fail(key, "expected an array of integers");
  std::vector<long> out;
  for (const auto& e : v) {
    if (!e.is_number_integer()) fail(key, "expected an array of integers");
    out.push_back(e.get<long>());
  }
  return out;
}

Fields Fields::object(const std::string& key) {
  if (!has(key)) fail(key, "required");
  const auto& v = take(key);
  if (!v.is_object()) fail(key, "expected an object");
  return Fields(v, where_ + "." + key);
}

Fields Fields::object_or_empty(const std::string& key) {
  if (!has(key)) return Fields(empty_object(), where_ + "." + key);
  return object(key);
}

const nlohmann::json& Fields::raw(const std::string& key) {
  if (!has(key)) fail(key, "required");
  return take(key);
}

void Fields::done() const {
  for (const auto& [key, value] : j_->items()) {
    if (!seen_.count(key)) throw ConfigError(where_ + "." + key + ": unknown key");
  }
}

}  // namespace advlab::tools
