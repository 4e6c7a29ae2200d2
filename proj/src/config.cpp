/* Copyright 2026 The lmembed-nmt Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "nmt/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "nmt/error.hpp"

namespace nmt {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

ConfigReader::ConfigReader(std::map<std::string, std::string> values, std::string origin,
                           std::filesystem::path base_dir)
    : values_(std::move(values)), origin_(std::move(origin)), base_dir_(std::move(base_dir)) {}

ConfigReader ConfigReader::parse(std::string_view text, const std::string& origin,
                                 std::filesystem::path base_dir) {
  std::map<std::string, std::string> values;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (!values.emplace(key, value).second) throw ConfigError(where + ": duplicate key '" + key + "'");
  }
  return ConfigReader(std::move(values), origin, std::move(base_dir));
}

ConfigReader ConfigReader::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path.string(), path.parent_path());
}

const std::string* ConfigReader::lookup(const std::string& key) {
  used_.insert(key);
  const auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

void ConfigReader::bad_value(const std::string& key, const std::string& expected) const {
  throw ConfigError(origin_ + ": key '" + key + "' must be " + expected + ", got '" +
                    values_.at(key) + "'");
}

std::string ConfigReader::get_string(const std::string& key, const std::string& fallback) {
  const auto* v = lookup(key);
  return v ? *v : fallback;
}

std::string ConfigReader::require_string(const std::string& key) {
  const auto* v = lookup(key);
  if (!v) throw ConfigError(origin_ + ": missing required key '" + key + "'");
  return *v;
}

std::uint64_t ConfigReader::get_u64(const std::string& key, std::uint64_t fallback) {
  const auto* v = lookup(key);
  if (!v) return fallback;
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size()) bad_value(key, "a non-negative integer");
  return out;
}

std::size_t ConfigReader::get_size(const std::string& key, std::size_t fallback) {
  return static_cast<std::size_t>(get_u64(key, fallback));
}

double ConfigReader::get_double(const std::string& key, double fallback) {
  const auto* v = lookup(key);
  if (!v) return fallback;
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size() || !std::isfinite(out)) {
    bad_value(key, "a finite number");
  }
  return out;
}

bool ConfigReader::get_bool(const std::string& key, bool fallback) {
  const auto* v = lookup(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  bad_value(key, "true or false");
}

std::filesystem::path ConfigReader::get_path(const std::string& key,
                                             const std::filesystem::path& fallback) {
  const auto* v = lookup(key);
  if (!v) return fallback;
  const std::filesystem::path p(*v);
  return p.is_absolute() || base_dir_.empty() ? p : (base_dir_ / p).lexically_normal();
}

std::filesystem::path ConfigReader::require_path(const std::string& key) {
  if (!has(key)) throw ConfigError(origin_ + ": missing required key '" + key + "'");
  return get_path(key, {});
}

void ConfigReader::finish() const {
  for (const auto& [key, value] : values_) {
    if (!used_.count(key)) throw ConfigError(origin_ + ": unknown key '" + key + "'");
  }
}

std::string format_config(const std::map<std::string, std::string>& values) {
  std::string out;
  for (const auto& [key, value] : values) out += key + " = " + value + "\n";
  return out;
}

}  // namespace nmt
