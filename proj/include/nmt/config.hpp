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

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>

namespace nmt {

// Flat `key = value` settings with `#` comments. Every lookup marks its key as
// used; finish() rejects keys that were never looked up.
class ConfigReader {
 public:
  ConfigReader() = default;
  ConfigReader(std::map<std::string, std::string> values, std::string origin,
               std::filesystem::path base_dir = {});

  static ConfigReader parse(std::string_view text, const std::string& origin,
                            std::filesystem::path base_dir = {});
  static ConfigReader load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get_string(const std::string& key, const std::string& fallback);
  std::string require_string(const std::string& key);
  std::size_t get_size(const std::string& key, std::size_t fallback);
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
  double get_double(const std::string& key, double fallback);
  bool get_bool(const std::string& key, bool fallback);
  // Relative paths are resolved against the directory of the config file.
  std::filesystem::path get_path(const std::string& key, const std::filesystem::path& fallback);
  std::filesystem::path require_path(const std::string& key);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void finish() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  const std::string* lookup(const std::string& key);
  [[noreturn]] void bad_value(const std::string& key, const std::string& expected) const;

  std::map<std::string, std::string> values_;
  std::set<std::string> used_;
  std::string origin_;
  std::filesystem::path base_dir_;
};

// Canonical text form: sorted `key = value` lines.
std::string format_config(const std::map<std::string, std::string>& values);

}  // namespace nmt
