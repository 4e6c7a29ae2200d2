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
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace nmt {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kBosId = 2;
inline constexpr int kEosId = 3;
inline constexpr int kMaskId = 4;
inline constexpr int kNumSpecials = 5;

class Vocabulary {
 public:
  Vocabulary();

  // Most frequent tokens first, ties in order of first occurrence. The budget
  // counts the special symbols.
  static Vocabulary build(std::span<const std::vector<std::string>> sentences,
                          std::size_t size_budget);

  std::size_t size() const { return tokens_.size(); }
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  int id(const std::string& token) const;  // UNK when absent
  const std::string& token(int id) const;  // IndexError when out of range
  std::int64_t count(int id) const { return counts_.at(static_cast<std::size_t>(id)); }

  std::vector<int> encode(std::span<const std::string> tokens) const;
  // Special ids other than UNK are skipped.
  std::vector<std::string> decode(std::span<const int> ids) const;

  // `token<TAB>count` per line, specials excluded.
  std::string serialize() const;
  static Vocabulary parse(std::string_view text);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);
  // SHA-256 of the serialized file.
  std::string hash() const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  void add(const std::string& token, std::int64_t count);

  std::vector<std::string> tokens_;
  std::vector<std::int64_t> counts_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace nmt
