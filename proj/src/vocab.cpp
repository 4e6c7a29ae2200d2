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

#include "nmt/vocab.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "nmt/error.hpp"
#include "nmt/hash.hpp"

namespace nmt {

namespace {

constexpr const char* kSpecialTokens[kNumSpecials] = {"<pad>", "<unk>", "<s>", "</s>", "<mask>"};

}  // namespace

Vocabulary::Vocabulary() {
  for (const char* special : kSpecialTokens) add(special, 0);
}

void Vocabulary::add(const std::string& token, std::int64_t count) {
  const auto inserted = ids_.emplace(token, static_cast<int>(tokens_.size()));
  if (!inserted.second) throw DataError("duplicate vocabulary token '" + token + "'");
  tokens_.push_back(token);
  counts_.push_back(count);
}

Vocabulary Vocabulary::build(std::span<const std::vector<std::string>> sentences,
                             std::size_t size_budget) {
  if (size_budget < kNumSpecials) {
    throw ConfigError("vocabulary budget " + std::to_string(size_budget) +
                      " is smaller than the " + std::to_string(kNumSpecials) + " special symbols");
  }
  Vocabulary vocab;
  struct Entry {
    std::string token;
    std::int64_t count = 0;
    std::size_t first = 0;
  };
  std::vector<Entry> entries;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& sentence : sentences) {
    for (const auto& token : sentence) {
      if (vocab.contains(token)) continue;
      auto [it, inserted] = index.emplace(token, entries.size());
      if (inserted) entries.push_back({token, 0, entries.size()});
      ++entries[it->second].count;
    }
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const Entry& a, const Entry& b) { return a.count > b.count; });
  const std::size_t keep = std::min(entries.size(), size_budget - kNumSpecials);
  for (std::size_t i = 0; i < keep; ++i) vocab.add(entries[i].token, entries[i].count);
  return vocab;
}

int Vocabulary::id(const std::string& token) const {
  const auto it = ids_.find(token);
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocabulary::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) {
    const std::string& t = token(i);
    if (i < kNumSpecials && i != kUnkId) continue;
    out.push_back(t);
  }
  return out;
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (std::size_t i = kNumSpecials; i < tokens_.size(); ++i) {
    out += tokens_[i];
    out.push_back('\t');
    out += std::to_string(counts_[i]);
    out.push_back('\n');
  }
  return out;
}

Vocabulary Vocabulary::parse(std::string_view text) {
  Vocabulary vocab;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    std::int64_t count = 0;
    if (tab == std::string_view::npos || tab == 0) {
      throw DataError("vocabulary line " + std::to_string(line_no) + ": expected 'token<TAB>count'");
    }
    const auto digits = line.substr(tab + 1);
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), count);
    if (ec != std::errc() || ptr != digits.data() + digits.size()) {
      throw DataError("vocabulary line " + std::to_string(line_no) + ": bad count");
    }
    vocab.add(std::string(line.substr(0, tab)), count);
  }
  return vocab;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << serialize();
  if (!out) throw IoError("failed writing " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

std::string Vocabulary::hash() const { return sha256_hex(serialize()); }

}  // namespace nmt
