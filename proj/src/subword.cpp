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

#include "nmt/subword.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include "nmt/error.hpp"
#include "nmt/utf8.hpp"

namespace nmt::bpe {

namespace {

std::string pair_key(const std::string& left, const std::string& right) {
  std::string key;
  key.reserve(left.size() + right.size() + 1);
  key += left;
  key.push_back(' ');
  key += right;
  return key;
}

std::vector<std::string> initial_symbols(std::string_view word) {
  std::vector<std::string> symbols = utf8::characters(word);
  if (!symbols.empty()) symbols.back() += kEndOfWord;
  return symbols;
}

void merge_in_place(std::vector<std::string>& symbols, const std::string& left,
                    const std::string& right) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      out.push_back(left + right);
      ++i;
    } else {
      out.push_back(std::move(symbols[i]));
    }
  }
  symbols = std::move(out);
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

// Pair statistics with an ordered index so the best pair is always begin().
class PairStats {
 public:
  void add(const SymbolPair& pair, std::int64_t delta) {
    if (delta == 0) return;
    auto it = counts_.find(pair);
    const std::int64_t old = it == counts_.end() ? 0 : it->second;
    if (old > 0) order_.erase({-old, pair});
    const std::int64_t now = old + delta;
    if (now > 0) {
      counts_[pair] = now;
      order_.insert({-now, pair});
    } else if (it != counts_.end()) {
      counts_.erase(it);
    }
  }

  bool empty() const { return order_.empty(); }
  std::pair<std::int64_t, SymbolPair> best() const {
    const auto& top = *order_.begin();
    return {-top.first, top.second};
  }

 private:
  std::map<SymbolPair, std::int64_t> counts_;
  std::set<std::pair<std::int64_t, SymbolPair>> order_;
};

}  // namespace

SubwordModel::SubwordModel(std::vector<SymbolPair> merges) : merges_(std::move(merges)) {
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    const auto inserted =
        ranks_.emplace(pair_key(merges_[i].first, merges_[i].second), static_cast<std::int64_t>(i));
    if (!inserted.second) {
      throw DataError("duplicate merge '" + merges_[i].first + " " + merges_[i].second + "'");
    }
  }
}

std::int64_t SubwordModel::rank(const std::string& left, const std::string& right) const {
  const auto it = ranks_.find(pair_key(left, right));
  return it == ranks_.end() ? -1 : it->second;
}

std::string SubwordModel::serialize() const {
  std::string out(kFormatTag);
  out.push_back('\n');
  for (const auto& [left, right] : merges_) out += left + " " + right + "\n";
  return out;
}

SubwordModel SubwordModel::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kFormatTag) {
    throw DataError("merge file must start with '" + std::string(kFormatTag) + "'");
  }
  std::vector<SymbolPair> merges;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto space = line.find(' ');
    if (space == std::string::npos || space == 0 || space + 1 >= line.size() ||
        line.find(' ', space + 1) != std::string::npos) {
      throw DataError("merge file line " + std::to_string(line_no) + ": expected 'left right'");
    }
    merges.emplace_back(line.substr(0, space), line.substr(space + 1));
  }
  return SubwordModel(std::move(merges));
}

void SubwordModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << serialize();
  if (!out) throw IoError("failed writing " + path);
}

SubwordModel SubwordModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

SubwordModel learn_bpe(std::span<const std::string> tokens, std::size_t num_merges) {
  if (tokens.empty()) throw DataError("learn_bpe: empty corpus");

  struct Word {
    std::vector<std::string> symbols;
    std::int64_t freq = 0;
  };
  std::vector<Word> words;
  std::unordered_map<std::string, std::size_t> word_index;
  for (const auto& token : tokens) {
    if (token.empty()) continue;
    auto [it, inserted] = word_index.emplace(token, words.size());
    if (inserted) words.push_back({initial_symbols(token), 0});
    ++words[it->second].freq;
  }
  if (words.empty()) throw DataError("learn_bpe: corpus has no words");

  PairStats stats;
  std::map<SymbolPair, std::set<std::size_t>> where;
  auto account = [&](std::size_t w, std::int64_t sign) {
    const auto& syms = words[w].symbols;
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      SymbolPair pair{syms[i], syms[i + 1]};
      stats.add(pair, sign * words[w].freq);
      if (sign > 0) where[pair].insert(w);
    }
  };
  for (std::size_t w = 0; w < words.size(); ++w) account(w, +1);

  std::vector<SymbolPair> merges;
  while (merges.size() < num_merges && !stats.empty()) {
    const auto [count, pair] = stats.best();
    if (count < 2) break;
    merges.push_back(pair);
    const auto affected_it = where.find(pair);
    const std::set<std::size_t> affected = affected_it->second;
    for (std::size_t w : affected) {
      account(w, -1);
      merge_in_place(words[w].symbols, pair.first, pair.second);
      account(w, +1);
    }
    where.erase(pair);
  }
  return SubwordModel(std::move(merges));
}

std::vector<std::string> segment_symbols(std::string_view word, const SubwordModel& model) {
  std::vector<std::string> symbols = initial_symbols(word);
  while (symbols.size() > 1) {
    std::int64_t best_rank = -1;
    std::size_t best_pos = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      const std::int64_t r = model.rank(symbols[i], symbols[i + 1]);
      if (r >= 0 && (best_rank < 0 || r < best_rank)) {
        best_rank = r;
        best_pos = i;
      }
    }
    if (best_rank < 0) break;
    const std::string left = symbols[best_pos];
    const std::string right = symbols[best_pos + 1];
    merge_in_place(symbols, left, right);
  }
  return symbols;
}

std::vector<std::string> apply_bpe(std::string_view word, const SubwordModel& model) {
  std::vector<std::string> symbols = segment_symbols(word, model);
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size()) {
      symbols[i] += kContinuation;
    } else {
      symbols[i].resize(symbols[i].size() - kEndOfWord.size());
    }
  }
  return symbols;
}

std::vector<std::string> apply_bpe_tokens(std::span<const std::string> tokens,
                                          const SubwordModel& model) {
  std::vector<std::string> out;
  for (const auto& token : tokens) {
    auto pieces = apply_bpe(token, model);
    out.insert(out.end(), std::make_move_iterator(pieces.begin()),
               std::make_move_iterator(pieces.end()));
  }
  return out;
}

std::vector<std::string> remove_bpe(std::span<const std::string> subwords) {
  std::vector<std::string> words;
  std::string current;
  bool open = false;
  for (const auto& piece : subwords) {
    if (ends_with(piece, kContinuation)) {
      current.append(piece, 0, piece.size() - kContinuation.size());
      open = true;
    } else {
      current += piece;
      words.push_back(std::move(current));
      current.clear();
      open = false;
    }
  }
  if (open && !current.empty()) words.push_back(std::move(current));
  return words;
}

}  // namespace nmt::bpe
