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

#include "nmt/textpipe.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <sstream>

#include "nmt/error.hpp"
#include "nmt/utf8.hpp"

namespace nmt::text {

namespace {

struct Replacement {
  char32_t from;
  const char32_t* to;
};

// Punctuation normalization table, rule set v1. Keep in sync with
// docs/text-rules.md.
constexpr std::array<Replacement, 31> kReplacements{{
    {0x201C, U"\""},
    {0x201D, U"\""},
    {0x201E, U"\""},
    {0x201F, U"\""},
    {0x00AB, U"\""},
    {0x00BB, U"\""},
    {0x2033, U"\""},
    {0x2018, U"'"},
    {0x2019, U"'"},
    {0x201A, U"'"},
    {0x201B, U"'"},
    {0x2032, U"'"},
    {0x00B4, U"'"},
    {0x0060, U"'"},
    {0x2039, U"'"},
    {0x203A, U"'"},
    {0x2010, U"-"},
    {0x2011, U"-"},
    {0x2012, U"-"},
    {0x2013, U"-"},
    {0x2014, U"-"},
    {0x2015, U"-"},
    {0x2212, U"-"},
    {0x2026, U"..."},
    {0x2022, U"*"},
    {0xFF0C, U","},
    {0xFF0E, U"."},
    {0xFF1A, U":"},
    {0xFF1B, U";"},
    {0xFF01, U"!"},
    {0xFF1F, U"?"},
}};

bool is_removed(char32_t cp) {
  if (cp == U'\n') return false;
  if (cp < 0x20 && cp != U'\t') return true;
  if (cp == 0x7F || (cp >= 0x80 && cp <= 0x9F)) return true;
  // Zero-width and invisible formatting characters.
  return cp == 0x00AD || (cp >= 0x200B && cp <= 0x200F) || cp == 0x2060 || cp == 0xFEFF;
}

bool is_space(char32_t cp) {
  return cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r' || cp == 0x0B || cp == 0x0C ||
         cp == 0xA0 || (cp >= 0x2000 && cp <= 0x200A) || cp == 0x202F || cp == 0x205F ||
         cp == 0x3000;
}

bool is_punct(char32_t cp) {
  if (cp < 0x80) {
    return (cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) || (cp >= 0x5B && cp <= 0x60) ||
           (cp >= 0x7B && cp <= 0x7E);
  }
  switch (cp) {
    case 0xA1: case 0xA3: case 0xA5: case 0xA7: case 0xB0: case 0xB6: case 0xB7: case 0xBF:
    case 0x20AC: case 0x2022:
      return true;
    default:
      return false;
  }
}

bool is_word_char(char32_t cp) { return !is_space(cp) && !is_punct(cp); }
bool is_digit(char32_t cp) { return cp >= U'0' && cp <= U'9'; }
bool is_ascii_alpha(char32_t cp) { return (cp >= U'a' && cp <= U'z') || (cp >= U'A' && cp <= U'Z'); }

// [+-]?digits([.,:/]digits)*
bool is_number(std::u32string_view s) {
  std::size_t i = 0;
  if (!s.empty() && (s[0] == U'+' || s[0] == U'-')) ++i;
  bool need_digit = true;
  if (i >= s.size()) return false;
  for (; i < s.size(); ++i) {
    if (is_digit(s[i])) {
      need_digit = false;
    } else if (!need_digit && (s[i] == U'.' || s[i] == U',' || s[i] == U':' || s[i] == U'/')) {
      need_digit = true;
    } else {
      return false;
    }
  }
  return !need_digit;
}

bool starts_with_ci(std::u32string_view s, std::u32string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    char32_t c = s[i];
    if (c >= U'A' && c <= U'Z') c = c - U'A' + U'a';
    if (c != prefix[i]) return false;
  }
  return true;
}

bool is_url(std::u32string_view s) {
  for (std::u32string_view prefix : {std::u32string_view(U"http://"), std::u32string_view(U"https://"),
                                     std::u32string_view(U"www.")}) {
    if (starts_with_ci(s, prefix) && s.size() > prefix.size() && is_word_char(s.back())) return true;
  }
  return false;
}

bool is_email(std::u32string_view s) {
  const auto at = s.find(U'@');
  if (at == std::u32string_view::npos || at == 0 || s.find(U'@', at + 1) != std::u32string_view::npos) {
    return false;
  }
  const auto domain = s.substr(at + 1);
  const auto dot = domain.rfind(U'.');
  if (dot == std::u32string_view::npos || dot == 0) return false;
  const auto tld = domain.substr(dot + 1);
  if (tld.size() < 2) return false;
  for (char32_t c : tld) {
    if (!is_ascii_alpha(c)) return false;
  }
  return is_word_char(s.front());
}

bool is_protected(std::u32string_view s) { return is_number(s) || is_url(s) || is_email(s); }

bool is_connector(char32_t prev, char32_t cp, char32_t next) {
  if (!is_word_char(prev) || !is_word_char(next)) return false;
  switch (cp) {
    case U'-': case U'\'': case U'.': case U'/': case U'&': case U'_': case U'@':
      return true;
    case U',': case U':':
      return is_digit(prev) && is_digit(next);
    default:
      return false;
  }
}

// Length of the run of identical characters starting at `pos`.
std::size_t run_forward(std::u32string_view s, std::size_t pos) {
  std::size_t n = 1;
  while (pos + n < s.size() && s[pos + n] == s[pos]) ++n;
  return n;
}

void split_core(std::u32string_view core, Tokens& out) {
  std::u32string word;
  std::size_t i = 0;
  while (i < core.size()) {
    const char32_t cp = core[i];
    if (is_word_char(cp)) {
      word.push_back(cp);
      ++i;
      continue;
    }
    if (!word.empty() && i + 1 < core.size() && is_connector(word.back(), cp, core[i + 1])) {
      word.push_back(cp);
      ++i;
      continue;
    }
    if (!word.empty()) out.push_back(utf8::encode(word));
    word.clear();
    const std::size_t n = run_forward(core, i);
    out.push_back(utf8::encode(core.substr(i, n)));
    i += n;
  }
  if (!word.empty()) out.push_back(utf8::encode(word));
}

void tokenize_chunk(std::u32string_view chunk, Tokens& out) {
  if (is_protected(chunk)) {
    out.push_back(utf8::encode(chunk));
    return;
  }
  std::u32string_view core = chunk;
  while (!core.empty() && is_punct(core.front()) && !is_protected(core)) {
    const std::size_t n = run_forward(core, 0);
    out.push_back(utf8::encode(core.substr(0, n)));
    core.remove_prefix(n);
  }
  Tokens trailing;
  while (!core.empty() && is_punct(core.back()) && !is_protected(core)) {
    std::size_t n = 1;
    while (n < core.size() && core[core.size() - 1 - n] == core.back()) ++n;
    trailing.push_back(utf8::encode(core.substr(core.size() - n)));
    core.remove_suffix(n);
  }
  if (!core.empty()) {
    if (is_protected(core)) {
      out.push_back(utf8::encode(core));
    } else {
      split_core(core, out);
    }
  }
  out.insert(out.end(), trailing.rbegin(), trailing.rend());
}

enum class Attach { none, left, right, quote };

Attach attachment(const std::string& token) {
  const auto cps = utf8::decode(token);
  if (!cps || cps->empty()) return Attach::none;
  const char32_t c = cps->front();
  if (!std::all_of(cps->begin(), cps->end(), [c](char32_t x) { return x == c; })) return Attach::none;
  switch (c) {
    case U',': case U'.': case U'!': case U'?': case U';': case U':': case U'%': case U')':
    case U']': case U'}':
      return Attach::left;
    case U'(': case U'[': case U'{': case U'$': case U'#': case 0x20AC: case 0xA3: case 0xA5:
    case 0xBF: case 0xA1:
      return Attach::right;
    case U'"': case U'\'':
      return cps->size() == 1 ? Attach::quote : Attach::none;
    default:
      return Attach::none;
  }
}

}  // namespace

void CleanReport::record(CleanDecision decision) {
  ++input_pairs;
  switch (decision) {
    case CleanDecision::keep: ++kept_pairs; break;
    case CleanDecision::drop_empty: ++dropped_empty; break;
    case CleanDecision::drop_length: ++dropped_by_length; break;
    case CleanDecision::drop_ratio: ++dropped_by_ratio; break;
  }
}

std::string CleanReport::format() const {
  std::ostringstream out;
  out << "input_pairs:" << input_pairs << '\n'
      << "kept_pairs:" << kept_pairs << '\n'
      << "dropped_by_length:" << dropped_by_length << '\n'
      << "dropped_by_ratio:" << dropped_by_ratio << '\n'
      << "dropped_empty:" << dropped_empty << '\n';
  return out.str();
}

std::string normalize(std::string_view line, std::size_t line_number) {
  const auto decoded = utf8::decode(line);
  if (!decoded) throw DataError("line " + std::to_string(line_number) + ": invalid UTF-8");
  std::u32string mapped;
  mapped.reserve(decoded->size());
  for (char32_t cp : *decoded) {
    if (is_removed(cp)) continue;
    const auto it = std::find_if(kReplacements.begin(), kReplacements.end(),
                                 [cp](const Replacement& r) { return r.from == cp; });
    if (it != kReplacements.end()) {
      mapped += it->to;
    } else if (is_space(cp) && cp != U'\n') {
      mapped.push_back(U' ');
    } else {
      mapped.push_back(cp);
    }
  }
  std::u32string collapsed;
  for (char32_t cp : mapped) {
    if (cp == U' ' && (collapsed.empty() || collapsed.back() == U' ')) continue;
    collapsed.push_back(cp);
  }
  while (!collapsed.empty() && collapsed.back() == U' ') collapsed.pop_back();
  return utf8::encode(collapsed);
}

Tokens tokenize(std::string_view text) {
  const auto decoded = utf8::decode(text);
  if (!decoded) throw DataError("tokenize: invalid UTF-8");
  Tokens out;
  std::u32string_view rest = *decoded;
  std::size_t i = 0;
  while (i < rest.size()) {
    while (i < rest.size() && is_space(rest[i])) ++i;
    std::size_t j = i;
    while (j < rest.size() && !is_space(rest[j])) ++j;
    if (j > i) tokenize_chunk(rest.substr(i, j - i), out);
    i = j;
  }
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  bool glue_next = true;  // no space before the first token
  std::map<std::string, bool> quote_open;
  for (const auto& token : tokens) {
    Attach a = attachment(token);
    if (a == Attach::quote) {
      bool& open = quote_open[token];
      a = open ? Attach::left : Attach::right;
      open = !open;
    }
    if (!glue_next && a != Attach::left) out.push_back(' ');
    out += token;
    glue_next = a == Attach::right;
  }
  return out;
}

Tokens split_whitespace(std::string_view line) {
  Tokens out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r' || line[i] == '\n')) ++i;
    std::size_t j = i;
    while (j < line.size() && !(line[j] == ' ' || line[j] == '\t' || line[j] == '\r' || line[j] == '\n')) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join(std::span<const std::string> tokens, std::string_view separator) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += separator;
    out += tokens[i];
  }
  return out;
}

CleanDecision clean_lengths(std::size_t source_len, std::size_t target_len,
                            const CleanOptions& options) {
  if (source_len == 0 || target_len == 0) return CleanDecision::drop_empty;
  if (source_len > options.max_len || target_len > options.max_len) return CleanDecision::drop_length;
  const auto longer = static_cast<double>(std::max(source_len, target_len));
  const auto shorter = static_cast<double>(std::min(source_len, target_len));
  if (longer > options.max_ratio * shorter) return CleanDecision::drop_ratio;
  return CleanDecision::keep;
}

CleanDecision clean_pair(const SentencePair& pair, const CleanOptions& options) {
  return clean_lengths(pair.source.size(), pair.target.size(), options);
}

CleanResult clean_corpus(std::span<const SentencePair> pairs, const CleanOptions& options) {
  CleanResult result;
  for (const auto& pair : pairs) {
    const CleanDecision d = clean_pair(pair, options);
    result.report.record(d);
    if (d == CleanDecision::keep) result.kept.push_back(pair);
  }
  return result;
}

CleanResult preprocess_corpus(std::span<const std::string> source_lines,
                              std::span<const std::string> target_lines,
                              const CleanOptions& options) {
  if (source_lines.size() != target_lines.size()) {
    throw DataError("parallel files differ in length: " + std::to_string(source_lines.size()) +
                    " source vs " + std::to_string(target_lines.size()) + " target lines");
  }
  CleanResult result;
  for (std::size_t i = 0; i < source_lines.size(); ++i) {
    SentencePair pair;
    pair.line_number = i + 1;
    const std::string src = normalize(source_lines[i], i + 1);
    const std::string tgt = normalize(target_lines[i], i + 1);
    pair.source = tokenize(src);
    pair.target = tokenize(tgt);
    CleanDecision d;
    if (options.unit == LengthUnit::words) {
      const std::size_t src_words = split_whitespace(src).size();
      const std::size_t tgt_words = split_whitespace(tgt).size();
      d = clean_lengths(src_words, tgt_words, options);
    } else {
      d = clean_pair(pair, options);
    }
    result.report.record(d);
    if (d == CleanDecision::keep) result.kept.push_back(std::move(pair));
  }
  return result;
}

const char* to_string(CleanDecision decision) {
  switch (decision) {
    case CleanDecision::keep: return "keep";
    case CleanDecision::drop_empty: return "empty";
    case CleanDecision::drop_length: return "length";
    case CleanDecision::drop_ratio: return "ratio";
  }
  return "unknown";
}

}  // namespace nmt::text
