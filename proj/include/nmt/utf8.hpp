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

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nmt::utf8 {

// Decodes a UTF-8 string into code points; std::nullopt on malformed input
// (overlong forms, surrogates and truncated sequences included).
std::optional<std::u32string> decode(std::string_view text);

std::string encode(char32_t cp);
std::string encode(std::u32string_view text);

// Splits a valid UTF-8 string into one string per code point.
std::vector<std::string> characters(std::string_view text);

// Simple case folding for ASCII, Latin-1, Latin Extended-A, Greek and
// Cyrillic capitals. Other code points pass through unchanged.
char32_t to_lower(char32_t cp);
std::string to_lower(std::string_view text);

}  // namespace nmt::utf8
