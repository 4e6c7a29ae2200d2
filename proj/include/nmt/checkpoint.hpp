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

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "nmt/tensor.hpp"

namespace nmt {

inline constexpr std::string_view kCheckpointMagic = "NMTCKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary container shared by LM and MT checkpoints:
//   magic, u32 version, kind string, u32 meta count, (key, value) strings,
//   u32 tensor count, (name, u32 rank, u64 dims..., little-endian float32
//   data) records, then the lowercase hex SHA-256 of all preceding bytes.
// Strings are a u32 byte length followed by the bytes.
struct Checkpoint {
  std::string kind;
  std::map<std::string, std::string> meta;
  ParameterList tensors;

  const std::string& require_meta(const std::string& key) const;
  const Tensor& require_tensor(const std::string& name) const;
  // Tensors whose names start with `prefix`, with the prefix removed.
  ParameterList tensors_with_prefix(const std::string& prefix) const;
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
// Throws IntegrityError on a bad magic, version, truncation or digest.
Checkpoint parse_checkpoint(std::string_view bytes);

// Writes to a sibling temporary file and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Writes `text` atomically (temporary file plus rename).
void write_file_atomic(const std::filesystem::path& path, std::string_view text);
std::string read_file(const std::filesystem::path& path);

// Shortest decimal form that parses back to exactly `value`.
std::string format_number(double value);
// Strict parsers for metadata values; IntegrityError on malformed text.
double parse_meta_number(const std::string& text);
std::uint64_t parse_meta_u64(const std::string& text);

// Order-sensitive SHA-256 over names, shapes and values.
std::string parameter_checksum(const ParameterList& params);

}  // namespace nmt
