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

#include "nmt/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nmt/error.hpp"
#include "nmt/hash.hpp"

namespace nmt {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr std::size_t kDigestChars = 64;

template <typename T>
void put(std::string& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.append(bytes, sizeof(T));
}

void put_string(std::string& out, std::string_view s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  void get_floats(std::span<float> out) {
    need(out.size() * sizeof(float));
    std::memcpy(out.data(), bytes_.data() + pos_, out.size() * sizeof(float));
    pos_ += out.size() * sizeof(float);
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IntegrityError("checkpoint is truncated");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const std::string& Checkpoint::require_meta(const std::string& key) const {
  const auto it = meta.find(key);
  if (it == meta.end()) throw IntegrityError("checkpoint has no '" + key + "' entry");
  return it->second;
}

const Tensor& Checkpoint::require_tensor(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw IntegrityError("checkpoint has no tensor '" + name + "'");
}

ParameterList Checkpoint::tensors_with_prefix(const std::string& prefix) const {
  ParameterList out;
  for (const auto& t : tensors) {
    if (t.name.rfind(prefix, 0) == 0) out.push_back({t.name.substr(prefix.size()), t.tensor});
  }
  return out;
}

std::string serialize_checkpoint(const Checkpoint& checkpoint) {
  std::string out(kCheckpointMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, checkpoint.kind);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.meta.size()));
  for (const auto& [key, value] : checkpoint.meta) {
    put_string(out, key);
    put_string(out, value);
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& [name, tensor] : checkpoint.tensors) {
    put_string(out, name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (auto d : tensor.shape()) put<std::uint64_t>(out, d);
    const auto data = tensor.data();
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
  }
  out += sha256_hex(out);
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  if (bytes.size() < kCheckpointMagic.size() + kDigestChars ||
      bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw IntegrityError("not a checkpoint file (bad magic)");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - kDigestChars);
  if (sha256_hex(body) != bytes.substr(body.size())) {
    throw IntegrityError("checkpoint digest mismatch (file is corrupt)");
  }
  Reader in(body.substr(kCheckpointMagic.size()));
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw IntegrityError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.kind = in.get_string();
  const auto meta_count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    std::string key = in.get_string();
    ck.meta[key] = in.get_string();
  }
  const auto tensor_count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    std::string name = in.get_string();
    const auto rank = in.get<std::uint32_t>();
    if (rank == 0 || rank > 8) throw IntegrityError("tensor '" + name + "' has invalid rank");
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(in.get<std::uint64_t>());
      if (d == 0 || d > in.remaining() / sizeof(float) / numel) {
        throw IntegrityError("tensor '" + name + "' has invalid or truncated dimensions");
      }
      numel *= d;
    }
    Tensor t(shape);
    in.get_floats(t.data());
    ck.tensors.push_back({std::move(name), std::move(t)});
  }
  if (!in.done()) throw IntegrityError("trailing bytes in checkpoint");
  return ck;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_file_atomic(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file(path));
}

std::string parameter_checksum(const ParameterList& params) {
  Checkpoint ck;
  ck.kind = "checksum";
  ck.tensors = params;
  return sha256_hex(serialize_checkpoint(ck));
}

std::string format_number(double value) {
  char buffer[32];
  const auto r = std::to_chars(buffer, buffer + sizeof buffer, value);
  return std::string(buffer, r.ptr);
}

double parse_meta_number(const std::string& text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw IntegrityError("malformed number '" + text + "' in checkpoint");
  }
  return v;
}

std::uint64_t parse_meta_u64(const std::string& text) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw IntegrityError("malformed integer '" + text + "' in checkpoint");
  }
  return v;
}

}  // namespace nmt
