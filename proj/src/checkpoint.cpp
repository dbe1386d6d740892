// Copyright 2026 The softembed Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "softembed/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "softembed/errors.hpp"

namespace softembed {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'E', 'M', 'B', 'C', 'K', 'P', 'T'};
constexpr std::string_view kOptFirst = "opt.m/";
constexpr std::string_view kOptSecond = "opt.v/";

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    buf_.append(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    buf_ += s;
  }
  void array(const std::string& name, const Shape& shape, const std::vector<double>& data) {
    str(name);
    pod<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) pod<std::uint64_t>(d);
    buf_.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
  }
  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(const std::string& buf, std::size_t end) : buf_(buf), end_(end) {}
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> doubles(std::size_t n) {
    if (n > (end_ - pos_) / sizeof(double)) throw CheckpointError("checkpoint is truncated");
    std::vector<double> v(n);
    std::memcpy(v.data(), buf_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::uint64_t n) const {
    if (n > end_ - pos_) throw CheckpointError("checkpoint is truncated");
  }
  const std::string& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_tokenizer(const Tokenizer& tok) {
  std::string out = std::to_string(tok.vocab_size()) + "\n";
  for (const auto& w : tok.words()) out += w + "\n";
  return out;
}

Tokenizer deserialize_tokenizer(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw CheckpointError("tokenizer block is empty");
  const auto vocab = static_cast<std::size_t>(std::stoull(line));
  std::vector<std::string> words;
  while (std::getline(is, line)) words.push_back(line);
  return Tokenizer::from_words(std::move(words), vocab);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  w.bytes().append(kMagic, sizeof kMagic);
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.str(ckpt.config.serialize());
  w.str(serialize_tokenizer(ckpt.tokenizer));
  const auto& m = ckpt.optimizer.first_moments();
  const auto& v = ckpt.optimizer.second_moments();
  w.pod<std::uint64_t>(ckpt.params.size() + m.size() + v.size());
  for (const auto& [name, t] : ckpt.params) w.array(name, t.shape(), t.values());
  for (const auto& [name, d] : m) w.array(std::string(kOptFirst) + name, Shape{d.size()}, d);
  for (const auto& [name, d] : v) w.array(std::string(kOptSecond) + name, Shape{d.size()}, d);
  w.str(ckpt.state);
  const std::uint64_t h = fnv1a(w.bytes());
  w.pod(h);

  // Write-then-rename so a crash never leaves a half-written checkpoint.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot write checkpoint '" + tmp.string() + "'");
    os.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!os) throw CheckpointError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const EncoderConfig* expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  const std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t) ||
      std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("'" + path.string() + "' is not a checkpoint");
  }
  const std::size_t body = buf.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, buf.data() + body, sizeof stored);
  if (stored != fnv1a(buf.substr(0, body))) throw CheckpointError("checkpoint hash mismatch (corrupt file)");

  Reader r(buf, body);
  r.skip(sizeof kMagic);
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  const std::string config_text = r.str();
  ckpt.config = EncoderConfig::deserialize(config_text);
  if (expected && !(*expected == ckpt.config)) {
    throw CheckpointError("checkpoint encoder config does not match.\n--- checkpoint ---\n" + config_text +
                          "--- expected ---\n" + expected->serialize());
  }
  ckpt.tokenizer = deserialize_tokenizer(r.str());
  const auto count = r.pod<std::uint64_t>();
  std::map<std::string, std::vector<double>> m, v;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    const auto rank = r.pod<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.pod<std::uint64_t>();
    auto data = r.doubles(shape_numel(shape));
    if (name.rfind(kOptFirst, 0) == 0) m.emplace(name.substr(kOptFirst.size()), std::move(data));
    else if (name.rfind(kOptSecond, 0) == 0) v.emplace(name.substr(kOptSecond.size()), std::move(data));
    else ckpt.params.emplace(name, Tensor(std::move(shape), std::move(data)));
  }
  ckpt.state = r.str();
  if (r.pos() != body) throw CheckpointError("checkpoint has trailing bytes");
  // Constructing an encoder validates parameter names and shapes.
  Encoder check(ckpt.config, ckpt.params);
  (void)check;
  ckpt.optimizer.restore(0, std::move(m), std::move(v));
  return ckpt;
}

}  // namespace softembed
