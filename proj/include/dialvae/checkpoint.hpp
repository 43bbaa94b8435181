#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dialvae/error.hpp"
#include "dialvae/numeric.hpp"

namespace dialvae::checkpoint {

using json = nlohmann::json;

// Archive layout:
//   "DVCK"  u32 version  u64 manifest_bytes  manifest (UTF-8 JSON)
//   u64 blob_bytes  blob (little-endian float32, tensors in manifest order)
// All integers little-endian. The manifest carries "tensors": [{name, shape}]
// plus whatever the caller stores under "meta".

inline constexpr char kMagic[4] = {'D', 'V', 'C', 'K'};
inline constexpr std::uint32_t kVersion = 1;

struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> values;
};

struct Archive {
  json meta = json::object();
  std::vector<Tensor> tensors;

  const Tensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

template <class U>
U get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw CorruptionError("checkpoint: truncated header");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(U);
  return static_cast<U>(v);
}

inline std::size_t numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

}  // namespace detail

inline std::string serialize(const Archive& a) {
  json manifest;
  manifest["meta"] = a.meta;
  manifest["tensors"] = json::array();
  std::size_t total = 0;
  for (const auto& t : a.tensors) {
    if (detail::numel(t.shape) != t.values.size())
      throw ShapeError("checkpoint: tensor '" + t.name + "' shape does not match its value count");
    manifest["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
    total += t.values.size();
  }
  const std::string m = manifest.dump();
  std::string out(kMagic, 4);
  detail::put_le<std::uint32_t>(out, kVersion);
  detail::put_le<std::uint64_t>(out, m.size());
  out += m;
  detail::put_le<std::uint64_t>(out, total * 4);
  out.reserve(out.size() + total * 4);
  for (const auto& t : a.tensors)
    for (float f : t.values) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

inline Archive deserialize(const std::string& in) {
  if (in.size() < 4 || std::memcmp(in.data(), kMagic, 4) != 0) throw CorruptionError("checkpoint: bad magic");
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint32_t>(in, pos);
  if (version != kVersion) throw CorruptionError("checkpoint: unsupported version " + std::to_string(version));
  const auto mlen = detail::get_le<std::uint64_t>(in, pos);
  if (mlen > in.size() - pos) throw CorruptionError("checkpoint: manifest length exceeds file size");
  json manifest;
  try {
    manifest = json::parse(in.substr(pos, mlen));
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("checkpoint: unreadable manifest: ") + e.what());
  }
  pos += mlen;
  const auto blen = detail::get_le<std::uint64_t>(in, pos);
  if (blen != in.size() - pos) throw CorruptionError("checkpoint: blob length does not match file contents");

  Archive a;
  a.meta = manifest.value("meta", json::object());
  std::size_t expected = 0;
  for (const auto& t : manifest.at("tensors")) {
    Tensor x;
    x.name = t.at("name").get<std::string>();
    x.shape = t.at("shape").get<std::vector<std::size_t>>();
    expected += detail::numel(x.shape);
    a.tensors.push_back(std::move(x));
  }
  if (expected * 4 != blen) throw CorruptionError("checkpoint: manifest shapes disagree with blob length");
  for (auto& t : a.tensors) {
    const auto n = detail::numel(t.shape);
    t.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) t.values[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(in, pos));
  }
  return a;
}

inline void save(const Archive& a, const std::filesystem::path& path) {
  const auto bytes = serialize(a);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write checkpoint " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("failed writing checkpoint " + path.string());
}

inline Archive load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

/// Appends every parameter of `p` as a tensor named prefix + parameter name.
template <class T>
void append_params(Archive& a, const numeric::ModelParams<T>& p, const std::string& prefix = "") {
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto id = p.id(i);
    auto v = p.value(id);
    a.tensors.push_back({prefix + p.name(id), p.shape(id), std::vector<float>(v.begin(), v.end())});
  }
}

/// Copies tensors named prefix + name into `p`; every parameter must be present
/// with a matching shape.
template <class T>
void restore_params(const Archive& a, numeric::ModelParams<T>& p, const std::string& prefix = "") {
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto id = p.id(i);
    const Tensor* t = a.find(prefix + p.name(id));
    if (!t) throw CorruptionError("checkpoint: missing tensor '" + prefix + p.name(id) + "'");
    if (t->shape != p.shape(id)) throw CorruptionError("checkpoint: shape mismatch for '" + t->name + "'");
    auto v = p.value(id);
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = static_cast<T>(t->values[j]);
  }
}

}  // namespace dialvae::checkpoint
