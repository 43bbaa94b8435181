#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "dialvae/error.hpp"

namespace dialvae::manifest {

using json = nlohmann::json;

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline std::string sha1_hex(const std::string& data) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 || EVP_DigestFinal_ex(ctx.get(), md.data(), &len) != 1)
    throw Error("sha1: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

/// Object id git would give the bytes as a blob: sha1("blob <n>\0" + bytes).
inline std::string git_blob_sha1(const std::string& bytes) {
  std::string data = "blob " + std::to_string(bytes.size());
  data.push_back('\0');
  data += bytes;
  return sha1_hex(data);
}

inline std::string git_blob_sha1(const std::filesystem::path& path) { return git_blob_sha1(read_file(path)); }

struct InputFile {
  std::string key;  // config key the path came from
  std::string path;
  std::string sha1;
};

struct RunManifest {
  std::string command;
  json config = json::object();  // fully resolved options; execution reads nothing else
  std::uint64_t seed = 0;
  std::vector<InputFile> inputs;
  std::vector<std::string> outputs;
  std::vector<std::string> argv;
  double duration_seconds = 0;

  json to_json() const {
    json in = json::array();
    for (const auto& f : inputs) in.push_back({{"key", f.key}, {"path", f.path}, {"git_sha1", f.sha1}});
    return {{"command", command}, {"config", config},     {"seed", seed},
            {"inputs", in},       {"outputs", outputs},   {"argv", argv},
            {"duration_seconds", duration_seconds}};
  }

  static RunManifest from_json(const json& j) {
    RunManifest m;
    try {
      m.command = j.at("command").get<std::string>();
      m.config = j.at("config");
      m.seed = j.at("seed").get<std::uint64_t>();
      for (const auto& f : j.at("inputs"))
        m.inputs.push_back({f.at("key").get<std::string>(), f.at("path").get<std::string>(),
                            f.at("git_sha1").get<std::string>()});
      m.outputs = j.at("outputs").get<std::vector<std::string>>();
      m.argv = j.value("argv", std::vector<std::string>{});
      m.duration_seconds = j.value("duration_seconds", 0.0);
    } catch (const json::exception& e) {
      throw ParseError(std::string("run manifest: ") + e.what());
    }
    return m;
  }

  static RunManifest load(const std::filesystem::path& path) {
    try {
      return from_json(json::parse(read_file(path)));
    } catch (const json::parse_error& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error("cannot write " + path.string());
    f << to_json().dump(2) << '\n';
  }

  /// Throws ValidationError naming the first input whose content changed.
  void verify_inputs() const {
    for (const auto& f : inputs) {
      const auto now = git_blob_sha1(std::filesystem::path(f.path));
      if (now != f.sha1)
        throw ValidationError("replay: input '" + f.path + "' changed since the run (" + f.sha1.substr(0, 12) +
                              " -> " + now.substr(0, 12) + ")");
    }
  }
};

}  // namespace dialvae::manifest
