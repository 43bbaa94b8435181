#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

#include "dialvae/corpus.hpp"
#include "dialvae/model.hpp"

namespace testutil {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> n{0};
    path_ = std::filesystem::temp_directory_path() /
            ("dialvae_test_" + std::to_string(::getpid()) + "_" + std::to_string(n++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << s;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline dialvae::corpus::Utterance utt(const std::string& speaker, std::vector<std::string> tokens,
                                      std::optional<std::string> act = std::nullopt) {
  dialvae::corpus::Utterance u;
  u.speaker = speaker;
  u.tokens = std::move(tokens);
  u.dialog_act = std::move(act);
  return u;
}

/// Small model sizes for gradient checks and fast training.
inline dialvae::model::ModelConfig mini(dialvae::model::Variant v, bool bow = true) {
  dialvae::model::ModelConfig c;
  c.variant = v;
  c.use_bow = bow;
  c.vocab_size = 20;
  c.emb_dim = 5;
  c.utt_hidden = 4;
  c.ctx_hidden = 6;
  c.dec_hidden = 7;
  c.latent_dim = 3;
  c.mlp_hidden = 5;
  c.num_acts = 3;
  c.meta_dim = 2;
  return c;
}

/// Random 1-3 utterance context and short response over ids >= 4.
inline dialvae::corpus::EncodedPair random_pair(dialvae::CounterRng& r, const dialvae::model::ModelConfig& c) {
  dialvae::corpus::EncodedPair p;
  const auto n = 1 + r.below(3);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> u(1 + r.below(4));
    for (auto& t : u) t = 4 + static_cast<int>(r.below(c.vocab_size - 4));
    p.context.push_back(u);
    p.floors.push_back(static_cast<int>(r.below(2)));
  }
  p.meta.assign(c.meta_dim, 0.0f);
  p.meta[r.below(c.meta_dim)] = 1.0f;
  p.response.resize(1 + r.below(5));
  for (auto& t : p.response) t = 4 + static_cast<int>(r.below(c.vocab_size - 4));
  p.act = static_cast<int>(r.below(std::max<std::size_t>(1, c.num_acts)));
  return p;
}

}  // namespace testutil
