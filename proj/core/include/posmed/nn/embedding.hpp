#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>

#include "posmed/nn/tensor.hpp"

namespace posmed::nn {

// Stand-in for the multimodal language model's last hidden state. Fixture
// embeddings are returned verbatim; any other key gets a deterministic
// pseudo-random [tokens, dim] block derived from (seed, key).
class EmbeddingProviderStub {
 public:
  EmbeddingProviderStub(std::size_t tokens, std::size_t dim, std::uint64_t seed = 0);

  // {"dim": E, "tokens": l, "embeddings": {"<key>": [[...], ...]}}
  static EmbeddingProviderStub load(const std::filesystem::path& fixture, std::uint64_t seed = 0);

  void add_fixture(std::string key, Tensor embedding);

  // [tokens, dim]
  Tensor embed(std::string_view key) const;
  // [keys.size(), tokens, dim]
  Tensor embed_batch(std::span<const std::string> keys) const;

  std::size_t tokens() const { return tokens_; }
  std::size_t dim() const { return dim_; }

 private:
  std::size_t tokens_;
  std::size_t dim_;
  std::uint64_t seed_;
  std::map<std::string, Tensor, std::less<>> fixtures_;
};

}  // namespace posmed::nn
