#include "posmed/nn/embedding.hpp"

#include <json.hpp>

#include "posmed/corpus.hpp"
#include "posmed/error.hpp"

namespace posmed::nn {
namespace {

std::uint64_t key_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

EmbeddingProviderStub::EmbeddingProviderStub(std::size_t tokens, std::size_t dim, std::uint64_t seed)
    : tokens_(tokens), dim_(dim), seed_(seed) {
  if (tokens_ == 0 || dim_ == 0) throw ShapeError("embedding stub: tokens and dim must be >= 1");
}

EmbeddingProviderStub EmbeddingProviderStub::load(const std::filesystem::path& fixture, std::uint64_t seed) {
  using nlohmann::json;
  try {
    const json j = json::parse(read_file(fixture));
    EmbeddingProviderStub stub(j.at("tokens").get<std::size_t>(), j.at("dim").get<std::size_t>(), seed);
    for (const auto& [key, rows] : j.at("embeddings").items()) {
      std::vector<double> flat;
      for (const auto& row : rows) {
        if (row.size() != stub.dim_) throw DataError("embedding '" + key + "' has a row of the wrong width");
        for (const auto& v : row) flat.push_back(v.get<double>());
      }
      stub.add_fixture(key, Tensor({rows.size(), stub.dim_}, std::move(flat)));
    }
    return stub;
  } catch (const json::exception& e) {
    throw DataError("malformed embedding fixture '" + fixture.string() + "': " + e.what());
  }
}

void EmbeddingProviderStub::add_fixture(std::string key, Tensor embedding) {
  require_shape(embedding, {tokens_, dim_}, "embedding fixture '" + key + "'");
  fixtures_[std::move(key)] = std::move(embedding);
}

Tensor EmbeddingProviderStub::embed(std::string_view key) const {
  if (const auto it = fixtures_.find(key); it != fixtures_.end()) return it->second;
  UniformSource rng(seed_ ^ key_hash(key));
  return uniform_tensor({tokens_, dim_}, rng, -1.0, 1.0);
}

Tensor EmbeddingProviderStub::embed_batch(std::span<const std::string> keys) const {
  Tensor out({keys.size(), tokens_, dim_});
  for (std::size_t b = 0; b < keys.size(); ++b) {
    const Tensor e = embed(keys[b]);
    std::copy(e.values().begin(), e.values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(b * tokens_ * dim_));
  }
  return out;
}

}  // namespace posmed::nn
