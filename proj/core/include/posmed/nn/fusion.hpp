#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "posmed/nn/layers.hpp"
#include "posmed/nn/tensor.hpp"

namespace posmed::nn {

struct FusionConfig {
  std::size_t image_channels = 256;
  std::size_t embed_dim = 4096;
  std::size_t shared_dim = 256;
  std::size_t heads = 8;
  bool self_attention = true;
  AttentionKind attention = AttentionKind::Softmax;

  double d_k() const { return static_cast<double>(shared_dim) / static_cast<double>(heads); }
  // Throws ShapeError for inconsistent dimensions.
  void validate() const;
};

// Projection and attention weights of the fusion block. The image and
// embedding projections map both streams into the shared latent width;
// keys and values both come from the embedding projection.
struct FusionParams {
  FusionConfig config;
  Linear proj_image;  // image_channels -> shared_dim
  Linear proj_emb;    // embed_dim -> shared_dim
  Linear cross_out;   // shared_dim -> shared_dim
  Linear sa_query;
  Linear sa_key;
  Linear sa_value;
  Linear sa_out;

  static FusionParams zeros(const FusionConfig& config);
  static FusionParams uniform(const FusionConfig& config, UniformSource& rng, double range = 0.1);

  void visit(const std::function<void(const std::string&, Tensor&)>& fn);
  void visit(const std::function<void(const std::string&, const Tensor&)>& fn) const;
};

struct FusionCache {
  struct Item {
    Tensor tokens;  // [N, C] image features as a sequence
    Tensor query;   // [N, D]
    Tensor memory;  // [M, D] projected embeddings (keys and values)
    Tensor mixed;   // [N, D] attention output before the output projection
    AttentionCache cross;
    Tensor cross_out;  // [N, D]
    Tensor sa_q, sa_k, sa_v, sa_mixed;
    AttentionCache self;
  };
  std::vector<Item> items;
  std::size_t height = 0;
  std::size_t width = 0;
};

// Cross-attention of the flattened image grid over the embedding tokens,
// followed by self-attention over the grid, reshaped back and added to the
// image features.
//   z_image: [b, C, h, w]; z_emb: [b, l, E]; result: [b, C, h, w]
Tensor fuse(const Tensor& z_image, const Tensor& z_emb, const FusionParams& params, FusionCache* cache = nullptr);

// Output of the cross-attention stage alone (after its output projection):
// [b, h*w, D].
Tensor cross_attention(const Tensor& z_image, const Tensor& z_emb, const FusionParams& params);

struct FusionGrads {
  FusionParams params;  // same layout, holds dL/dθ
  Tensor d_image;
  Tensor d_emb;
};

FusionGrads fuse_backward(const Tensor& d_out, const Tensor& z_image, const Tensor& z_emb,
                          const FusionParams& params, const FusionCache& cache);

}  // namespace posmed::nn
