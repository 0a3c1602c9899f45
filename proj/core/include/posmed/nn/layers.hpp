#pragma once

#include <cstddef>
#include <string>

#include "posmed/nn/tensor.hpp"

namespace posmed::nn {

// y = x W + b with W stored [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear zeros(std::size_t in, std::size_t out);
  static Linear uniform(std::size_t in, std::size_t out, UniformSource& rng, double range);
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

// x: [n, in] -> [n, out]
Tensor linear_forward(const Tensor& x, const Linear& layer);
// Accumulates parameter gradients into `grad` and returns dL/dx.
Tensor linear_backward(const Tensor& x, const Linear& layer, const Tensor& dy, Linear& grad);

// Row-wise softmax of a [rows, cols] matrix with max subtraction.
Tensor softmax_rows(const Tensor& logits);
// Softmax along `axis` of an arbitrary-rank tensor.
Tensor softmax(const Tensor& v, std::size_t axis);

enum class AttentionKind {
  Softmax,  // softmax(Q K^T * scale)
  Uniform,  // every key weighted 1/m; bypasses the score path
};

struct AttentionCache {
  Tensor weights;  // [heads, n, m]
};

// Multi-head scaled dot-product attention on already projected streams.
// q: [n, D], k/v: [m, D]; D splits evenly into `heads` slices of width D/heads.
Tensor attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, double scale,
                         AttentionKind kind, AttentionCache* cache = nullptr);

struct AttentionGrads {
  Tensor dq;
  Tensor dk;
  Tensor dv;
};

AttentionGrads attention_backward(const Tensor& d_out, const Tensor& q, const Tensor& k, const Tensor& v,
                                  std::size_t heads, double scale, AttentionKind kind, const AttentionCache& cache);

}  // namespace posmed::nn
