#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "posmed/nn/tensor.hpp"

namespace posmed::nn {

// Upsampling head: `stages` blocks of (2x2 stride-2 transposed convolution,
// per-channel standardization with learned affine, ReLU), then a 1x1
// projection to one logit channel. Channels halve at every stage (floor 1).
// Six stages give the 64x upscale 16x16 -> 1024x1024.
struct MaskHeadConfig {
  std::size_t in_channels = 256;
  std::size_t stages = 6;
  double norm_eps = 1e-5;

  std::vector<std::size_t> channel_schedule() const;
};

struct UpsampleStage {
  Tensor weight;  // [c_in, c_out, 2, 2]
  Tensor bias;    // [c_out]
  Tensor gamma;   // [c_out]
  Tensor beta;    // [c_out]
};

struct MaskHeadParams {
  MaskHeadConfig config;
  std::vector<UpsampleStage> stages;
  Tensor logit_weight;  // [c_last]
  Tensor logit_bias;    // [1]

  // Conv weights and biases zero, gamma one, beta zero.
  static MaskHeadParams zeros(const MaskHeadConfig& config);
  // Uniform weights/biases/beta in [-range, range]; gamma in 1 +- range.
  static MaskHeadParams uniform(const MaskHeadConfig& config, UniformSource& rng, double range = 0.1);

  void visit(const std::function<void(const std::string&, Tensor&)>& fn);
  void visit(const std::function<void(const std::string&, const Tensor&)>& fn) const;
};

// Pure shape computation; no buffers are allocated.
Shape mask_head_output_shape(const Shape& input, const MaskHeadConfig& config);

struct MaskHeadCache {
  struct Stage {
    Tensor input;
    Tensor normalized;  // standardized conv output (before affine)
    std::vector<double> inv_std;
    Tensor activated_mask;  // 1 where the affine output was > 0
  };
  std::vector<Stage> stages;
  Tensor last;  // activations feeding the logit projection
};

// z_fused: [b, C, h, w] -> [b, 1, 2^stages h, 2^stages w]
Tensor mask_head(const Tensor& z_fused, const MaskHeadParams& params, MaskHeadCache* cache = nullptr);

struct MaskHeadGrads {
  MaskHeadParams params;
  Tensor d_input;
};

MaskHeadGrads mask_head_backward(const Tensor& d_logits, const MaskHeadParams& params, const MaskHeadCache& cache);

}  // namespace posmed::nn
