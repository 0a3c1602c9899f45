#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "posmed/nn/tensor.hpp"

namespace posmed::nn {

inline constexpr double kDiceSmoothing = 1e-6;
inline constexpr std::int64_t kIgnoreToken = -100;

// Binary cross-entropy (mean over all elements, computed on logits) plus
// soft Dice loss of sigmoid(logits), the Dice term averaged over axis 0.
// gt must hold only 0/1. When `d_logits` is set it receives dL/dlogits.
double seg_loss(const Tensor& logits, const Tensor& gt, Tensor* d_logits = nullptr,
                double smoothing = kDiceSmoothing);

struct SegLossParts {
  double bce = 0.0;
  double dice = 0.0;
};
SegLossParts seg_loss_parts(const Tensor& logits, const Tensor& gt, double smoothing = kDiceSmoothing);

// Target token ids, [batch, length]; kIgnoreToken marks padding.
struct TokenIds {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::int64_t> ids;
};

// Mean categorical cross-entropy of logits [b, l, d] over non-padding
// positions. Returns 0 when every position is padding. Throws
// std::out_of_range for ids outside [0, d).
double text_loss(const Tensor& logits, const TokenIds& targets, Tensor* d_logits = nullptr);

struct LossWeights {
  double lambda_seg = 1.0;
  double lambda_txt = 0.5;
};

double total_loss(double seg, double txt, const LossWeights& weights = {});

}  // namespace posmed::nn
