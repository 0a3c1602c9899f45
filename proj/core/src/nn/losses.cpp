#include "posmed/nn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "posmed/error.hpp"

namespace posmed::nn {
namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_seg_inputs(const Tensor& logits, const Tensor& gt) {
  if (logits.shape() != gt.shape()) {
    throw ShapeError("seg_loss: prediction " + shape_string(logits.shape()) + " vs ground truth " +
                     shape_string(gt.shape()));
  }
  if (logits.empty()) throw ShapeError("seg_loss: empty tensors");
  for (double g : gt.data()) {
    if (g != 0.0 && g != 1.0) throw std::invalid_argument("seg_loss: ground truth must be 0/1");
  }
}

std::size_t batch_of(const Tensor& t) { return t.rank() >= 2 ? t.dim(0) : 1; }

}  // namespace

SegLossParts seg_loss_parts(const Tensor& logits, const Tensor& gt, double smoothing) {
  check_seg_inputs(logits, gt);
  SegLossParts parts;
  const std::size_t n = logits.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = logits[i];
    parts.bce += std::max(x, 0.0) - x * gt[i] + std::log1p(std::exp(-std::abs(x)));
  }
  parts.bce /= static_cast<double>(n);

  const std::size_t b = batch_of(logits);
  const std::size_t per = n / b;
  for (std::size_t bi = 0; bi < b; ++bi) {
    double inter = 0.0;
    double total = 0.0;
    for (std::size_t k = bi * per; k < (bi + 1) * per; ++k) {
      const double p = sigmoid(logits[k]);
      inter += p * gt[k];
      total += p + gt[k];
    }
    parts.dice += 1.0 - (2.0 * inter + smoothing) / (total + smoothing);
  }
  parts.dice /= static_cast<double>(b);
  return parts;
}

double seg_loss(const Tensor& logits, const Tensor& gt, Tensor* d_logits, double smoothing) {
  const SegLossParts parts = seg_loss_parts(logits, gt, smoothing);
  if (d_logits) {
    const std::size_t n = logits.size();
    const std::size_t b = batch_of(logits);
    const std::size_t per = n / b;
    *d_logits = Tensor(logits.shape());
    for (std::size_t bi = 0; bi < b; ++bi) {
      double inter = 0.0;
      double total = 0.0;
      for (std::size_t k = bi * per; k < (bi + 1) * per; ++k) {
        const double p = sigmoid(logits[k]);
        inter += p * gt[k];
        total += p + gt[k];
      }
      const double denom = total + smoothing;
      const double numer = 2.0 * inter + smoothing;
      for (std::size_t k = bi * per; k < (bi + 1) * per; ++k) {
        const double p = sigmoid(logits[k]);
        const double d_bce = (p - gt[k]) / static_cast<double>(n);
        const double d_dice_dp = -(2.0 * gt[k] * denom - numer) / (denom * denom) / static_cast<double>(b);
        (*d_logits)[k] = d_bce + d_dice_dp * p * (1.0 - p);
      }
    }
  }
  return parts.bce + parts.dice;
}

double text_loss(const Tensor& logits, const TokenIds& targets, Tensor* d_logits) {
  if (logits.rank() != 3) throw ShapeError("text_loss: logits must be [b,l,d], got " + shape_string(logits.shape()));
  const std::size_t b = logits.dim(0), l = logits.dim(1), d = logits.dim(2);
  if (targets.batch != b || targets.length != l || targets.ids.size() != b * l) {
    throw ShapeError("text_loss: targets [" + std::to_string(targets.batch) + "," + std::to_string(targets.length) +
                     "] do not match logits " + shape_string(logits.shape()));
  }
  if (d_logits) *d_logits = Tensor(logits.shape());
  double loss = 0.0;
  std::size_t counted = 0;
  std::vector<double> probs(d);
  for (std::size_t pos = 0; pos < b * l; ++pos) {
    const std::int64_t t = targets.ids[pos];
    if (t == kIgnoreToken) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= d) {
      throw std::out_of_range("text_loss: token id " + std::to_string(t) + " outside vocabulary of " +
                              std::to_string(d));
    }
    const double* x = &logits[pos * d];
    const double mx = *std::max_element(x, x + d);
    double sum = 0.0;
    for (std::size_t c = 0; c < d; ++c) sum += (probs[c] = std::exp(x[c] - mx));
    const double log_z = mx + std::log(sum);
    loss += log_z - x[t];
    ++counted;
    if (d_logits) {
      double* g = &(*d_logits)[pos * d];
      for (std::size_t c = 0; c < d; ++c) g[c] = probs[c] / sum;
      g[t] -= 1.0;
    }
  }
  if (counted == 0) return 0.0;
  if (d_logits) {
    for (double& g : d_logits->data()) g /= static_cast<double>(counted);
  }
  return loss / static_cast<double>(counted);
}

double total_loss(double seg, double txt, const LossWeights& weights) {
  return weights.lambda_seg * seg + weights.lambda_txt * txt;
}

}  // namespace posmed::nn
