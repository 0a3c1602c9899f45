#include "posmed/nn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "posmed/error.hpp"

namespace posmed::nn {

Linear Linear::zeros(std::size_t in, std::size_t out) { return {Tensor({in, out}), Tensor({out})}; }

Linear Linear::uniform(std::size_t in, std::size_t out, UniformSource& rng, double range) {
  Linear l{uniform_tensor({in, out}, rng, -range, range), {}};
  l.bias = uniform_tensor({out}, rng, -range, range);
  return l;
}

Tensor linear_forward(const Tensor& x, const Linear& layer) {
  const std::size_t in = layer.in_features();
  const std::size_t out = layer.out_features();
  if (x.rank() != 2 || x.dim(1) != in) {
    throw ShapeError("linear: input " + shape_string(x.shape()) + " does not match weight " +
                     shape_string(layer.weight.shape()) + " (axis 1 must be " + std::to_string(in) + ")");
  }
  const std::size_t n = x.dim(0);
  Tensor y({n, out});
  for (std::size_t r = 0; r < n; ++r) {
    double* yr = &y[r * out];
    for (std::size_t o = 0; o < out; ++o) yr[o] = layer.bias[o];
    for (std::size_t i = 0; i < in; ++i) {
      const double xv = x[r * in + i];
      if (xv == 0.0) continue;
      const double* wr = &layer.weight[i * out];
      for (std::size_t o = 0; o < out; ++o) yr[o] += xv * wr[o];
    }
  }
  return y;
}

Tensor linear_backward(const Tensor& x, const Linear& layer, const Tensor& dy, Linear& grad) {
  const std::size_t in = layer.in_features();
  const std::size_t out = layer.out_features();
  const std::size_t n = x.dim(0);
  Tensor dx({n, in});
  for (std::size_t r = 0; r < n; ++r) {
    const double* dyr = &dy[r * out];
    for (std::size_t o = 0; o < out; ++o) grad.bias[o] += dyr[o];
    for (std::size_t i = 0; i < in; ++i) {
      const double xv = x[r * in + i];
      const double* wr = &layer.weight[i * out];
      double* gw = &grad.weight[i * out];
      double acc = 0.0;
      for (std::size_t o = 0; o < out; ++o) {
        gw[o] += xv * dyr[o];
        acc += wr[o] * dyr[o];
      }
      dx[r * in + i] = acc;
    }
  }
  return dx;
}

Tensor softmax_rows(const Tensor& logits) {
  const std::size_t rows = logits.dim(0);
  const std::size_t cols = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &logits[r * cols];
    double* o = &out[r * cols];
    const double mx = *std::max_element(in, in + cols);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sum += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= sum;
  }
  return out;
}

Tensor softmax(const Tensor& v, std::size_t axis) {
  if (axis >= v.rank()) throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range");
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= v.dim(a);
  for (std::size_t a = axis + 1; a < v.rank(); ++a) inner *= v.dim(a);
  const std::size_t len = v.dim(axis);
  Tensor out(v.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double mx = -INFINITY;
      for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, v[base + k * inner]);
      double sum = 0.0;
      for (std::size_t k = 0; k < len; ++k) sum += (out[base + k * inner] = std::exp(v[base + k * inner] - mx));
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= sum;
    }
  }
  return out;
}

Tensor attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, double scale,
                         AttentionKind kind, AttentionCache* cache) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) throw ShapeError("attention: operands must be rank 2");
  const std::size_t n = q.dim(0);
  const std::size_t m = k.dim(0);
  const std::size_t d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d) {
    throw ShapeError("attention: feature axis mismatch (q " + shape_string(q.shape()) + ", k " +
                     shape_string(k.shape()) + ", v " + shape_string(v.shape()) + ")");
  }
  if (v.dim(0) != m) throw ShapeError("attention: key/value length mismatch on axis 0");
  if (m == 0) throw ShapeError("attention: at least one key is required");
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("attention: feature width " + std::to_string(d) + " is not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  Tensor weights({heads, n, m});
  Tensor out({n, d});
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    Tensor scores({n, m});
    if (kind == AttentionKind::Uniform) {
      scores.fill(1.0 / static_cast<double>(m));
    } else {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += q[i * d + off + c] * k[j * d + off + c];
          scores[i * m + j] = s * scale;
        }
      scores = softmax_rows(scores);
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double a = scores[i * m + j];
        weights[(h * n + i) * m + j] = a;
        for (std::size_t c = 0; c < dh; ++c) out[i * d + off + c] += a * v[j * d + off + c];
      }
  }
  if (cache) cache->weights = std::move(weights);
  return out;
}

AttentionGrads attention_backward(const Tensor& d_out, const Tensor& q, const Tensor& k, const Tensor& v,
                                  std::size_t heads, double scale, AttentionKind kind, const AttentionCache& cache) {
  const std::size_t n = q.dim(0);
  const std::size_t m = k.dim(0);
  const std::size_t d = q.dim(1);
  const std::size_t dh = d / heads;
  AttentionGrads g{Tensor(q.shape()), Tensor(k.shape()), Tensor(v.shape())};
  std::vector<double> da(m);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < n; ++i) {
      const double* a = &cache.weights[(h * n + i) * m];
      // dV += A^T dO ; dA = dO V^T
      for (std::size_t j = 0; j < m; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) {
          const double dout = d_out[i * d + off + c];
          g.dv[j * d + off + c] += a[j] * dout;
          acc += dout * v[j * d + off + c];
        }
        da[j] = acc;
      }
      if (kind == AttentionKind::Uniform) continue;
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += da[j] * a[j];
      for (std::size_t j = 0; j < m; ++j) {
        const double ds = a[j] * (da[j] - dot) * scale;
        for (std::size_t c = 0; c < dh; ++c) {
          g.dq[i * d + off + c] += ds * k[j * d + off + c];
          g.dk[j * d + off + c] += ds * q[i * d + off + c];
        }
      }
    }
  }
  return g;
}

}  // namespace posmed::nn
