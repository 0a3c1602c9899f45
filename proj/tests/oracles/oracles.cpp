#include "oracles.hpp"

#include <algorithm>
#include <cmath>

namespace oracle {

std::string zone(const std::vector<std::uint8_t>& cells, int height, int width, double tau_pixels) {
  // Omega <- {(u, v) | X(u, v) = 1}, u row, v column
  bool any = false;
  int u_min = 0, u_max = 0, v_min = 0, v_max = 0;
  for (int u = 0; u < height; ++u) {
    for (int v = 0; v < width; ++v) {
      if (cells[static_cast<std::size_t>(u * width + v)] == 0) continue;
      if (!any) {
        u_min = u_max = u;
        v_min = v_max = v;
        any = true;
      }
      u_min = std::min(u_min, u);
      u_max = std::max(u_max, u);
      v_min = std::min(v_min, v);
      v_max = std::max(v_max, v);
    }
  }
  if (!any) return "INVALID";

  const double x = v_min;
  const double y = u_min;
  const double w = v_max - v_min;
  const double h = u_max - u_min;
  const double x_c = x + w / 2.0;
  const double y_c = y + h / 2.0;
  const double x_i = width / 2.0;
  const double y_i = height / 2.0;
  const double d = std::sqrt((x_c - x_i) * (x_c - x_i) + (y_c - y_i) * (y_c - y_i));

  if (d <= tau_pixels) return "CENTER";
  if (x_c < x_i && y_c < y_i) return "TL";
  if (x_c >= x_i && y_c < y_i) return "TR";
  if (x_c < x_i && y_c >= y_i) return "BL";
  return "BR";
}

Lcs lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::vector<std::size_t>> t(n + 1, std::vector<std::size_t>(m + 1, 0));
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      if (a[i - 1] == b[j - 1]) {
        t[i][j] = t[i - 1][j - 1] + 1;
      } else {
        t[i][j] = std::max(t[i - 1][j], t[i][j - 1]);
      }
    }
  }
  Lcs out;
  out.length = t[n][m];
  std::size_t i = n, j = m;
  while (i > 0 && j > 0) {
    if (a[i - 1] == b[j - 1]) {
      out.witness.push_back(a[i - 1]);
      --i;
      --j;
    } else if (t[i - 1][j] >= t[i][j - 1]) {
      --i;
    } else {
      --j;
    }
  }
  std::reverse(out.witness.begin(), out.witness.end());
  return out;
}

double rouge_l_f1(const std::vector<std::string>& candidate, const std::vector<std::string>& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const double l = static_cast<double>(lcs(candidate, reference).length);
  if (l == 0.0) return 0.0;
  const double precision = l / static_cast<double>(candidate.size());
  const double recall = l / static_cast<double>(reference.size());
  return 2.0 * precision * recall / (precision + recall);
}

Overlap overlap(const std::vector<std::uint8_t>& p, const std::vector<std::uint8_t>& g) {
  std::size_t inter = 0, uni = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool a = p[i] != 0, b = g[i] != 0;
    inter += a && b;
    uni += a || b;
    np += a;
    ng += b;
  }
  if (uni == 0) return {1.0, 1.0};
  return {2.0 * static_cast<double>(inter) / static_cast<double>(np + ng),
          static_cast<double>(inter) / static_cast<double>(uni)};
}

namespace {

// y[j] = bias[j] + sum_i x[i] * W[i][j], W stored [in, out].
std::vector<double> affine(const std::vector<double>& x, const posmed::nn::Linear& layer) {
  const std::size_t in = layer.weight.dim(0), out = layer.weight.dim(1);
  std::vector<double> y(out);
  for (std::size_t j = 0; j < out; ++j) {
    double s = layer.bias[j];
    for (std::size_t i = 0; i < in; ++i) s += x[i] * layer.weight[i * out + j];
    y[j] = s;
  }
  return y;
}

// Multi-head softmax attention for one query row over rows of keys/values.
std::vector<double> attend(const std::vector<double>& q, const std::vector<std::vector<double>>& keys,
                           const std::vector<std::vector<double>>& values, std::size_t heads) {
  const std::size_t d = q.size();
  const std::size_t dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<double> out(d, 0.0);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    std::vector<double> score(keys.size());
    for (std::size_t t = 0; t < keys.size(); ++t) {
      double s = 0.0;
      for (std::size_t k = hd * dk; k < (hd + 1) * dk; ++k) s += q[k] * keys[t][k];
      score[t] = s * scale;
    }
    double norm = 0.0;
    for (double s : score) norm += std::exp(s);
    for (std::size_t t = 0; t < keys.size(); ++t) {
      const double a = std::exp(score[t]) / norm;
      for (std::size_t k = hd * dk; k < (hd + 1) * dk; ++k) out[k] += a * values[t][k];
    }
  }
  return out;
}

}  // namespace

std::vector<double> fuse(const std::vector<double>& z_image, const std::vector<double>& z_emb, std::size_t b,
                         std::size_t h, std::size_t w, std::size_t l, const posmed::nn::FusionParams& p) {
  const std::size_t c = p.config.image_channels;
  const std::size_t e = p.config.embed_dim;
  const std::size_t n = h * w;
  std::vector<double> out = z_image;
  for (std::size_t bi = 0; bi < b; ++bi) {
    std::vector<std::vector<double>> memory;
    for (std::size_t t = 0; t < l; ++t) {
      std::vector<double> token(e);
      for (std::size_t k = 0; k < e; ++k) token[k] = z_emb[(bi * l + t) * e + k];
      memory.push_back(affine(token, p.proj_emb));
    }
    std::vector<std::vector<double>> cross(n);
    for (std::size_t pos = 0; pos < n; ++pos) {
      std::vector<double> pixel(c);
      for (std::size_t ch = 0; ch < c; ++ch) pixel[ch] = z_image[(bi * c + ch) * n + pos];
      const std::vector<double> q = affine(pixel, p.proj_image);
      cross[pos] = affine(attend(q, memory, memory, p.config.heads), p.cross_out);
    }
    std::vector<std::vector<double>> fused = cross;
    if (p.config.self_attention) {
      std::vector<std::vector<double>> qs, ks, vs;
      for (const auto& row : cross) {
        qs.push_back(affine(row, p.sa_query));
        ks.push_back(affine(row, p.sa_key));
        vs.push_back(affine(row, p.sa_value));
      }
      for (std::size_t pos = 0; pos < n; ++pos) fused[pos] = affine(attend(qs[pos], ks, vs, p.config.heads), p.sa_out);
    }
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t pos = 0; pos < n; ++pos) out[(bi * c + ch) * n + pos] += fused[pos][ch];
  }
  return out;
}

std::vector<double> mask_head(const std::vector<double>& z, std::size_t c, std::size_t h, std::size_t w,
                              const posmed::nn::MaskHeadParams& p) {
  std::vector<double> x = z;
  std::size_t ci_n = c, ih = h, iw = w;
  for (const auto& st : p.stages) {
    const std::size_t co_n = st.weight.dim(1);
    const std::size_t oh = 2 * ih, ow = 2 * iw;
    std::vector<double> y(co_n * oh * ow);
    for (std::size_t co = 0; co < co_n; ++co) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double s = st.bias[co];
          for (std::size_t ci = 0; ci < ci_n; ++ci) {
            const double v = x[(ci * ih + oy / 2) * iw + ox / 2];
            s += v * st.weight[((ci * co_n + co) * 2 + oy % 2) * 2 + ox % 2];
          }
          y[(co * oh + oy) * ow + ox] = s;
        }
      }
    }
    const std::size_t area = oh * ow;
    for (std::size_t co = 0; co < co_n; ++co) {
      double mean = 0.0;
      for (std::size_t k = 0; k < area; ++k) mean += y[co * area + k];
      mean /= static_cast<double>(area);
      double var = 0.0;
      for (std::size_t k = 0; k < area; ++k) var += (y[co * area + k] - mean) * (y[co * area + k] - mean);
      var /= static_cast<double>(area);
      for (std::size_t k = 0; k < area; ++k) {
        const double a = st.gamma[co] * (y[co * area + k] - mean) / std::sqrt(var + p.config.norm_eps) + st.beta[co];
        y[co * area + k] = a > 0.0 ? a : 0.0;
      }
    }
    x = std::move(y);
    ci_n = co_n;
    ih = oh;
    iw = ow;
  }
  std::vector<double> logits(ih * iw);
  for (std::size_t k = 0; k < ih * iw; ++k) {
    double s = p.logit_bias[0];
    for (std::size_t ch = 0; ch < ci_n; ++ch) s += p.logit_weight[ch] * x[ch * ih * iw + k];
    logits[k] = s;
  }
  return logits;
}

double seg_loss(const std::vector<double>& logits, const std::vector<double>& gt, std::size_t batch,
                double smoothing) {
  const std::size_t n = logits.size();
  const std::size_t per = n / batch;
  double bce = 0.0;
  std::vector<double> prob(n);
  for (std::size_t i = 0; i < n; ++i) {
    prob[i] = 1.0 / (1.0 + std::exp(-logits[i]));
    bce += -(gt[i] * std::log(prob[i]) + (1.0 - gt[i]) * std::log(1.0 - prob[i]));
  }
  bce /= static_cast<double>(n);
  double dice = 0.0;
  for (std::size_t bi = 0; bi < batch; ++bi) {
    double inter = 0.0, sp = 0.0, sg = 0.0;
    for (std::size_t k = bi * per; k < (bi + 1) * per; ++k) {
      inter += prob[k] * gt[k];
      sp += prob[k];
      sg += gt[k];
    }
    dice += 1.0 - (2.0 * inter + smoothing) / (sp + sg + smoothing);
  }
  return bce + dice / static_cast<double>(batch);
}

double text_loss(const std::vector<double>& logits, const std::vector<std::int64_t>& ids, std::size_t classes) {
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t pos = 0; pos < ids.size(); ++pos) {
    if (ids[pos] < 0) continue;
    double norm = 0.0;
    for (std::size_t k = 0; k < classes; ++k) norm += std::exp(logits[pos * classes + k]);
    total += std::log(norm) - logits[pos * classes + static_cast<std::size_t>(ids[pos])];
    ++counted;
  }
  return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

}  // namespace oracle
