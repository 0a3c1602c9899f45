#include "posmed/nn/mask_head.hpp"

#include <cmath>

#include "posmed/error.hpp"

namespace posmed::nn {
namespace {

template <typename Params, typename Fn>
void visit_impl(Params& p, Fn&& fn) {
  for (std::size_t s = 0; s < p.stages.size(); ++s) {
    const std::string prefix = "stage" + std::to_string(s) + ".";
    fn(prefix + "weight", p.stages[s].weight);
    fn(prefix + "bias", p.stages[s].bias);
    fn(prefix + "gamma", p.stages[s].gamma);
    fn(prefix + "beta", p.stages[s].beta);
  }
  fn("logit.weight", p.logit_weight);
  fn("logit.bias", p.logit_bias);
}

// 2x2 stride-2 transposed convolution.
Tensor conv_transpose(const Tensor& in, const UpsampleStage& st) {
  const std::size_t b = in.dim(0), ci_n = in.dim(1), h = in.dim(2), w = in.dim(3);
  const std::size_t co_n = st.weight.dim(1);
  const std::size_t oh = 2 * h, ow = 2 * w;
  Tensor out({b, co_n, oh, ow});
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t co = 0; co < co_n; ++co) {
      double* o = &out[(bi * co_n + co) * oh * ow];
      for (std::size_t k = 0; k < oh * ow; ++k) o[k] = st.bias[co];
      for (std::size_t ci = 0; ci < ci_n; ++ci) {
        const double* x = &in[(bi * ci_n + ci) * h * w];
        const double* wk = &st.weight[(ci * co_n + co) * 4];
        for (std::size_t i = 0; i < h; ++i) {
          double* row0 = o + (2 * i) * ow;
          double* row1 = row0 + ow;
          for (std::size_t j = 0; j < w; ++j) {
            const double v = x[i * w + j];
            row0[2 * j] += v * wk[0];
            row0[2 * j + 1] += v * wk[1];
            row1[2 * j] += v * wk[2];
            row1[2 * j + 1] += v * wk[3];
          }
        }
      }
    }
  }
  return out;
}

}  // namespace

std::vector<std::size_t> MaskHeadConfig::channel_schedule() const {
  std::vector<std::size_t> ch{in_channels};
  for (std::size_t s = 0; s < stages; ++s) ch.push_back(std::max<std::size_t>(ch.back() / 2, 1));
  return ch;
}

MaskHeadParams MaskHeadParams::zeros(const MaskHeadConfig& config) {
  MaskHeadParams p;
  p.config = config;
  const auto ch = config.channel_schedule();
  for (std::size_t s = 0; s < config.stages; ++s) {
    p.stages.push_back({Tensor({ch[s], ch[s + 1], 2, 2}), Tensor({ch[s + 1]}), Tensor({ch[s + 1]}, 1.0),
                        Tensor({ch[s + 1]})});
  }
  p.logit_weight = Tensor({ch.back()});
  p.logit_bias = Tensor({1});
  return p;
}

MaskHeadParams MaskHeadParams::uniform(const MaskHeadConfig& config, UniformSource& rng, double range) {
  MaskHeadParams p = zeros(config);
  p.visit([&](const std::string& name, Tensor& t) {
    const bool gamma = name.ends_with(".gamma");
    for (double& v : t.data()) v = (gamma ? 1.0 : 0.0) + rng.next(-range, range);
  });
  return p;
}

void MaskHeadParams::visit(const std::function<void(const std::string&, Tensor&)>& fn) { visit_impl(*this, fn); }

void MaskHeadParams::visit(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  visit_impl(*this, fn);
}

Shape mask_head_output_shape(const Shape& input, const MaskHeadConfig& config) {
  if (input.size() != 4) throw ShapeError("mask_head: input must be [b,C,h,w], got " + shape_string(input));
  if (input[1] != config.in_channels) {
    throw ShapeError("mask_head: input axis 1 (channels) is " + std::to_string(input[1]) + ", expected " +
                     std::to_string(config.in_channels));
  }
  if (input[2] < 1 || input[3] < 1) throw ShapeError("mask_head: spatial extents must be >= 1");
  const std::size_t scale = std::size_t{1} << config.stages;
  return {input[0], 1, input[2] * scale, input[3] * scale};
}

Tensor mask_head(const Tensor& z_fused, const MaskHeadParams& params, MaskHeadCache* cache) {
  const Shape out_shape = mask_head_output_shape(z_fused.shape(), params.config);
  if (cache) cache->stages.assign(params.stages.size(), {});

  Tensor x = z_fused;
  for (std::size_t s = 0; s < params.stages.size(); ++s) {
    const UpsampleStage& st = params.stages[s];
    if (cache) cache->stages[s].input = x;
    Tensor y = conv_transpose(x, st);
    const std::size_t b = y.dim(0), c_n = y.dim(1), hw = y.dim(2) * y.dim(3);
    const double n = static_cast<double>(hw);
    Tensor normalized;
    Tensor active;
    std::vector<double> inv_std;
    if (cache) {
      normalized = Tensor(y.shape());
      active = Tensor(y.shape());
      inv_std.resize(b * c_n);
    }
    for (std::size_t bc = 0; bc < b * c_n; ++bc) {
      const std::size_t co = bc % c_n;
      double* v = &y[bc * hw];
      double mean = 0.0;
      for (std::size_t k = 0; k < hw; ++k) mean += v[k];
      mean /= n;
      double var = 0.0;
      for (std::size_t k = 0; k < hw; ++k) var += (v[k] - mean) * (v[k] - mean);
      var /= n;
      const double istd = 1.0 / std::sqrt(var + params.config.norm_eps);
      for (std::size_t k = 0; k < hw; ++k) {
        const double xhat = (v[k] - mean) * istd;
        const double a = st.gamma[co] * xhat + st.beta[co];
        if (cache) {
          normalized[bc * hw + k] = xhat;
          active[bc * hw + k] = a > 0.0 ? 1.0 : 0.0;
        }
        v[k] = a > 0.0 ? a : 0.0;
      }
      if (cache) inv_std[bc] = istd;
    }
    if (cache) {
      cache->stages[s].normalized = std::move(normalized);
      cache->stages[s].activated_mask = std::move(active);
      cache->stages[s].inv_std = std::move(inv_std);
    }
    x = std::move(y);
  }

  const std::size_t b = x.dim(0), c_n = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor logits(out_shape);
  for (std::size_t bi = 0; bi < b; ++bi) {
    double* o = &logits[bi * hw];
    for (std::size_t k = 0; k < hw; ++k) o[k] = params.logit_bias[0];
    for (std::size_t c = 0; c < c_n; ++c) {
      const double wc = params.logit_weight[c];
      const double* a = &x[(bi * c_n + c) * hw];
      for (std::size_t k = 0; k < hw; ++k) o[k] += wc * a[k];
    }
  }
  if (cache) cache->last = std::move(x);
  return logits;
}

MaskHeadGrads mask_head_backward(const Tensor& d_logits, const MaskHeadParams& params, const MaskHeadCache& cache) {
  MaskHeadGrads g{MaskHeadParams::zeros(params.config), {}};
  g.params.visit([](const std::string&, Tensor& t) { t.fill(0.0); });
  const Tensor& last = cache.last;
  const std::size_t b = last.dim(0), c_last = last.dim(1), hw_last = last.dim(2) * last.dim(3);
  require_shape(d_logits, {b, 1, last.dim(2), last.dim(3)}, "mask_head_backward: d_logits");

  Tensor d_act(last.shape());
  for (std::size_t bi = 0; bi < b; ++bi) {
    const double* dl = &d_logits[bi * hw_last];
    for (std::size_t k = 0; k < hw_last; ++k) g.params.logit_bias[0] += dl[k];
    for (std::size_t c = 0; c < c_last; ++c) {
      const double* a = &last[(bi * c_last + c) * hw_last];
      double* da = &d_act[(bi * c_last + c) * hw_last];
      double acc = 0.0;
      for (std::size_t k = 0; k < hw_last; ++k) {
        acc += dl[k] * a[k];
        da[k] = dl[k] * params.logit_weight[c];
      }
      g.params.logit_weight[c] += acc;
    }
  }

  for (std::size_t s = params.stages.size(); s-- > 0;) {
    const UpsampleStage& st = params.stages[s];
    UpsampleStage& gs = g.params.stages[s];
    const MaskHeadCache::Stage& cs = cache.stages[s];
    const Tensor& in = cs.input;
    const std::size_t ci_n = in.dim(1), h = in.dim(2), w = in.dim(3);
    const std::size_t co_n = st.weight.dim(1), oh = 2 * h, ow = 2 * w, hw = oh * ow;
    const double n = static_cast<double>(hw);

    Tensor d_conv({b, co_n, oh, ow});
    for (std::size_t bc = 0; bc < b * co_n; ++bc) {
      const std::size_t co = bc % co_n;
      const double* xhat = &cs.normalized[bc * hw];
      const double* mask = &cs.activated_mask[bc * hw];
      const double* da = &d_act[bc * hw];
      double sum_dxhat = 0.0;
      double sum_dxhat_xhat = 0.0;
      std::vector<double> dxhat(hw);
      for (std::size_t k = 0; k < hw; ++k) {
        const double d = da[k] * mask[k];
        gs.gamma[co] += d * xhat[k];
        gs.beta[co] += d;
        dxhat[k] = d * st.gamma[co];
        sum_dxhat += dxhat[k];
        sum_dxhat_xhat += dxhat[k] * xhat[k];
      }
      const double istd = cs.inv_std[bc];
      double* dc = &d_conv[bc * hw];
      for (std::size_t k = 0; k < hw; ++k) {
        dc[k] = istd / n * (n * dxhat[k] - sum_dxhat - xhat[k] * sum_dxhat_xhat);
        gs.bias[co] += dc[k];
      }
    }

    Tensor d_in(in.shape());
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t ci = 0; ci < ci_n; ++ci) {
        const double* x = &in[(bi * ci_n + ci) * h * w];
        double* dx = &d_in[(bi * ci_n + ci) * h * w];
        for (std::size_t co = 0; co < co_n; ++co) {
          const double* dc = &d_conv[(bi * co_n + co) * hw];
          const double* wk = &st.weight[(ci * co_n + co) * 4];
          double* gw = &gs.weight[(ci * co_n + co) * 4];
          for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
              const double d00 = dc[(2 * i) * ow + 2 * j], d01 = dc[(2 * i) * ow + 2 * j + 1];
              const double d10 = dc[(2 * i + 1) * ow + 2 * j], d11 = dc[(2 * i + 1) * ow + 2 * j + 1];
              const double v = x[i * w + j];
              gw[0] += v * d00;
              gw[1] += v * d01;
              gw[2] += v * d10;
              gw[3] += v * d11;
              dx[i * w + j] += wk[0] * d00 + wk[1] * d01 + wk[2] * d10 + wk[3] * d11;
            }
        }
      }
    d_act = std::move(d_in);
  }
  g.d_input = std::move(d_act);
  return g;
}

}  // namespace posmed::nn
