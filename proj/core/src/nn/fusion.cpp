#include "posmed/nn/fusion.hpp"

#include <cmath>

#include "posmed/error.hpp"

namespace posmed::nn {
namespace {

void check_inputs(const Tensor& z_image, const Tensor& z_emb, const FusionConfig& cfg) {
  cfg.validate();
  if (z_image.rank() != 4) throw ShapeError("fuse: z_image must be [b,C,h,w], got " + shape_string(z_image.shape()));
  if (z_emb.rank() != 3) throw ShapeError("fuse: z_emb must be [b,l,E], got " + shape_string(z_emb.shape()));
  if (z_image.dim(1) != cfg.image_channels) {
    throw ShapeError("fuse: z_image axis 1 (channels) is " + std::to_string(z_image.dim(1)) + ", expected " +
                     std::to_string(cfg.image_channels));
  }
  if (z_emb.dim(0) != z_image.dim(0)) {
    throw ShapeError("fuse: z_emb axis 0 (batch) is " + std::to_string(z_emb.dim(0)) + ", expected " +
                     std::to_string(z_image.dim(0)));
  }
  if (z_emb.dim(1) < 1) throw ShapeError("fuse: z_emb axis 1 (tokens) must be >= 1");
  if (z_emb.dim(2) != cfg.embed_dim) {
    throw ShapeError("fuse: z_emb axis 2 (embedding) is " + std::to_string(z_emb.dim(2)) + ", expected " +
                     std::to_string(cfg.embed_dim));
  }
  if (z_image.dim(2) < 1 || z_image.dim(3) < 1) throw ShapeError("fuse: spatial extents must be >= 1");
}

Tensor image_tokens(const Tensor& z_image, std::size_t bi) {
  const std::size_t c_n = z_image.dim(1);
  const std::size_t hw = z_image.dim(2) * z_image.dim(3);
  Tensor x({hw, c_n});
  const double* src = z_image.data().data() + bi * c_n * hw;
  for (std::size_t c = 0; c < c_n; ++c)
    for (std::size_t p = 0; p < hw; ++p) x[p * c_n + c] = src[c * hw + p];
  return x;
}

Tensor embedding_tokens(const Tensor& z_emb, std::size_t bi) {
  const std::size_t l = z_emb.dim(1);
  const std::size_t e = z_emb.dim(2);
  const auto first = z_emb.values().begin() + static_cast<std::ptrdiff_t>(bi * l * e);
  return Tensor({l, e}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(l * e)));
}

double attention_scale(const FusionConfig& cfg) { return 1.0 / std::sqrt(cfg.d_k()); }

// Cross-attention stage for one batch item, filling `item`.
void cross_stage(const Tensor& z_image, const Tensor& z_emb, const FusionParams& p, std::size_t bi,
                 FusionCache::Item& item) {
  const FusionConfig& cfg = p.config;
  item.tokens = image_tokens(z_image, bi);
  item.query = linear_forward(item.tokens, p.proj_image);
  item.memory = linear_forward(embedding_tokens(z_emb, bi), p.proj_emb);
  item.mixed = attention_forward(item.query, item.memory, item.memory, cfg.heads, attention_scale(cfg), cfg.attention,
                                 &item.cross);
  item.cross_out = linear_forward(item.mixed, p.cross_out);
}

template <typename Params, typename Fn>
void visit_impl(Params& p, Fn&& fn) {
  auto layer = [&](const std::string& name, auto& l) {
    fn(name + ".weight", l.weight);
    fn(name + ".bias", l.bias);
  };
  layer("proj_image", p.proj_image);
  layer("proj_emb", p.proj_emb);
  layer("cross_out", p.cross_out);
  if (p.config.self_attention) {
    layer("sa_query", p.sa_query);
    layer("sa_key", p.sa_key);
    layer("sa_value", p.sa_value);
    layer("sa_out", p.sa_out);
  }
}

}  // namespace

void FusionConfig::validate() const {
  if (heads == 0 || shared_dim % heads != 0) {
    throw ShapeError("fusion: shared_dim " + std::to_string(shared_dim) + " must be divisible by heads " +
                     std::to_string(heads));
  }
  if (shared_dim != image_channels) {
    throw ShapeError("fusion: residual connection needs shared_dim (" + std::to_string(shared_dim) +
                     ") == image_channels (" + std::to_string(image_channels) + ")");
  }
  if (embed_dim == 0) throw ShapeError("fusion: embed_dim must be >= 1");
}

FusionParams FusionParams::zeros(const FusionConfig& c) {
  const std::size_t d = c.shared_dim;
  return {c,
          Linear::zeros(c.image_channels, d),
          Linear::zeros(c.embed_dim, d),
          Linear::zeros(d, d),
          Linear::zeros(d, d),
          Linear::zeros(d, d),
          Linear::zeros(d, d),
          Linear::zeros(d, d)};
}

FusionParams FusionParams::uniform(const FusionConfig& c, UniformSource& rng, double range) {
  FusionParams p = zeros(c);
  p.visit([&](const std::string&, Tensor& t) {
    for (double& v : t.data()) v = rng.next(-range, range);
  });
  return p;
}

void FusionParams::visit(const std::function<void(const std::string&, Tensor&)>& fn) {
  visit_impl(*this, fn);
}

void FusionParams::visit(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  visit_impl(*this, fn);
}

Tensor cross_attention(const Tensor& z_image, const Tensor& z_emb, const FusionParams& params) {
  check_inputs(z_image, z_emb, params.config);
  const std::size_t b = z_image.dim(0);
  const std::size_t hw = z_image.dim(2) * z_image.dim(3);
  const std::size_t d = params.config.shared_dim;
  Tensor out({b, hw, d});
  for (std::size_t bi = 0; bi < b; ++bi) {
    FusionCache::Item item;
    cross_stage(z_image, z_emb, params, bi, item);
    std::copy(item.cross_out.values().begin(), item.cross_out.values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(bi * hw * d));
  }
  return out;
}

Tensor fuse(const Tensor& z_image, const Tensor& z_emb, const FusionParams& params, FusionCache* cache) {
  check_inputs(z_image, z_emb, params.config);
  const FusionConfig& cfg = params.config;
  const std::size_t b = z_image.dim(0);
  const std::size_t c_n = z_image.dim(1);
  const std::size_t hw = z_image.dim(2) * z_image.dim(3);
  const double scale = attention_scale(cfg);

  Tensor out = z_image;  // skip connection
  FusionCache local;
  FusionCache& c = cache ? *cache : local;
  c.items.assign(b, {});
  c.height = z_image.dim(2);
  c.width = z_image.dim(3);
  for (std::size_t bi = 0; bi < b; ++bi) {
    FusionCache::Item& item = c.items[bi];
    cross_stage(z_image, z_emb, params, bi, item);
    Tensor fused = item.cross_out;
    if (cfg.self_attention) {
      item.sa_q = linear_forward(item.cross_out, params.sa_query);
      item.sa_k = linear_forward(item.cross_out, params.sa_key);
      item.sa_v = linear_forward(item.cross_out, params.sa_value);
      item.sa_mixed = attention_forward(item.sa_q, item.sa_k, item.sa_v, cfg.heads, scale, cfg.attention, &item.self);
      fused = linear_forward(item.sa_mixed, params.sa_out);
    }
    double* dst = &out[bi * c_n * hw];
    for (std::size_t ch = 0; ch < c_n; ++ch)
      for (std::size_t p = 0; p < hw; ++p) dst[ch * hw + p] += fused[p * c_n + ch];
  }
  return out;
}

FusionGrads fuse_backward(const Tensor& d_out, const Tensor& z_image, const Tensor& z_emb,
                          const FusionParams& params, const FusionCache& cache) {
  require_shape(d_out, z_image.shape(), "fuse_backward: d_out");
  const FusionConfig& cfg = params.config;
  const std::size_t b = z_image.dim(0);
  const std::size_t c_n = z_image.dim(1);
  const std::size_t hw = z_image.dim(2) * z_image.dim(3);
  const std::size_t l = z_emb.dim(1);
  const std::size_t e = z_emb.dim(2);
  const double scale = attention_scale(cfg);

  FusionGrads g{FusionParams::zeros(cfg), d_out, Tensor(z_emb.shape())};
  for (std::size_t bi = 0; bi < b; ++bi) {
    const FusionCache::Item& item = cache.items.at(bi);
    Tensor d_fused({hw, c_n});
    const double* src = d_out.data().data() + bi * c_n * hw;
    for (std::size_t ch = 0; ch < c_n; ++ch)
      for (std::size_t p = 0; p < hw; ++p) d_fused[p * c_n + ch] = src[ch * hw + p];

    Tensor d_cross = d_fused;
    if (cfg.self_attention) {
      const Tensor d_mixed = linear_backward(item.sa_mixed, params.sa_out, d_fused, g.params.sa_out);
      const AttentionGrads ag =
          attention_backward(d_mixed, item.sa_q, item.sa_k, item.sa_v, cfg.heads, scale, cfg.attention, item.self);
      d_cross = linear_backward(item.cross_out, params.sa_query, ag.dq, g.params.sa_query);
      d_cross += linear_backward(item.cross_out, params.sa_key, ag.dk, g.params.sa_key);
      d_cross += linear_backward(item.cross_out, params.sa_value, ag.dv, g.params.sa_value);
    }
    const Tensor d_mixed = linear_backward(item.mixed, params.cross_out, d_cross, g.params.cross_out);
    const AttentionGrads ag = attention_backward(d_mixed, item.query, item.memory, item.memory, cfg.heads, scale,
                                                 cfg.attention, item.cross);
    Tensor d_memory = ag.dk;
    d_memory += ag.dv;
    const Tensor d_tokens = linear_backward(item.tokens, params.proj_image, ag.dq, g.params.proj_image);
    const Tensor d_emb_b = linear_backward(embedding_tokens(z_emb, bi), params.proj_emb, d_memory, g.params.proj_emb);

    double* di = &g.d_image[bi * c_n * hw];
    for (std::size_t ch = 0; ch < c_n; ++ch)
      for (std::size_t p = 0; p < hw; ++p) di[ch * hw + p] += d_tokens[p * c_n + ch];
    std::copy(d_emb_b.values().begin(), d_emb_b.values().end(),
              g.d_emb.values().begin() + static_cast<std::ptrdiff_t>(bi * l * e));
  }
  return g;
}

}  // namespace posmed::nn
