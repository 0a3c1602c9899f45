#include "posmed/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "posmed/nn/fusion.hpp"
#include "posmed/nn/layers.hpp"
#include "posmed/nn/losses.hpp"
#include "posmed/nn/mask_head.hpp"
#include "posmed/nn/tensor.hpp"
#include "posmed/parallel.hpp"

namespace posmed::nn {
namespace {

struct Input {
  std::string name;
  Tensor* value;
  Tensor* grad;
};

void require_finite(const Tensor& t, const std::string& where) {
  if (t.all_finite()) return;
  const auto it = std::find_if(t.values().begin(), t.values().end(), [](double v) { return !std::isfinite(v); });
  throw NumericError("non-finite value in " + where + " at flat index " +
                     std::to_string(it - t.values().begin()));
}

void require_finite(double v, const std::string& where) {
  if (!std::isfinite(v)) throw NumericError("non-finite value in " + where);
}

Tensor random_binary(Shape shape, UniformSource& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.next(0.0, 1.0) < 0.5 ? 0.0 : 1.0;
  return t;
}

// Holds every tensor of one check so that closures can perturb in place.
struct Problem {
  FusionParams fusion;
  FusionParams fusion_grad;
  MaskHeadParams head;
  MaskHeadParams head_grad;
  Linear lm_head;
  Linear lm_head_grad;
  Tensor z_image, d_image;
  Tensor z_emb, d_emb;
  Tensor probe;  // fixed weights r for the fuse objective
  Tensor logits, d_logits;
  Tensor gt;
  TokenIds targets;
  std::vector<Input> inputs;
  std::function<double()> loss;
  std::function<void()> backward;
  // Fills `inputs`; runs after backward so gradient storage is final.
  std::function<void()> enumerate;
};

void register_fusion(Problem& p) {
  std::vector<Tensor*> values;
  std::vector<std::pair<std::string, Tensor*>> grads;
  p.fusion.visit([&](const std::string&, Tensor& t) { values.push_back(&t); });
  p.fusion_grad.visit([&](const std::string& name, Tensor& t) { grads.emplace_back(name, &t); });
  for (std::size_t i = 0; i < values.size(); ++i) {
    p.inputs.push_back({"fusion." + grads[i].first, values[i], grads[i].second});
  }
  p.inputs.push_back({"z_image", &p.z_image, &p.d_image});
  p.inputs.push_back({"z_emb", &p.z_emb, &p.d_emb});
}

void register_head(Problem& p) {
  std::vector<Tensor*> values;
  std::vector<std::pair<std::string, Tensor*>> grads;
  p.head.visit([&](const std::string&, Tensor& t) { values.push_back(&t); });
  p.head_grad.visit([&](const std::string& name, Tensor& t) { grads.emplace_back(name, &t); });
  for (std::size_t i = 0; i < values.size(); ++i) {
    p.inputs.push_back({"mask_head." + grads[i].first, values[i], grads[i].second});
  }
}

FusionConfig fusion_config(const GradCheckConfig& c, bool linear_only) {
  FusionConfig f;
  f.image_channels = c.channels;
  f.embed_dim = c.embed_dim;
  f.shared_dim = c.channels;
  f.heads = c.heads;
  f.self_attention = !linear_only;
  f.attention = linear_only ? AttentionKind::Uniform : AttentionKind::Softmax;
  return f;
}

void setup_fusion_inputs(Problem& p, const GradCheckConfig& c, bool linear_only, UniformSource& rng) {
  p.fusion = FusionParams::uniform(fusion_config(c, linear_only), rng, c.init_range);
  p.z_image = uniform_tensor({c.batch, c.channels, c.grid, c.grid}, rng, -c.init_range, c.init_range);
  p.z_emb = uniform_tensor({c.batch, c.tokens, c.embed_dim}, rng, -c.init_range, c.init_range);
}

void build_fuse(Problem& p, const GradCheckConfig& c, bool linear_only, UniformSource& rng) {
  setup_fusion_inputs(p, c, linear_only, rng);
  p.probe = uniform_tensor(p.z_image.shape(), rng, -1.0, 1.0);
  p.enumerate = [&p] { register_fusion(p); };
  p.loss = [&p] {
    const Tensor out = fuse(p.z_image, p.z_emb, p.fusion);
    require_finite(out, "fuse output");
    double sum = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) sum += p.probe[i] * out[i];
    return sum;
  };
  p.backward = [&p] {
    FusionCache cache;
    const Tensor out = fuse(p.z_image, p.z_emb, p.fusion, &cache);
    FusionGrads g = fuse_backward(p.probe, p.z_image, p.z_emb, p.fusion, cache);
    p.fusion_grad = std::move(g.params);
    p.d_image = std::move(g.d_image);
    p.d_emb = std::move(g.d_emb);
  };
}

void build_seg_loss(Problem& p, const GradCheckConfig& c, UniformSource& rng) {
  const std::size_t side = c.grid << c.mask_stages;
  p.logits = uniform_tensor({c.batch, 1, side, side}, rng, -2.0, 2.0);
  p.gt = random_binary(p.logits.shape(), rng);
  p.enumerate = [&p] { p.inputs.push_back({"logits", &p.logits, &p.d_logits}); };
  p.loss = [&p] {
    const double l = seg_loss(p.logits, p.gt);
    require_finite(l, "seg_loss");
    return l;
  };
  p.backward = [&p] { seg_loss(p.logits, p.gt, &p.d_logits); };
}

void build_text_loss(Problem& p, const GradCheckConfig& c, UniformSource& rng) {
  p.lm_head = Linear::uniform(c.embed_dim, c.vocab, rng, 1.0);
  p.z_emb = uniform_tensor({c.batch, c.tokens, c.embed_dim}, rng, -1.0, 1.0);
  p.targets = {c.batch, c.tokens, {}};
  for (std::size_t i = 0; i < c.batch * c.tokens; ++i) {
    p.targets.ids.push_back(static_cast<std::int64_t>(rng.raw() % c.vocab));
  }
  if (c.tokens > 1) p.targets.ids.back() = kIgnoreToken;
  p.enumerate = [&p] {
    p.inputs.push_back({"lm_head.weight", &p.lm_head.weight, &p.lm_head_grad.weight});
    p.inputs.push_back({"lm_head.bias", &p.lm_head.bias, &p.lm_head_grad.bias});
    p.inputs.push_back({"hidden", &p.z_emb, &p.d_emb});
  };
  const Shape flat{c.batch * c.tokens, c.embed_dim};
  const Shape logits_shape{c.batch, c.tokens, c.vocab};
  p.loss = [&p, flat, logits_shape] {
    const Tensor logits = linear_forward(p.z_emb.reshaped(flat), p.lm_head).reshaped(logits_shape);
    require_finite(logits, "lm_head output");
    const double l = text_loss(logits, p.targets);
    require_finite(l, "text_loss");
    return l;
  };
  p.backward = [&p, flat, logits_shape] {
    const Tensor x = p.z_emb.reshaped(flat);
    const Tensor logits = linear_forward(x, p.lm_head).reshaped(logits_shape);
    Tensor d_logits;
    text_loss(logits, p.targets, &d_logits);
    p.lm_head_grad = Linear::zeros(p.lm_head.in_features(), p.lm_head.out_features());
    p.d_emb = linear_backward(x, p.lm_head, d_logits.reshaped({flat[0], logits_shape[2]}), p.lm_head_grad)
                  .reshaped(p.z_emb.shape());
  };
}

void build_composite(Problem& p, const GradCheckConfig& c, UniformSource& rng) {
  setup_fusion_inputs(p, c, false, rng);
  MaskHeadConfig hc;
  hc.in_channels = c.channels;
  hc.stages = c.mask_stages;
  p.head = MaskHeadParams::uniform(hc, rng, c.init_range);
  p.gt = random_binary(mask_head_output_shape(p.z_image.shape(), hc), rng);
  p.enumerate = [&p] {
    register_fusion(p);
    register_head(p);
  };
  p.loss = [&p] {
    const Tensor fused = fuse(p.z_image, p.z_emb, p.fusion);
    require_finite(fused, "fuse output");
    const Tensor logits = mask_head(fused, p.head);
    require_finite(logits, "mask_head output");
    const double l = seg_loss(logits, p.gt);
    require_finite(l, "seg_loss");
    return l;
  };
  p.backward = [&p] {
    FusionCache fcache;
    const Tensor fused = fuse(p.z_image, p.z_emb, p.fusion, &fcache);
    MaskHeadCache hcache;
    const Tensor logits = mask_head(fused, p.head, &hcache);
    Tensor d_logits;
    seg_loss(logits, p.gt, &d_logits);
    MaskHeadGrads hg = mask_head_backward(d_logits, p.head, hcache);
    p.head_grad = std::move(hg.params);
    FusionGrads fg = fuse_backward(hg.d_input, p.z_image, p.z_emb, p.fusion, fcache);
    p.fusion_grad = std::move(fg.params);
    p.d_image = std::move(fg.d_image);
    p.d_emb = std::move(fg.d_emb);
  };
}

}  // namespace

std::string_view component_name(GradComponent c) {
  switch (c) {
    case GradComponent::Fuse: return "fuse";
    case GradComponent::SegLoss: return "seg_loss";
    case GradComponent::TextLoss: return "text_loss";
    case GradComponent::Composite: return "composite";
    case GradComponent::Linear: return "linear";
  }
  return "?";
}

std::optional<GradComponent> component_from_name(std::string_view name) {
  for (GradComponent c : kAllComponents) {
    if (component_name(c) == name) return c;
  }
  return std::nullopt;
}

double block_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor) {
  if (analytic.size() != numeric.size()) throw std::invalid_argument("block_relative_error: length mismatch");
  double diff = 0.0;
  double scale = floor;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / scale;
}

GradCheckResult grad_check(GradComponent component, std::uint64_t seed, const GradCheckConfig& config) {
  UniformSource rng(seed);
  Problem p;
  switch (component) {
    case GradComponent::Fuse: build_fuse(p, config, false, rng); break;
    case GradComponent::Linear: build_fuse(p, config, true, rng); break;
    case GradComponent::SegLoss: build_seg_loss(p, config, rng); break;
    case GradComponent::TextLoss: build_text_loss(p, config, rng); break;
    case GradComponent::Composite: build_composite(p, config, rng); break;
  }
  p.loss();
  p.backward();
  p.enumerate();

  GradCheckResult result;
  result.component = component;
  result.seed = seed;
  const double h = config.step;
  double diff_sq = 0.0, analytic_sq = 0.0, numeric_sq = 0.0;
  double worst_diff = -1.0;
  for (const Input& in : p.inputs) {
    Tensor& x = *in.value;
    const Tensor& g = *in.grad;
    if (g.shape() != x.shape()) {
      throw std::logic_error("gradient of " + in.name + " has shape " + shape_string(g.shape()) + ", expected " +
                             shape_string(x.shape()));
    }
    std::vector<double> numeric(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + h;
      const double up = p.loss();
      x[i] = saved - h;
      const double down = p.loss();
      x[i] = saved;
      numeric[i] = (up - down) / (2.0 * h);
    }
    const double block = block_relative_error(g.data(), numeric, config.error_floor);
    if (block > result.worst_block_error || result.worst_block.empty()) {
      result.worst_block_error = block;
      result.worst_block = in.name;
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = g[i] - numeric[i];
      diff_sq += d * d;
      analytic_sq += g[i] * g[i];
      numeric_sq += numeric[i] * numeric[i];
      if (std::abs(d) > worst_diff) {
        worst_diff = std::abs(d);
        result.worst = in.name + "[" + std::to_string(i) + "]";
        result.worst_analytic = g[i];
        result.worst_numeric = numeric[i];
      }
    }
    result.checked += x.size();
  }
  result.max_abs_error = std::max(worst_diff, 0.0);
  result.max_rel_error =
      std::sqrt(diff_sq) / std::max({std::sqrt(analytic_sq), std::sqrt(numeric_sq), config.error_floor});
  return result;
}

std::vector<GradCheckResult> grad_check_seeds(GradComponent component, std::span<const std::uint64_t> seeds,
                                              const GradCheckConfig& config, std::size_t jobs) {
  std::vector<GradCheckResult> out(seeds.size());
  parallel_for(seeds.size(), jobs, [&](std::size_t i) { out[i] = grad_check(component, seeds[i], config); });
  return out;
}

}  // namespace posmed::nn
