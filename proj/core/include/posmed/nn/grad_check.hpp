#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace posmed::nn {

enum class GradComponent {
  Fuse,       // sum(r * fuse(z_image, z_emb)) for a fixed random r
  SegLoss,    // seg_loss(logits, gt) w.r.t. logits
  TextLoss,   // text_loss(lm_head(hidden), targets) w.r.t. lm_head and hidden
  Composite,  // seg_loss(mask_head(fuse(z_image, z_emb)), gt)
  Linear,     // Fuse with uniform attention and no self-attention
};

std::string_view component_name(GradComponent c);
std::optional<GradComponent> component_from_name(std::string_view name);
inline constexpr GradComponent kAllComponents[] = {GradComponent::Fuse, GradComponent::SegLoss,
                                                   GradComponent::TextLoss, GradComponent::Composite,
                                                   GradComponent::Linear};

struct GradCheckConfig {
  std::size_t batch = 1;
  std::size_t grid = 2;  // image features are grid x grid
  std::size_t channels = 8;
  std::size_t tokens = 3;
  std::size_t embed_dim = 12;
  std::size_t heads = 2;
  std::size_t vocab = 11;
  std::size_t mask_stages = 1;
  double step = 1e-5;
  double init_range = 0.1;
  // Denominator floor for the relative errors; gradients below it count as zero.
  double error_floor = 1e-6;
};

// Normwise relative error of one parameter tensor:
//   max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|, floor)
double block_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor);

struct GradCheckResult {
  GradComponent component = GradComponent::Fuse;
  std::uint64_t seed = 0;
  // ||a - n||_2 / max(||a||_2, ||n||_2, floor) over every checked entry.
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst;  // "<tensor>[<flat index>]" of the largest |a - n|
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  // Largest block_relative_error over the individual tensors.
  double worst_block_error = 0.0;
  std::string worst_block;
  std::size_t checked = 0;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Throws NumericError naming the first non-finite intermediate.
GradCheckResult grad_check(GradComponent component, std::uint64_t seed, const GradCheckConfig& config = {});

// Runs each seed with its own state on up to `jobs` threads; results keep
// the order of `seeds`.
std::vector<GradCheckResult> grad_check_seeds(GradComponent component, std::span<const std::uint64_t> seeds,
                                              const GradCheckConfig& config = {}, std::size_t jobs = 1);

}  // namespace posmed::nn
