#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "d2l/generator/generator.hpp"
#include "d2l/nncore/network.hpp"

namespace d2l {

/// z_i: the four per-iteration statistics fed to the stop oracle.
struct FeatureVector {
  double ssim = 0.0;       // mean SSIM(condition, generated)
  double dot = 0.0;        // mean f(condition) . f(generated)
  double quality = 0.0;    // mean quality proxy of generated
  double diversity = 0.0;  // mean per-dimension std of f(generated) over the batch

  std::array<double, 4> values() const { return {ssim, dot, quality, diversity}; }
  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

struct SsimParams {
  std::size_t window = 4;
  std::size_t stride = 2;
  double k1 = 0.01;
  double k2 = 0.03;
  double range = 1.0;
};

/// Mean SSIM over square windows (population statistics).
double ssim(std::span<const double> a, std::span<const double> b, std::size_t grid, const SsimParams& p = {});
double mse(std::span<const double> a, std::span<const double> b);
/// 10 log10(range^2 / mse), capped at 100 dB (identical images).
double psnr(std::span<const double> a, std::span<const double> b, double range = 1.0);
/// Excess kurtosis; 0 for a constant vector.
double excess_kurtosis(std::span<const double> v);
double entropy(std::span<const double> probs);

/// Per-column population std averaged over columns.
double mean_column_std(const Tensor& rows);

FeatureVector compute_features(const Tensor& generated, const Tensor& conditions, const Network& net,
                               const FrozenGenerator& g, std::size_t grid = 12);

using NamedFeatures = std::vector<std::pair<std::string, double>>;

/// The candidate bank: image-level quality, feature-level statistics and
/// classifier uncertainty. `target_head` is the class the prompt is optimized
/// toward (used by the CE member).
NamedFeatures compute_candidate_bank(const Tensor& generated, const Tensor& conditions, const Network& net,
                                     const FrozenGenerator& g, std::size_t target_head, std::size_t grid = 12);
std::vector<std::string> candidate_names();

}  // namespace d2l
