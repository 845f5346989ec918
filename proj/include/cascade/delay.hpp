#pragma once

#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cascade/rng.hpp"

namespace cascade {

struct ExponentialDelay {
  double rate = 1.0;
};

struct GammaDelay {
  double shape = 1.0;
  double rate = 1.0;
};

/// Uniform on (0, width]; the width is a fixed hyperparameter.
struct UniformDelay {
  double width = 1.0;
};

/// Fixed bins (edges[b-1], edges[b]] with masses probs[b-1]; edges[0] == 0.
struct PiecewiseUniformDelay {
  std::vector<double> edges;
  std::vector<double> probs;
};

struct ExpMixtureDelay {
  std::vector<double> weights;
  std::vector<double> rates;
};

using DelaySpec = std::variant<ExponentialDelay, GammaDelay, UniformDelay, PiecewiseUniformDelay,
                               ExpMixtureDelay>;

struct WeightedDelay {
  double delta = 0.0;
  double weight = 0.0;
};

/// Throws ConfigError on invalid parameters.
void validate(const DelaySpec& spec);
[[nodiscard]] std::string family_name(const DelaySpec& spec);

/// h(delta); exactly 0 for delta <= 0 and beyond a finite support.
[[nodiscard]] double density(const DelaySpec& spec, double delta);
/// H(delta) = integral of h over (0, delta].
[[nodiscard]] double cdf(const DelaySpec& spec, double delta);
[[nodiscard]] double mean(const DelaySpec& spec);
/// Smallest delta whose tail mass 1 - H(delta) is below epsilon; +inf when
/// epsilon <= 0.
[[nodiscard]] double tail_window(const DelaySpec& spec, double epsilon);
[[nodiscard]] double sample(const DelaySpec& spec, Rng& rng);

/// Weighted maximum likelihood within the family of `current`. Fixed
/// hyperparameters (uniform width, piecewise edges) are carried over. For an
/// exponential mixture this is a single inner EM pass started from `current`.
[[nodiscard]] DelaySpec weighted_mle(const DelaySpec& current,
                                     std::span<const WeightedDelay> samples);

/// Exponential rate from sufficient statistics: sum(w) / sum(w * delta).
[[nodiscard]] ExponentialDelay exponential_mle(double total_weight, double weighted_delay);

/// Mixture weights and rates from per-component credits and weighted delays.
[[nodiscard]] ExpMixtureDelay exp_mixture_mle(std::span<const double> credits,
                                              std::span<const double> weighted_delays);

/// Weighted gamma MLE: closed-form rate given shape, Newton on the shape.
[[nodiscard]] GammaDelay gamma_mle(std::span<const WeightedDelay> samples);

/// sum(w * log h(delta)); -inf if some positive-weight sample has zero density.
[[nodiscard]] double weighted_log_density(const DelaySpec& spec,
                                          std::span<const WeightedDelay> samples);

/// Convex combination of parameters (1-t)*a + t*b within one family.
[[nodiscard]] DelaySpec interpolate(const DelaySpec& a, const DelaySpec& b, double t);

}  // namespace cascade
