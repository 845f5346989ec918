#pragma once

#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cascade/event.hpp"

namespace cascade {

struct ConstantFertility {
  double alpha0 = 0.0;
};

/// alpha(x) = alpha0 + beta^T x with alpha0, beta >= 0. With `augmented`,
/// beta has 2F entries acting on (x, 1 - x).
struct LinearFertility {
  double alpha0 = 0.0;
  std::vector<double> beta;
  bool augmented = false;
};

/// alpha(x) = prod_i w_i^{x_i} with w[0] the always-on bias weight.
struct MultiplicativeFertility {
  std::vector<double> w;
};

using FertilityTerm = std::variant<LinearFertility, MultiplicativeFertility>;

/// Sum of linear and multiplicative terms.
struct CombinedFertility {
  std::vector<FertilityTerm> terms;
};

/// One expected-offspring value per source node (composite marks), estimated
/// with pooling weight `pooling` toward the aggregate rate.
struct PerSourceFertility {
  std::vector<double> alpha;
  double pooling = 0.0;
};

using FertilitySpec = std::variant<ConstantFertility, LinearFertility, MultiplicativeFertility,
                                   CombinedFertility, PerSourceFertility>;

[[nodiscard]] std::string kind_name(const FertilitySpec& spec);
void validate(const FertilitySpec& spec, const MarkSchema& schema);

/// Expected number of direct offspring of an event with mark x.
[[nodiscard]] double fertility(const FertilitySpec& spec, const Mark& x);
[[nodiscard]] double fertility(const FertilityTerm& term, const Mark& x);

/// Split of alpha(x) into the bias and each active feature's share.
struct LinearAllocation {
  double bias = 0.0;
  std::vector<std::pair<int, double>> features;  // (beta index, share)
};

[[nodiscard]] LinearAllocation allocate_linear(const LinearFertility& spec, const Mark& x);

/// alpha0 = c_bias / exposure_bias and beta_i = c_i / exposure_i. Terms with
/// zero credit and zero exposure keep their value from `current`.
[[nodiscard]] LinearFertility update_linear(const LinearFertility& current, double bias_credit,
                                            double bias_exposure, std::span<const double> credits,
                                            std::span<const double> exposures);

/// One parent event as seen by the multiplicative update: active weight
/// indices (0 is the bias and is always included), offspring credit, and
/// edge-corrected exposure.
struct MultiplicativeObservation {
  std::vector<int> active;
  double credit = 0.0;
  double exposure = 0.0;
};

/// sum_e credit_e log alpha(x_e) - exposure_e alpha(x_e).
[[nodiscard]] double poisson_objective(const MultiplicativeFertility& spec,
                                       std::span<const MultiplicativeObservation> obs);

/// Cyclic coordinate ascent with the closed-form per-coordinate optimum.
[[nodiscard]] MultiplicativeFertility update_multiplicative(
    const MultiplicativeFertility& current, std::span<const MultiplicativeObservation> obs);

/// Full M-step for one component's fertility: `credit[e]` is the expected
/// number of children assigned to event e, `exposure[e]` its edge-corrected
/// exposure (0 for events that cannot act as parents).
[[nodiscard]] FertilitySpec update_fertility(const FertilitySpec& current,
                                             std::span<const Event> events,
                                             std::span<const double> credit,
                                             std::span<const double> exposure);

/// Multiplies every expected-offspring value by s (multiplicative terms via
/// their bias weight).
[[nodiscard]] FertilitySpec scale(const FertilitySpec& spec, double s);

}  // namespace cascade
