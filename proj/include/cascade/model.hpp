#pragma once

#include <string>
#include <variant>
#include <vector>

#include "cascade/delay.hpp"
#include "cascade/event.hpp"
#include "cascade/fertility.hpp"
#include "cascade/transition.hpp"

namespace cascade {

struct HomogeneousRate {
  double rate = 1.0;
};

/// Step function repeating with period P: rates[k] on [kP/K, (k+1)P/K).
struct PeriodicRate {
  double period = 1.0;
  std::vector<double> rates;
};

using BaselineRate = std::variant<HomogeneousRate, PeriodicRate>;

struct BaselineSpec {
  BaselineRate rate;
  MarkPrior prior;
  bool fit_prior = true;  // re-estimate the prior from baseline responsibilities
};

/// Which events may act as parents of a component in a per-node view:
/// any event, events on the view's own node, or events on other nodes.
enum class SourceFilter { any, own, other };

struct KernelComponent {
  std::string name;
  FertilitySpec fertility;
  TransitionSpec transition;
  DelaySpec delay;
  SourceFilter source = SourceFilter::any;
  // Components sharing a non-empty group name share one fitted transition.
  std::string transition_group;
};

struct ModelSpec {
  std::string name;
  BaselineSpec baseline;
  std::vector<KernelComponent> components;
  bool normalize = true;
  double epsilon = 1e-6;  // delay tail mass below which parents are dropped
};

void validate(const ModelSpec& model, const MarkSchema& schema);
void validate(const BaselineSpec& baseline, const MarkSchema& schema);

[[nodiscard]] double baseline_rate(const BaselineRate& rate, double t);
/// Integral of the baseline rate over (a, b].
[[nodiscard]] double baseline_integral(const BaselineRate& rate, double a, double b);
/// Time spent in each periodic bucket within (a, b].
[[nodiscard]] std::vector<double> bucket_durations(const PeriodicRate& rate, double a, double b);
[[nodiscard]] int bucket_of(const PeriodicRate& rate, double t);

/// Whether `parent` may trigger events in `data` through a component with
/// this filter.
[[nodiscard]] bool source_allows(SourceFilter filter, const Dataset& data, const Mark& parent);

/// True when the M-step is a penalized (MAP-style) update, so the plain
/// likelihood need not increase monotonically.
[[nodiscard]] bool is_regularized(const ModelSpec& model);

/// Multiplies baseline rates and every fertility by s.
[[nodiscard]] ModelSpec scale_rates(const ModelSpec& model, double s);

/// Resolves priors marked as empirical (empty parameter vectors) from data.
[[nodiscard]] ModelSpec resolve_priors(const ModelSpec& model, const Dataset& data);

}  // namespace cascade
