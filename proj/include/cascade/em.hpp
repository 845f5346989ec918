#pragma once

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "cascade/model.hpp"

namespace cascade {

inline constexpr int kBaselineCause = -1;

/// One candidate cause of a child event. `component == kBaselineCause` is the
/// baseline; `sub` indexes exponential-mixture terms (0 otherwise).
struct Cause {
  std::size_t parent = 0;
  int component = kBaselineCause;
  int sub = 0;
  double z = 0.0;
};

/// Sparse responsibilities, one row per target event (CSR layout).
struct Responsibilities {
  std::vector<std::size_t> child;    // event id of each row
  std::vector<std::size_t> offsets;  // rows + 1 entries
  std::vector<Cause> causes;
  std::vector<double> intensity;     // total intensity at each row's event

  [[nodiscard]] std::size_t rows() const { return child.size(); }
  [[nodiscard]] std::span<const Cause> row(std::size_t r) const {
    return std::span<const Cause>(causes).subspan(offsets[r], offsets[r + 1] - offsets[r]);
  }
};

/// Expected-count statistics of one component, as consumed by the M-step.
struct ComponentStats {
  std::vector<double> parent_credit;  // per event id
  double credit = 0.0;
  double weighted_delay = 0.0;        // sum z * delta
  std::vector<double> sub_credit, sub_weighted_delay;  // exponential mixtures
  std::vector<WeightedDelay> delays;  // families without scalar statistics
  Eigen::MatrixXd counts;             // [parent category][child category]
  GammaMixStats gamma;
};

struct SufficientStats {
  std::vector<double> baseline_credit;  // per event id
  std::vector<ComponentStats> components;
  std::vector<double> intensity;        // per event id, 0 for non-targets
  double log_intensity = 0.0;           // sum over targets of log intensity
};

/// Total intensity at (t, x) given every event of `history` strictly before t.
[[nodiscard]] double intensity(const ModelSpec& model, const Dataset& history, double t,
                               const Mark& x);

/// Edge-corrected exposure H(T - t_e) - H(start - t_e) of each event under
/// `delay`; 0 for events the component's source filter excludes.
[[nodiscard]] std::vector<double> exposures(const KernelComponent& component,
                                            const DelaySpec& delay, const Dataset& data);

/// Integral of the total intensity over the window and the mark space.
[[nodiscard]] double compensator(const ModelSpec& model, const Dataset& data);

/// sum log intensity - compensator over the target events. Throws
/// NumericalError naming the event if some intensity is zero.
[[nodiscard]] double log_likelihood(const ModelSpec& model, const Dataset& data, int workers = 1);

[[nodiscard]] Responsibilities e_step(const ModelSpec& model, const Dataset& data, int workers = 1);
[[nodiscard]] SufficientStats collect_stats(const ModelSpec& model, const Dataset& data,
                                            const Responsibilities& z);

/// Whether the exponential recursion applies: label marks, every delay
/// exponential, no source filters.
[[nodiscard]] bool fast_path_applies(const ModelSpec& model, const Dataset& data);
/// Same statistics as collect_stats(e_step) with epsilon = 0, computed by
/// decayed per-label accumulators in O(N * fan-out).
[[nodiscard]] SufficientStats fast_estep_exponential(const ModelSpec& model, const Dataset& data);

/// EM lower bound sum z log(k / z) - compensator; equals the log-likelihood
/// right after e_step.
[[nodiscard]] double lower_bound(const ModelSpec& model, const Dataset& data,
                                 const Responsibilities& z);

[[nodiscard]] ModelSpec m_step(const ModelSpec& model, const Dataset& data,
                               const SufficientStats& stats);
[[nodiscard]] ModelSpec m_step(const ModelSpec& model, const Dataset& data,
                               const Responsibilities& z);

/// Scales all rates so that the compensator equals the number of target events.
[[nodiscard]] ModelSpec normalize(const ModelSpec& model, const Dataset& data);

struct EmOptions {
  int max_iters = 100;
  double tol = 1e-6;
  int workers = 1;
  bool fast_path = true;
};

struct FitReport {
  ModelSpec model;
  std::vector<double> train_ll;
  std::vector<double> test_ll;  // NaN without a test set
  // [iteration][component]
  std::vector<std::vector<double>> fertility_share;
  std::vector<std::vector<double>> delay_mean;
  int iterations = 0;
  bool converged = false;
};

/// EM until the relative gain drops below tol or max_iters M-steps ran.
/// Throws NumericalError if the likelihood drops by more than 1e-8 |LL| for
/// an unregularized model.
[[nodiscard]] FitReport fit(const ModelSpec& initial, const Dataset& data, const EmOptions& options,
                            const Dataset* test = nullptr);

void write_trace_csv(std::ostream& out, const FitReport& report);

}  // namespace cascade
