#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "cascade/event.hpp"
#include "cascade/rng.hpp"

namespace cascade {

/// Independent Bernoulli feature model g(x) = prod p_i^{x_i} (1-p_i)^{1-x_i}.
struct FeaturePrior {
  std::vector<double> p;
};

/// Marginal distribution over labels (or composite types).
struct CategoricalPrior {
  std::vector<double> probs;
};

using MarkPrior = std::variant<FeaturePrior, CategoricalPrior>;

struct IdentityTransition {};

/// Child mark drawn from the prior, independent of the parent.
struct PriorTransition {
  MarkPrior prior;
};

/// Per-feature mixture of copying the parent's value and redrawing from the
/// prior: prod_i ((1-gamma) 1{x_i = x'_i} + gamma Bern(x'_i; p_i)).
struct GammaMixTransition {
  double gamma = 0.5;
  FeaturePrior prior;
};

/// Dirichlet shrinkage target: one direction row per source category, and a
/// magnitude c.
struct DirichletPrior {
  Eigen::MatrixXd direction;
  double magnitude = 0.0;

  /// Same direction vector for every source row.
  static DirichletPrior broadcast(const Eigen::VectorXd& direction, double magnitude);
};

/// Row-stochastic L x L matrix theta[source][target].
struct CategoricalTransition {
  Eigen::MatrixXd theta;
  std::optional<DirichletPrior> dirichlet;
};

using TransitionSpec =
    std::variant<IdentityTransition, PriorTransition, GammaMixTransition, CategoricalTransition>;

[[nodiscard]] std::string kind_name(const TransitionSpec& spec);

/// Throws ConfigError for invalid parameters or a spec that cannot act on the
/// schema's marks.
void validate(const TransitionSpec& spec, const MarkSchema& schema);
void validate(const MarkPrior& prior, const MarkSchema& schema);

[[nodiscard]] double prior_prob(const FeaturePrior& prior, const Features& x);
[[nodiscard]] double prior_prob(const MarkPrior& prior, const Mark& x);

/// Empirical feature frequencies.
[[nodiscard]] FeaturePrior fit_prior(const Dataset& data);
/// Empirical prior of the schema's kind (feature frequencies or label shares).
[[nodiscard]] MarkPrior fit_mark_prior(const Dataset& data);
/// Prior fitted from per-event weights (weights[i] for data.events[i]).
/// Falls back to `current` when the weights sum to zero.
[[nodiscard]] MarkPrior fit_mark_prior(const Dataset& data, std::span<const double> weights,
                                       const MarkPrior& current);

[[nodiscard]] double trans_prob(const TransitionSpec& spec, const Mark& parent, const Mark& child);

/// Child mark given the parent. For composite marks only the type is drawn;
/// the node is copied from the parent.
[[nodiscard]] Mark sample_transition(const TransitionSpec& spec, const Mark& parent, Rng& rng);
[[nodiscard]] Mark sample_prior(const MarkPrior& prior, Rng& rng);

/// Precomputed log-tables for repeated evaluation of one transition spec.
class TransitionEvaluator {
 public:
  explicit TransitionEvaluator(const TransitionSpec& spec);
  [[nodiscard]] double operator()(const Mark& parent, const Mark& child) const;

 private:
  TransitionSpec spec_;
  // GammaMix: log factor when the child's feature i equals / differs from the
  // parent's, indexed [2*i + child_value].
  std::vector<double> log_same_, log_diff_;
  // Prior over features: log Bern(v; p_i), indexed [2*i + v].
  std::vector<double> log_bern_;
};

/// Sufficient statistics for the gamma of g_gamma: weights aggregated by
/// (feature, child value, copied-or-not).
struct GammaMixStats {
  std::vector<double> same, diff;  // indexed [2*i + child_value]

  explicit GammaMixStats(std::size_t width = 0) : same(2 * width, 0.0), diff(2 * width, 0.0) {}
  void add(const Features& parent, const Features& child, double weight);
  GammaMixStats& operator+=(const GammaMixStats& other);
  [[nodiscard]] double total_weight() const { return total_; }

 private:
  double total_ = 0.0;
};

struct GammaSample {
  Features parent;
  Features child;
  double weight = 0.0;
};

/// sum w log g_gamma(x, x') with the prior held fixed (terms that are zero
/// for every gamma are left out).
[[nodiscard]] double gamma_objective(const GammaMixStats& stats, const FeaturePrior& prior,
                                     double gamma);
/// Maximizer of gamma_objective on [0, 1] (concave; bisection to 1e-12).
[[nodiscard]] double fit_gamma(const GammaMixStats& stats, const FeaturePrior& prior);
[[nodiscard]] double fit_gamma(std::span<const GammaSample> samples, const FeaturePrior& prior);

/// Row-wise posterior-mean shrinkage (counts + c*dir) / (rowsum + c); plain
/// row normalisation without a prior. Empty rows without prior become uniform.
[[nodiscard]] CategoricalTransition fit_categorical(const Eigen::MatrixXd& counts,
                                                    const std::optional<DirichletPrior>& dirichlet);

/// CSV with a header row of target labels and a leading source-label column.
void write_matrix_csv(std::ostream& out, const Eigen::MatrixXd& m,
                      const std::vector<std::string>& row_labels,
                      const std::vector<std::string>& col_labels);
/// log(g(x, x') / p(x')) table for the same layout.
void write_log_ratio_csv(std::ostream& out, const Eigen::MatrixXd& m, const Eigen::VectorXd& marginal,
                         const std::vector<std::string>& row_labels,
                         const std::vector<std::string>& col_labels);

}  // namespace cascade
