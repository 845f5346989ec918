#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cascade/em.hpp"
#include "cascade/simulate.hpp"

namespace cascade {

/// Directed graph; an edge u -> v means events on u may trigger events on v.
struct Graph {
  std::vector<std::string> nodes;
  std::vector<std::vector<int>> incoming;  // sorted, deduplicated
  std::vector<std::vector<int>> outgoing;

  [[nodiscard]] int index(std::string_view id) const;
  [[nodiscard]] std::size_t size() const { return nodes.size(); }

  static Graph from_edges(std::vector<std::string> nodes,
                          const std::vector<std::pair<int, int>>& edges);
};

/// JSON Lines, one {"node": id, "out": [ids]} per line. Targets that never
/// appear as "node" are an error.
[[nodiscard]] Graph parse_graph(std::istream& in, std::string_view source_name = "<graph>");
[[nodiscard]] Graph load_graph(const std::filesystem::path& path);

/// Rewrites node indices of a node-tagged dataset to the graph's order.
/// Throws DataError naming any event node missing from the graph.
[[nodiscard]] Dataset align_to_graph(const Graph& graph, const Dataset& data);

/// Index view of one node: its own events and every candidate cause (own
/// events plus events on in-neighbors), both as ascending event ids.
struct NodeView {
  int node = 0;
  std::vector<std::size_t> own;
  std::vector<std::size_t> causes;
};

[[nodiscard]] std::vector<NodeView> build_neighborhoods(const Graph& graph, const Dataset& data);

/// Dataset over a view's causes with `target_node` set. Conditioning history
/// (events before data.first_target) stays history.
[[nodiscard]] Dataset materialize(const NodeView& view, const Dataset& data);

enum class Variant { no_neighbors, shared_transition, separate_transitions, per_neighbor };

[[nodiscard]] std::string variant_name(Variant v);
[[nodiscard]] Variant parse_variant(std::string_view name);

/// Shrinkage targets shared by all nodes. Directions have one row per source
/// type; "self" and "neighbor" are the transition contexts (the shared
/// variants only use "self").
struct SharedHyperparams {
  std::map<std::string, Eigen::MatrixXd> direction;
  double magnitude = 0.0;
  double pooling = 0.0;  // per-neighbor intensity mix
  int round = 0;

  static SharedHyperparams uniform(int types, double magnitude);
};

struct NodeFitOptions {
  int max_iters = 3;
  double tol = 1e-6;
  double epsilon = 1e-6;
  double initial_delay_rate = 1.0;
  double initial_fertility = 0.25;
};

/// Starting model for a node under a variant.
[[nodiscard]] ModelSpec initial_node_model(Variant variant, const Dataset& view,
                                           const CategoricalPrior& type_prior,
                                           const SharedHyperparams& hyper, const NodeFitOptions& options);
/// Points the model's transition priors and pooling at `hyper`.
[[nodiscard]] ModelSpec with_hyperparams(ModelSpec model, const SharedHyperparams& hyper);

struct NodeFit {
  int node = 0;
  ModelSpec model;
  std::map<std::string, Eigen::MatrixXd> counts;  // expected transition counts per context
  double train_ll = 0.0;
  double val_ll = 0.0;
  int iterations = 0;
};

[[nodiscard]] NodeFit fit_node(const Dataset& train, const Dataset* validation, const ModelSpec& start,
                               const NodeFitOptions& options);

/// One node's work item: train view, optional validation view, start model.
struct NodeTask {
  int node = 0;
  Dataset train;
  std::optional<Dataset> validation;
};

struct RoundResult {
  std::vector<NodeFit> nodes;
  std::map<std::string, Eigen::MatrixXd> counts;  // summed in node order
  double train_ll = 0.0;
  double val_ll = 0.0;
};

/// Fits every task independently on up to `workers` threads and reduces in
/// task order, so the result does not depend on the worker count.
[[nodiscard]] RoundResult fit_round(const std::vector<NodeTask>& tasks,
                                    const std::vector<ModelSpec>& starts,
                                    const NodeFitOptions& options, int workers);

/// Row-normalised pooled counts as directions; the magnitude with the highest
/// validation LL (ties to the smallest; warns when it is the largest).
[[nodiscard]] SharedHyperparams update_hyperparams(const std::map<std::string, Eigen::MatrixXd>& counts,
                                                   const std::vector<double>& magnitudes,
                                                   const std::vector<double>& validation_ll);

struct GraphFitOptions {
  Variant variant = Variant::shared_transition;
  int rounds = 3;
  int workers = 1;
  double train_fraction = 0.6;
  double validation_fraction = 0.8;
  std::vector<double> magnitudes{0.1, 1.0, 10.0, 100.0};
  std::vector<double> poolings{0.0, 0.25, 0.5, 0.75, 1.0};
  NodeFitOptions inner;           // per-round iterations
  int polish_iters = 50;
};

struct RoundRow {
  int round = 0;
  Variant variant = Variant::shared_transition;
  double magnitude = 0.0;
  double pooling = 0.0;
  double train_ll = 0.0;
  double val_ll = 0.0;
  bool selected = false;
};

struct GraphFitReport {
  std::vector<RoundRow> rows;
  std::vector<NodeFit> nodes;      // final polished fits
  std::vector<double> test_ll;     // per final node, conditioned on train+val
  double total_test_ll = 0.0;
  SharedHyperparams hyper;
  CategoricalPrior type_prior;
  std::vector<int> skipped;        // nodes without own training events
};

/// Rounds of (fit every node for each candidate magnitude, pick the best on
/// validation, refresh the directions), then a final polish to tolerance.
[[nodiscard]] GraphFitReport graph_fit(const Graph& graph, const Dataset& data,
                                       const GraphFitOptions& options);

void write_rounds_csv(std::ostream& out, const std::vector<RoundRow>& rows);

/// Ground truth for graph simulations: per-node baselines and transitions.
struct GraphTruth {
  std::vector<double> baseline;                     // per node
  CategoricalPrior type_prior;
  double alpha_self = 0.0, alpha_neighbor = 0.0;
  DelaySpec delay_self = ExponentialDelay{1.0}, delay_neighbor = ExponentialDelay{1.0};
  std::vector<Eigen::MatrixXd> theta_self, theta_neighbor;  // per node (child side)
};

/// Component 0 of the forest is a same-node child, component 1 a child on
/// an out-neighbor.
[[nodiscard]] Simulation simulate_graph(const Graph& graph, const GraphTruth& truth, double horizon,
                                        std::uint64_t seed, const SimulateOptions& options = {});

}  // namespace cascade
