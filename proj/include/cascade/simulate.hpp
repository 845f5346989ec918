#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "cascade/em.hpp"
#include "cascade/model.hpp"
#include "cascade/rng.hpp"

namespace cascade {

/// Parent pointers of a generated dataset. Roots (baseline events) have no
/// parent and component -1.
struct CausalForest {
  std::vector<std::optional<std::size_t>> parent;
  std::vector<int> component;
  std::vector<int> generation;

  [[nodiscard]] std::size_t size() const { return parent.size(); }
  [[nodiscard]] int max_generation() const;
  /// Share of events that have a parent.
  [[nodiscard]] double branching_ratio() const;
};

struct Simulation {
  Dataset data;
  CausalForest forest;
};

struct SimulateOptions {
  std::size_t max_events = 10'000'000;
};

/// Branching construction: baseline immigrants, then each generation's
/// offspring, until a generation is empty. Children past T are dropped.
[[nodiscard]] Simulation simulate(const ModelSpec& model, const MarkSchema& schema, double horizon,
                                  Rng& rng, const SimulateOptions& options = {});
/// Uses the "simulate" sub-stream of `seed`.
[[nodiscard]] Simulation simulate(const ModelSpec& model, const MarkSchema& schema, double horizon,
                                  std::uint64_t seed, const SimulateOptions& options = {});

/// An event as produced by a branching simulation, before sorting.
struct SimEvent {
  double t = 0.0;
  Mark mark;
  std::optional<std::size_t> parent;  // index into the same raw list
  int component = kBaselineCause;
  int generation = 0;
};

/// Sorts raw events by time (creation order breaks ties) and rewrites parent
/// pointers to the sorted ids.
[[nodiscard]] Simulation assemble_simulation(const std::vector<SimEvent>& events, double horizon,
                                             const MarkSchema& schema);

/// Event times of a baseline process on (0, T], in order.
[[nodiscard]] std::vector<double> sample_baseline_times(const BaselineRate& rate, double horizon,
                                                        Rng& rng);

void write_forest(std::ostream& out, const CausalForest& forest);
[[nodiscard]] CausalForest read_forest(std::istream& in);

/// Fraction of non-root events whose highest-responsibility cause is the true
/// (parent, component). Ties go to the baseline, then to the lower parent id.
[[nodiscard]] double parent_recovery_score(const CausalForest& truth, const Responsibilities& z);

}  // namespace cascade
