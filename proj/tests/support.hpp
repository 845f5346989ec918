#pragma once
// Shared fixtures for unit tests and the acceptance binary: random model
// families, simulated instances, and a comparator for EM statistics.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cascade/em.hpp"
#include "cascade/graph.hpp"
#include "cascade/simulate.hpp"

namespace cascade::fixtures {

inline constexpr int kFamilies = 10;

inline const char* family_label(int family) {
  static const char* names[kFamilies] = {"baseline_only",      "periodic_exp",      "linear_gamma_prior",
                                         "mult_exp_gammamix",  "combined_piecewise", "const_mixture_categorical",
                                         "augmented_uniform",  "three_component",    "linear_labels_gamma",
                                         "per_source_composite"};
  return names[family];
}

struct Instance {
  std::string family;
  MarkSchema schema;
  ModelSpec truth;
  ModelSpec init;
  Dataset data;
};

inline Eigen::MatrixXd random_stochastic(int L, std::mt19937_64& rng, double diag) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Eigen::MatrixXd m(L, L);
  for (int r = 0; r < L; ++r) {
    for (int c = 0; c < L; ++c) m(r, c) = u(rng) + (r == c ? diag : 0.0);
    m.row(r) /= m.row(r).sum();
  }
  return m;
}

inline std::vector<double> random_probs(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.2, 1.0);
  std::vector<double> p(n);
  double s = 0;
  for (auto& x : p) s += (x = u(rng));
  for (auto& x : p) x /= s;
  return p;
}

/// Truth for one family with branching ratio in [0.2, 0.6]; the baseline
/// rate is 1 and the caller picks T.
inline ModelSpec family_truth(int family, std::mt19937_64& rng, MarkSchema& schema) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ModelSpec m;
  m.name = family_label(family);
  m.epsilon = 1e-6;
  const double branching = 0.2 + 0.4 * u(rng);
  auto features = [&](int F) {
    schema = MarkSchema::binary(F);
    std::vector<double> p(F);
    for (auto& x : p) x = 0.2 + 0.6 * u(rng);
    m.baseline = {HomogeneousRate{1.0}, FeaturePrior{p}, true};
    return FeaturePrior{p};
  };
  auto labels = [&](int L) {
    schema = MarkSchema::categorical(L);
    m.baseline = {HomogeneousRate{1.0}, CategoricalPrior{random_probs(L, rng)}, true};
  };
  switch (family) {
    case 0:
      labels(3);
      break;
    case 1: {
      labels(2);
      std::vector<double> rates{0.4, 1.6, 1.0, 0.6};
      m.baseline.rate = PeriodicRate{5.0, rates};
      m.components.push_back({"self", ConstantFertility{branching}, CategoricalTransition{random_stochastic(2, rng, 1.0), std::nullopt},
                              ExponentialDelay{0.5 + 2 * u(rng)}, SourceFilter::any, ""});
      break;
    }
    case 2: {
      const FeaturePrior p = features(3);
      m.components.push_back({"lin", LinearFertility{0.5 * branching, {0.3 * branching, 0.1 * branching, 0.2 * branching}},
                              PriorTransition{p}, GammaDelay{0.6 + u(rng), 1.0 + u(rng)}, SourceFilter::any, ""});
      break;
    }
    case 3: {
      const FeaturePrior p = features(3);
      m.components.push_back({"mul", MultiplicativeFertility{{0.6 * branching, 1.4, 0.7, 1.1}}, GammaMixTransition{0.2 + 0.5 * u(rng), p},
                              ExponentialDelay{0.5 + 2 * u(rng)}, SourceFilter::any, ""});
      break;
    }
    case 4: {
      features(2);
      m.components.push_back({"comb", CombinedFertility{{LinearFertility{0.3 * branching, {0.2 * branching, 0.0}},
                                                         MultiplicativeFertility{{0.4 * branching, 1.3, 0.8}}}},
                              IdentityTransition{}, PiecewiseUniformDelay{{0.0, 0.5, 1.5, 4.0}, {0.5, 0.3, 0.2}},
                              SourceFilter::any, ""});
      break;
    }
    case 5: {
      labels(3);
      m.components.push_back({"mix", ConstantFertility{branching}, CategoricalTransition{random_stochastic(3, rng, 2.0), std::nullopt},
                              ExpMixtureDelay{{0.6, 0.4}, {4.0 + 4 * u(rng), 0.3 + 0.3 * u(rng)}}, SourceFilter::any, ""});
      break;
    }
    case 6: {
      const FeaturePrior p = features(2);
      m.components.push_back({"aug", LinearFertility{0.2 * branching, {0.3 * branching, 0.1 * branching, 0.0, 0.2 * branching}, true},
                              GammaMixTransition{0.3 + 0.4 * u(rng), p}, UniformDelay{1.0 + 2 * u(rng)}, SourceFilter::any, ""});
      break;
    }
    case 7: {
      const FeaturePrior p = features(3);
      const double b = branching / 3;
      m.components.push_back({"copy", ConstantFertility{b}, IdentityTransition{}, ExponentialDelay{8.0}, SourceFilter::any, ""});
      m.components.push_back({"reply", ConstantFertility{b}, GammaMixTransition{0.5, p}, ExponentialDelay{1.0}, SourceFilter::any, ""});
      m.components.push_back({"proxy", ConstantFertility{b}, PriorTransition{p}, ExponentialDelay{0.1}, SourceFilter::any, ""});
      break;
    }
    case 8: {
      labels(3);
      m.components.push_back({"lin", LinearFertility{0.3 * branching, {0.1 * branching, 0.5 * branching, 0.3 * branching}},
                              CategoricalTransition{random_stochastic(3, rng, 1.0), std::nullopt}, GammaDelay{1.5 + u(rng), 2.0},
                              SourceFilter::any, ""});
      break;
    }
    default: {
      // Composite marks: the model for node "a" in a 3-node complete graph.
      schema = MarkSchema::composite(2, {"a", "b", "c"});
      m.baseline = {HomogeneousRate{1.0}, CategoricalPrior{random_probs(2, rng)}, false};
      m.components.push_back({"src", PerSourceFertility{{0.5 * branching, branching, 1.5 * branching}, 0.0},
                              CategoricalTransition{random_stochastic(2, rng, 1.0), std::nullopt},
                              ExponentialDelay{0.5 + 2 * u(rng)}, SourceFilter::any, ""});
      break;
    }
  }
  return m;
}

/// Starting point away from the truth: fertilities and delay rates moved,
/// transitions blended toward uniform. Priors are kept.
inline ModelSpec perturb(const ModelSpec& truth, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.6, 1.5);
  ModelSpec m = truth;
  m.baseline.rate = std::visit(
      [&](auto r) -> BaselineRate {
        if constexpr (std::is_same_v<decltype(r), HomogeneousRate>) {
          r.rate *= u(rng);
        } else {
          for (double& x : r.rates) x = u(rng);
        }
        return r;
      },
      m.baseline.rate);
  for (auto& c : m.components) {
    c.fertility = scale(c.fertility, u(rng));
    if (auto* f = std::get_if<MultiplicativeFertility>(&c.fertility))
      for (std::size_t i = 1; i < f->w.size(); ++i) f->w[i] = 1.0;
    if (auto* e = std::get_if<ExponentialDelay>(&c.delay)) e->rate *= u(rng);
    if (auto* g = std::get_if<GammaDelay>(&c.delay)) g->shape *= u(rng), g->rate *= u(rng);
    if (auto* x = std::get_if<ExpMixtureDelay>(&c.delay))
      for (double& r : x->rates) r *= u(rng);
    if (auto* p = std::get_if<PiecewiseUniformDelay>(&c.delay))
      std::fill(p->probs.begin(), p->probs.end(), 1.0 / static_cast<double>(p->probs.size()));
    if (auto* g = std::get_if<GammaMixTransition>(&c.transition)) g->gamma = 0.5;
    if (auto* t = std::get_if<CategoricalTransition>(&c.transition)) {
      const auto L = t->theta.rows();
      t->theta = 0.5 * t->theta + 0.5 * Eigen::MatrixXd::Constant(L, L, 1.0 / static_cast<double>(L));
    }
  }
  return m;
}

/// Events seen by node 0 of a 3-node complete graph whose nodes all follow
/// `model` (node 0's fertility and transition for every edge).
inline Dataset composite_view(const ModelSpec& model, double horizon, std::uint64_t seed) {
  const Graph g = Graph::from_edges({"a", "b", "c"}, {{0, 1}, {0, 2}, {1, 0}, {1, 2}, {2, 0}, {2, 1}});
  const auto& c = model.components.front();
  const auto& alpha = std::get<PerSourceFertility>(c.fertility).alpha;
  GraphTruth truth;
  truth.baseline.assign(3, std::get<HomogeneousRate>(model.baseline.rate).rate);
  truth.type_prior = std::get<CategoricalPrior>(model.baseline.prior);
  // a self kernel plus one neighbor kernel per out-edge; the mean of the
  // per-source values keeps the total branching ratio comparable
  truth.alpha_self = alpha[0] / 3.0;
  truth.alpha_neighbor = (alpha[1] + alpha[2]) / 6.0;
  truth.delay_self = truth.delay_neighbor = c.delay;
  const auto& theta = std::get<CategoricalTransition>(c.transition).theta;
  truth.theta_self.assign(3, theta);
  truth.theta_neighbor.assign(3, theta);
  const Simulation sim = simulate_graph(g, truth, horizon, seed);
  const Dataset aligned = align_to_graph(g, sim.data);
  return materialize(build_neighborhoods(g, aligned).front(), aligned);
}

/// One simulated instance with an event count in [min_n, max_n].
inline Instance make_instance(int family, std::uint64_t seed, int min_n = 50, int max_n = 500) {
  std::mt19937_64 rng(seed * 7919 + static_cast<std::uint64_t>(family));
  Instance in;
  in.family = family_label(family);
  in.truth = family_truth(family, rng, in.schema);
  const int span = max_n - min_n;
  std::uniform_int_distribution<int> target(min_n + span / 10, max_n - span / 5);
  // Expected count is about T / (1 - m) with unit baseline; aim low and
  // retry so the count lands inside the range.
  double T = 0.6 * target(rng);
  const bool composite = in.schema.kind == MarkKind::composite;
  for (int attempt = 0;; ++attempt) {
    const std::uint64_t sim_seed = seed * 131 + static_cast<std::uint64_t>(attempt);
    Dataset data = composite ? composite_view(in.truth, T / 3.0, sim_seed) : simulate(in.truth, in.schema, T, sim_seed).data;
    const auto n = static_cast<int>(data.size());
    if (n >= min_n && n <= max_n) {
      in.data = std::move(data);
      break;
    }
    if (attempt == 200) throw std::runtime_error("could not simulate an instance of the requested size");
    T *= n < min_n ? 1.3 : 0.75;
  }
  in.init = perturb(in.truth, rng);
  return in;
}

/// Largest relative difference between two statistics bundles, and where.
struct StatsDiff {
  double worst = 0.0;
  std::string where;
};

inline void track(StatsDiff& d, double a, double b, const std::string& what) {
  // relative error; the floor keeps exact zeros on both sides from dividing by 0
  const double v = std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
  if (!(v <= d.worst)) {
    d.worst = v;
    d.where = what;
  }
}

inline StatsDiff compare_stats(const SufficientStats& a, const SufficientStats& b) {
  StatsDiff d;
  auto vec = [&](const std::vector<double>& x, const std::vector<double>& y, const std::string& what) {
    if (x.size() != y.size()) {
      d.worst = INFINITY;
      d.where = what + " size";
      return;
    }
    for (std::size_t i = 0; i < x.size(); ++i) track(d, x[i], y[i], what + "[" + std::to_string(i) + "]");
  };
  vec(a.baseline_credit, b.baseline_credit, "baseline_credit");
  vec(a.intensity, b.intensity, "intensity");
  track(d, a.log_intensity, b.log_intensity, "log_intensity");
  if (a.components.size() != b.components.size()) return {INFINITY, "components"};
  for (std::size_t c = 0; c < a.components.size(); ++c) {
    const auto& x = a.components[c];
    const auto& y = b.components[c];
    const std::string p = "component " + std::to_string(c) + " ";
    vec(x.parent_credit, y.parent_credit, p + "parent_credit");
    track(d, x.credit, y.credit, p + "credit");
    track(d, x.weighted_delay, y.weighted_delay, p + "weighted_delay");
    if (x.counts.size() != y.counts.size()) return {INFINITY, p + "counts size"};
    for (Eigen::Index i = 0; i < x.counts.size(); ++i)
      track(d, x.counts.data()[i], y.counts.data()[i], p + "counts");
  }
  return d;
}

}  // namespace cascade::fixtures
