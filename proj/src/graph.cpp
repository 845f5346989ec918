#include "cascade/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "cascade/errors.hpp"
#include "cascade/io.hpp"
#include "cascade/parallel.hpp"

namespace cascade {

namespace {

constexpr const char* kSelf = "self";
constexpr const char* kNeighbor = "neighbor";
constexpr const char* kShared = "shared";

// Transition context of a component: its group if it has one, else its name.
const std::string& context_of(const KernelComponent& c) {
  return c.transition_group.empty() ? c.name : c.transition_group;
}

Eigen::MatrixXd uniform_rows(int L) {
  return Eigen::MatrixXd::Constant(L, L, 1.0 / static_cast<double>(L));
}

}  // namespace

int Graph::index(std::string_view id) const {
  auto it = std::find(nodes.begin(), nodes.end(), id);
  return it == nodes.end() ? -1 : static_cast<int>(it - nodes.begin());
}

Graph Graph::from_edges(std::vector<std::string> nodes, const std::vector<std::pair<int, int>>& edges) {
  Graph g;
  g.nodes = std::move(nodes);
  g.incoming.assign(g.nodes.size(), {});
  g.outgoing.assign(g.nodes.size(), {});
  for (const auto& [u, v] : edges) {
    if (u < 0 || v < 0 || u >= static_cast<int>(g.size()) || v >= static_cast<int>(g.size()))
      throw DataError("edge endpoint out of range");
    if (u == v) continue;  // self-excitation is the own-node component
    g.outgoing[u].push_back(v);
    g.incoming[v].push_back(u);
  }
  for (auto* lists : {&g.incoming, &g.outgoing})
    for (auto& l : *lists) {
      std::sort(l.begin(), l.end());
      l.erase(std::unique(l.begin(), l.end()), l.end());
    }
  return g;
}

Graph parse_graph(std::istream& in, std::string_view source) {
  std::vector<std::string> nodes;
  std::vector<std::pair<std::string, std::vector<std::string>>> lines;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = std::string(source) + ": line " + std::to_string(line_no) + ": ";
    try {
      const auto j = nlohmann::json::parse(text);
      for (const auto& [key, _] : j.items())
        if (key != "node" && key != "out") throw DataError(where + "unknown key '" + key + "'");
      auto id = j.at("node").get<std::string>();
      auto out = j.contains("out") ? j.at("out").get<std::vector<std::string>>() : std::vector<std::string>{};
      if (std::find(nodes.begin(), nodes.end(), id) != nodes.end())
        throw DataError(where + "node '" + id + "' listed twice");
      nodes.push_back(id);
      lines.emplace_back(std::move(id), std::move(out));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + e.what());
    }
  }
  Graph probe;
  probe.nodes = nodes;
  std::vector<std::pair<int, int>> edges;
  for (std::size_t u = 0; u < lines.size(); ++u) {
    for (const auto& target : lines[u].second) {
      const int v = probe.index(target);
      if (v < 0)
        throw DataError(std::string(source) + ": edge from '" + lines[u].first + "' to unknown node '" + target + "'");
      edges.emplace_back(static_cast<int>(u), v);
    }
  }
  return Graph::from_edges(std::move(nodes), edges);
}

Graph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open graph file " + path.string());
  return parse_graph(in, path.string());
}

Dataset align_to_graph(const Graph& graph, const Dataset& data) {
  if (data.schema.kind != MarkKind::composite) throw DataError("graph fitting needs node-tagged events");
  Dataset out = data;
  out.schema.nodes = graph.nodes;
  for (auto& e : out.events) {
    auto& m = std::get<NodeMark>(e.mark);
    const auto& name = data.schema.nodes.at(m.node);
    const int v = graph.index(name);
    if (v < 0) throw DataError("event " + std::to_string(e.id) + " is on node '" + name + "', which is not in the graph");
    m.node = v;
  }
  return out;
}

std::vector<NodeView> build_neighborhoods(const Graph& graph, const Dataset& data) {
  if (data.schema.kind != MarkKind::composite) throw DataError("neighborhoods need node-tagged events");
  if (data.schema.nodes != graph.nodes)
    throw DataError("dataset nodes are not aligned with the graph (align_to_graph first)");
  std::vector<std::vector<std::size_t>> by_node(graph.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int v = node_of(data.events[i].mark);
    if (v < 0 || v >= static_cast<int>(graph.size())) throw DataError("event " + std::to_string(i) + " is on an unknown node");
    by_node[v].push_back(i);
  }
  std::vector<NodeView> views(graph.size());
  for (std::size_t v = 0; v < graph.size(); ++v) {
    views[v].node = static_cast<int>(v);
    views[v].own = by_node[v];
    auto& causes = views[v].causes;
    causes = by_node[v];
    for (int u : graph.incoming[v]) causes.insert(causes.end(), by_node[u].begin(), by_node[u].end());
    std::sort(causes.begin(), causes.end());
  }
  return views;
}

Dataset materialize(const NodeView& view, const Dataset& data) {
  Dataset out;
  out.schema = data.schema;
  out.start = data.start;
  out.horizon = data.horizon;
  out.target_node = view.node;
  out.first_target = 0;
  for (std::size_t i : view.causes) {
    if (i >= data.size()) break;
    Event e = data.events[i];
    e.id = out.events.size();
    if (i < data.first_target) ++out.first_target;
    out.events.push_back(std::move(e));
  }
  return out;
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::no_neighbors: return "no_neighbors";
    case Variant::shared_transition: return "shared_transition";
    case Variant::separate_transitions: return "separate_transitions";
    case Variant::per_neighbor: return "per_neighbor";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (auto v : {Variant::no_neighbors, Variant::shared_transition, Variant::separate_transitions,
                 Variant::per_neighbor})
    if (variant_name(v) == name) return v;
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (no_neighbors, shared_transition, separate_transitions, per_neighbor)");
}

SharedHyperparams SharedHyperparams::uniform(int types, double magnitude) {
  SharedHyperparams h;
  for (const char* key : {kSelf, kNeighbor, kShared}) h.direction[key] = uniform_rows(types);
  h.magnitude = magnitude;
  return h;
}

ModelSpec with_hyperparams(ModelSpec model, const SharedHyperparams& hyper) {
  for (auto& c : model.components) {
    if (auto* t = std::get_if<CategoricalTransition>(&c.transition)) {
      auto it = hyper.direction.find(context_of(c));
      const Eigen::MatrixXd dir = it != hyper.direction.end() ? it->second : uniform_rows(static_cast<int>(t->theta.rows()));
      t->dirichlet = DirichletPrior{dir, hyper.magnitude};
    }
    if (auto* f = std::get_if<PerSourceFertility>(&c.fertility)) f->pooling = hyper.pooling;
  }
  return model;
}

ModelSpec initial_node_model(Variant variant, const Dataset& view, const CategoricalPrior& type_prior,
                             const SharedHyperparams& hyper, const NodeFitOptions& options) {
  const int L = view.schema.categories();
  ModelSpec m;
  m.name = variant_name(variant);
  m.epsilon = options.epsilon;
  m.normalize = true;
  const double own = static_cast<double>(std::max<std::size_t>(view.target_count(), 1));
  m.baseline.rate = HomogeneousRate{0.5 * own / view.window_length()};
  m.baseline.prior = type_prior;
  m.baseline.fit_prior = false;

  const bool shared = variant == Variant::shared_transition || variant == Variant::per_neighbor;
  auto component = [&](const char* name, SourceFilter source) {
    KernelComponent k;
    k.name = name;
    k.source = source;
    k.fertility = ConstantFertility{options.initial_fertility};
    k.delay = ExponentialDelay{options.initial_delay_rate};
    k.transition_group = shared ? kShared : "";
    auto it = hyper.direction.find(context_of(k));
    k.transition = CategoricalTransition{it != hyper.direction.end() ? it->second : uniform_rows(L), std::nullopt};
    return k;
  };
  m.components.push_back(component(kSelf, SourceFilter::own));
  if (variant != Variant::no_neighbors) {
    auto n = component(kNeighbor, SourceFilter::other);
    if (variant == Variant::per_neighbor)
      n.fertility = PerSourceFertility{std::vector<double>(view.schema.nodes.size(), options.initial_fertility), 0.0};
    m.components.push_back(std::move(n));
  }
  return with_hyperparams(std::move(m), hyper);
}

NodeFit fit_node(const Dataset& train, const Dataset* validation, const ModelSpec& start,
                 const NodeFitOptions& options) {
  if (train.target_count() == 0) throw DataError("node has no events to fit");
  EmOptions em;
  em.max_iters = options.max_iters;
  em.tol = options.tol;
  em.workers = 1;
  ModelSpec model = start;
  model.epsilon = options.epsilon;
  FitReport report = fit(model, train, em);

  NodeFit out;
  out.node = train.target_node;
  out.model = std::move(report.model);
  out.iterations = report.iterations;
  out.train_ll = report.train_ll.back();
  const auto stats = collect_stats(out.model, train, e_step(out.model, train));
  for (std::size_t c = 0; c < out.model.components.size(); ++c) {
    const auto& key = context_of(out.model.components[c]);
    auto [it, fresh] = out.counts.try_emplace(key, stats.components[c].counts);
    if (!fresh) it->second += stats.components[c].counts;
  }
  if (validation) out.val_ll = log_likelihood(out.model, *validation);
  return out;
}

RoundResult fit_round(const std::vector<NodeTask>& tasks, const std::vector<ModelSpec>& starts,
                      const NodeFitOptions& options, int workers) {
  if (starts.size() != tasks.size()) throw ConfigError("one start model per node task is required");
  std::vector<NodeFit> fits(tasks.size());
  parallel_for(tasks.size(), workers, [&](std::size_t i) {
    const auto& task = tasks[i];
    const std::string who = "node " + std::to_string(task.node) + ": ";
    try {
      fits[i] = fit_node(task.train, task.validation ? &*task.validation : nullptr, starts[i], options);
    } catch (const ConfigError& e) {
      throw ConfigError(who + e.what());
    } catch (const DataError& e) {
      throw DataError(who + e.what());
    } catch (const std::exception& e) {
      throw NumericalError(who + e.what());
    }
  });
  RoundResult r;
  for (auto& f : fits) {
    for (const auto& [key, m] : f.counts) {
      auto [it, fresh] = r.counts.try_emplace(key, m);
      if (!fresh) it->second += m;
    }
    r.train_ll += f.train_ll;
    r.val_ll += f.val_ll;
  }
  r.nodes = std::move(fits);
  return r;
}

SharedHyperparams update_hyperparams(const std::map<std::string, Eigen::MatrixXd>& counts,
                                     const std::vector<double>& magnitudes,
                                     const std::vector<double>& validation_ll) {
  if (magnitudes.empty() || magnitudes.size() != validation_ll.size())
    throw ConfigError("one validation log-likelihood per candidate magnitude is required");
  SharedHyperparams h;
  for (const auto& [key, m] : counts) {
    if ((m.array() < 0.0).any()) throw NumericalError("negative expected transition counts");
    Eigen::MatrixXd dir = m;
    for (Eigen::Index r = 0; r < dir.rows(); ++r) {
      const double s = dir.row(r).sum();
      if (s > 0.0) {
        dir.row(r) /= s;
      } else {
        spdlog::warn("no transition counts for source type {} in context '{}'; using a uniform direction", r + 1, key);
        dir.row(r).setConstant(1.0 / static_cast<double>(dir.cols()));
      }
    }
    h.direction[key] = dir;
  }
  // Candidates are visited in increasing magnitude so ties keep the smallest.
  std::vector<std::size_t> order(magnitudes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return magnitudes[a] < magnitudes[b]; });
  std::size_t best = order.front();
  for (std::size_t i : order)
    if (validation_ll[i] > validation_ll[best]) best = i;
  h.magnitude = magnitudes[best];
  if (magnitudes.size() > 1 && best == order.back())
    spdlog::warn("selected shrinkage magnitude {} is the largest on the grid", h.magnitude);
  return h;
}

GraphFitReport graph_fit(const Graph& graph, const Dataset& data, const GraphFitOptions& options) {
  if (!(options.train_fraction > 0.0 && options.train_fraction < options.validation_fraction &&
        options.validation_fraction < 1.0))
    throw ConfigError("need 0 < train fraction < validation fraction < 1");
  if (options.magnitudes.empty()) throw ConfigError("the magnitude grid is empty");
  const Dataset aligned = align_to_graph(graph, data);
  const int L = aligned.schema.categories();

  const Dataset train = split(aligned, options.train_fraction).first;
  auto [until_val, test] = split(aligned, options.validation_fraction);
  // Validation window (train cut, validation cut], conditioned on train.
  Dataset validation = until_val;
  validation.start = train.horizon;
  validation.first_target = train.size();

  GraphFitReport report;
  {
    std::vector<double> counts(L, 0.0);
    for (const auto& e : train.events) counts[category_of(e.mark)] += 1.0;
    double n = 0.0;
    for (double c : counts) n += c;
    if (n == 0.0) throw DataError("no events in the training window");
    for (double& c : counts) c /= n;
    report.type_prior.probs = counts;
  }

  const auto views = build_neighborhoods(graph, aligned);
  std::vector<NodeTask> tasks;
  for (const auto& v : views) {
    NodeTask t;
    t.node = v.node;
    t.train = materialize(v, train);
    if (t.train.target_count() == 0) {
      report.skipped.push_back(v.node);
      continue;
    }
    t.validation = materialize(v, validation);
    tasks.push_back(std::move(t));
  }
  if (!report.skipped.empty())
    spdlog::info("{} nodes have no training events and are left out", report.skipped.size());

  SharedHyperparams hyper = SharedHyperparams::uniform(L, options.magnitudes.front());
  std::vector<ModelSpec> starts;
  for (const auto& t : tasks)
    starts.push_back(initial_node_model(options.variant, t.train, report.type_prior, hyper, options.inner));

  const std::vector<double> poolings =
      options.variant == Variant::per_neighbor ? options.poolings : std::vector<double>{0.0};
  for (int round = 1; round <= options.rounds; ++round) {
    std::vector<double> best_per_magnitude(options.magnitudes.size(), -std::numeric_limits<double>::infinity());
    std::vector<double> best_pooling(options.magnitudes.size(), 0.0);
    std::vector<RoundResult> results;
    std::size_t first_row = report.rows.size();
    for (std::size_t mi = 0; mi < options.magnitudes.size(); ++mi) {
      for (double pooling : poolings) {
        SharedHyperparams h = hyper;
        h.magnitude = options.magnitudes[mi];
        h.pooling = pooling;
        std::vector<ModelSpec> s;
        for (const auto& m : starts) s.push_back(with_hyperparams(m, h));
        RoundResult r = fit_round(tasks, s, options.inner, options.workers);
        report.rows.push_back({round, options.variant, h.magnitude, pooling, r.train_ll, r.val_ll, false});
        if (r.val_ll > best_per_magnitude[mi]) {
          best_per_magnitude[mi] = r.val_ll;
          best_pooling[mi] = pooling;
        }
        results.push_back(std::move(r));
      }
    }
    // Pick the winning candidate first, then refresh directions from its counts.
    std::size_t best = 0;
    for (std::size_t k = 0; k < results.size(); ++k)
      if (results[k].val_ll > results[best].val_ll) best = k;
    SharedHyperparams next = update_hyperparams(results[best].counts, options.magnitudes, best_per_magnitude);
    const std::size_t chosen_m = static_cast<std::size_t>(
        std::find(options.magnitudes.begin(), options.magnitudes.end(), next.magnitude) - options.magnitudes.begin());
    next.pooling = best_pooling[chosen_m];
    next.round = round;
    const std::size_t chosen = chosen_m * poolings.size() +
                               static_cast<std::size_t>(std::find(poolings.begin(), poolings.end(), next.pooling) - poolings.begin());
    report.rows[first_row + chosen].selected = true;
    for (const char* key : {kSelf, kNeighbor, kShared})
      if (!next.direction.count(key)) next.direction[key] = hyper.direction.at(key);
    hyper = std::move(next);
    starts.clear();
    for (auto& f : results[chosen].nodes) starts.push_back(std::move(f.model));
  }

  NodeFitOptions polish = options.inner;
  polish.max_iters = options.polish_iters;
  std::vector<ModelSpec> s;
  for (const auto& m : starts) s.push_back(with_hyperparams(m, hyper));
  RoundResult final_round = fit_round(tasks, s, polish, options.workers);
  report.nodes = std::move(final_round.nodes);
  report.hyper = hyper;
  report.test_ll.assign(report.nodes.size(), 0.0);
  parallel_for(report.nodes.size(), options.workers, [&](std::size_t i) {
    report.test_ll[i] = log_likelihood(report.nodes[i].model, materialize(views[tasks[i].node], test));
  });
  for (double v : report.test_ll) report.total_test_ll += v;
  return report;
}

void write_rounds_csv(std::ostream& out, const std::vector<RoundRow>& rows) {
  out << "round,variant,c,pooling,train_ll,val_ll,selected\n";
  for (const auto& r : rows)
    out << r.round << ',' << variant_name(r.variant) << ',' << io::format_double(r.magnitude) << ','
        << io::format_double(r.pooling) << ',' << io::format_double(r.train_ll) << ','
        << io::format_double(r.val_ll) << ',' << (r.selected ? 1 : 0) << '\n';
}

Simulation simulate_graph(const Graph& graph, const GraphTruth& truth, double horizon, std::uint64_t seed,
                          const SimulateOptions& options) {
  const std::size_t V = graph.size();
  const int L = static_cast<int>(truth.type_prior.probs.size());
  if (truth.baseline.size() != V || truth.theta_self.size() != V || truth.theta_neighbor.size() != V)
    throw ConfigError("graph truth needs per-node baselines and transitions");
  const MarkSchema schema = MarkSchema::composite(L, graph.nodes);
  Rng rng = substream(seed, "simulate");

  std::vector<SimEvent> events;
  auto check_cap = [&] {
    if (events.size() > options.max_events)
      throw CapExceeded("graph simulation exceeded the event cap of " + std::to_string(options.max_events) +
                        " events (self fertility " + io::format_double(truth.alpha_self) +
                        ", neighbor fertility " + io::format_double(truth.alpha_neighbor) + " per out-edge)");
  };
  const MarkPrior prior = truth.type_prior;
  for (std::size_t v = 0; v < V; ++v) {
    for (double t : sample_baseline_times(HomogeneousRate{truth.baseline[v]}, horizon, rng)) {
      Mark m = sample_prior(prior, rng);
      events.push_back({t, NodeMark{category_of(m), static_cast<int>(v)}, std::nullopt, kBaselineCause, 0});
      check_cap();
    }
  }
  auto spawn = [&](std::size_t p, int component, int node, const Eigen::MatrixXd& theta, const DelaySpec& delay,
                   double alpha, int gen) {
    const auto count = poisson_inversion(alpha, rng);
    for (std::uint64_t k = 0; k < count; ++k) {
      const double parent_t = events[p].t;
      double t = parent_t + sample(delay, rng);
      Mark child = sample_transition(CategoricalTransition{theta, std::nullopt}, events[p].mark, rng);
      if (t <= parent_t) t = std::nextafter(parent_t, horizon + 1.0);
      if (t > horizon) continue;
      events.push_back({t, NodeMark{category_of(child), node}, p, component, gen});
      check_cap();
    }
  };
  std::size_t begin = 0;
  for (int gen = 1; begin < events.size(); ++gen) {
    const std::size_t end = events.size();
    for (std::size_t p = begin; p < end; ++p) {
      const int u = node_of(events[p].mark);
      spawn(p, 0, u, truth.theta_self[u], truth.delay_self, truth.alpha_self, gen);
      for (int v : graph.outgoing[u]) spawn(p, 1, v, truth.theta_neighbor[v], truth.delay_neighbor, truth.alpha_neighbor, gen);
    }
    begin = end;
  }
  return assemble_simulation(events, horizon, schema);
}

}  // namespace cascade
