#include "cascade/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "cascade/errors.hpp"
#include "cascade/io.hpp"

namespace cascade {

namespace {

[[noreturn]] void cap_exceeded(const ModelSpec& model, const std::vector<SimEvent>& events,
                               std::size_t cap) {
  // Average total fertility of the events generated so far.
  double m = 0.0;
  for (const auto& e : events)
    for (const auto& c : model.components) m += fertility(c.fertility, e.mark);
  m /= static_cast<double>(std::max<std::size_t>(events.size(), 1));
  throw CapExceeded("simulation exceeded the event cap of " + std::to_string(cap) +
                    " events; mean fertility of generated events is " + io::format_double(m) +
                    " (supercritical when >= 1)");
}

}  // namespace

int CausalForest::max_generation() const {
  return generation.empty() ? 0 : *std::max_element(generation.begin(), generation.end());
}

double CausalForest::branching_ratio() const {
  if (parent.empty()) return 0.0;
  const auto children = std::count_if(parent.begin(), parent.end(), [](const auto& p) { return p.has_value(); });
  return static_cast<double>(children) / static_cast<double>(parent.size());
}

std::vector<double> sample_baseline_times(const BaselineRate& rate, double horizon, Rng& rng) {
  std::vector<double> out;
  auto segment = [&](double a, double b, double r) {
    if (!(r > 0.0)) return;
    double t = a;
    for (;;) {
      t += -std::log(uniform_open(rng)) / r;
      if (t > b) return;
      out.push_back(t);
    }
  };
  if (const auto* h = std::get_if<HomogeneousRate>(&rate)) {
    segment(0.0, horizon, h->rate);
    return out;
  }
  const auto& p = std::get<PeriodicRate>(rate);
  const double width = p.period / static_cast<double>(p.rates.size());
  // Memorylessness lets each bucket stretch restart the gap sampler.
  for (std::size_t step = 0;; ++step) {
    const double a = static_cast<double>(step) * width;
    if (a >= horizon) break;
    const double b = std::min(static_cast<double>(step + 1) * width, horizon);
    segment(a, b, p.rates[step % p.rates.size()]);
  }
  return out;
}

Simulation simulate(const ModelSpec& model, const MarkSchema& schema, double horizon, Rng& rng,
                    const SimulateOptions& options) {
  if (!(horizon > 0.0)) throw ConfigError("simulation horizon must be positive");
  if (schema.kind == MarkKind::composite)
    throw ConfigError("node-tagged marks are simulated through the graph module");
  const ModelSpec& m = model;
  validate(m, schema);

  std::vector<SimEvent> events;
  for (double t : sample_baseline_times(m.baseline.rate, horizon, rng)) {
    events.push_back({t, sample_prior(m.baseline.prior, rng), std::nullopt, kBaselineCause, 0});
    if (events.size() > options.max_events) cap_exceeded(m, events, options.max_events);
  }

  std::size_t begin = 0;
  for (int gen = 1; begin < events.size(); ++gen) {
    const std::size_t end = events.size();
    for (std::size_t p = begin; p < end; ++p) {
      for (std::size_t c = 0; c < m.components.size(); ++c) {
        const auto& comp = m.components[c];
        const Mark parent_mark = events[p].mark;
        const double parent_t = events[p].t;
        const auto count = poisson_inversion(fertility(comp.fertility, parent_mark), rng);
        for (std::uint64_t k = 0; k < count; ++k) {
          double t = parent_t + sample(comp.delay, rng);
          Mark mark = sample_transition(comp.transition, parent_mark, rng);
          if (t <= parent_t) t = std::nextafter(parent_t, horizon + 1.0);
          if (t > horizon) continue;
          events.push_back({t, std::move(mark), p, static_cast<int>(c), gen});
          if (events.size() > options.max_events) cap_exceeded(m, events, options.max_events);
        }
      }
    }
    begin = end;
  }

  return assemble_simulation(events, horizon, schema);
}

Simulation assemble_simulation(const std::vector<SimEvent>& events, double horizon,
                               const MarkSchema& schema) {
  std::vector<std::size_t> order(events.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return events[a].t < events[b].t; });
  std::vector<std::size_t> rank(events.size());
  for (std::size_t i = 0; i < order.size(); ++i) rank[order[i]] = i;

  std::vector<Event> sorted;
  sorted.reserve(events.size());
  Simulation sim;
  sim.forest.parent.resize(events.size());
  sim.forest.component.resize(events.size());
  sim.forest.generation.resize(events.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& e = events[order[i]];
    sorted.push_back({e.t, e.mark, i});
    if (e.parent) sim.forest.parent[i] = rank[*e.parent];
    sim.forest.component[i] = e.component;
    sim.forest.generation[i] = e.generation;
  }
  sim.data = Dataset::build(std::move(sorted), horizon, schema);
  return sim;
}

Simulation simulate(const ModelSpec& model, const MarkSchema& schema, double horizon,
                    std::uint64_t seed, const SimulateOptions& options) {
  Rng rng = substream(seed, "simulate");
  return simulate(model, schema, horizon, rng, options);
}

void write_forest(std::ostream& out, const CausalForest& forest) {
  for (std::size_t i = 0; i < forest.size(); ++i) {
    out << "{\"id\":" << i << ",\"parent\":";
    if (forest.parent[i]) {
      out << *forest.parent[i] << ",\"component\":" << forest.component[i];
    } else {
      out << "null,\"component\":null";
    }
    out << ",\"gen\":" << forest.generation[i] << "}\n";
  }
}

CausalForest read_forest(std::istream& in) {
  CausalForest f;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.at("id").get<std::size_t>() != f.size())
        throw DataError("forest ids must be consecutive from 0");
      if (j.at("parent").is_null()) {
        f.parent.emplace_back();
        f.component.push_back(kBaselineCause);
      } else {
        f.parent.emplace_back(j.at("parent").get<std::size_t>());
        f.component.push_back(j.at("component").get<int>());
      }
      f.generation.push_back(j.at("gen").get<int>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError("forest line " + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("forest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return f;
}

double parent_recovery_score(const CausalForest& truth, const Responsibilities& z) {
  std::size_t scored = 0, correct = 0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const std::size_t i = z.child[r];
    if (i >= truth.size()) throw DataError("responsibilities refer to an event missing from the forest");
    if (!truth.parent[i]) continue;
    ++scored;
    // Mixture sub-causes of one (parent, component) are adjacent; merge them.
    const auto row = z.row(r);
    double best = -1.0;
    std::size_t best_parent = 0;
    int best_component = kBaselineCause;
    for (std::size_t k = 0; k < row.size();) {
      double mass = 0.0;
      std::size_t e = k;
      while (e < row.size() && row[e].parent == row[k].parent && row[e].component == row[k].component) {
        mass += row[e].z;
        ++e;
      }
      if (mass > best) {
        best = mass;
        best_parent = row[k].parent;
        best_component = row[k].component;
      }
      k = e;
    }
    if (best_component != kBaselineCause && best_parent == *truth.parent[i] &&
        best_component == truth.component[i])
      ++correct;
  }
  return scored ? static_cast<double>(correct) / static_cast<double>(scored) : 1.0;
}

}  // namespace cascade
