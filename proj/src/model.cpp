#include "cascade/model.hpp"

#include <algorithm>
#include <cmath>

#include "cascade/errors.hpp"

namespace cascade {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

bool prior_is_empty(const MarkPrior& p) {
  return std::visit(overloaded{
                        [](const FeaturePrior& f) { return f.p.empty(); },
                        [](const CategoricalPrior& c) { return c.probs.empty(); },
                    },
                    p);
}

}  // namespace

void validate(const BaselineSpec& baseline, const MarkSchema& schema) {
  std::visit(overloaded{
                 [](const HomogeneousRate& h) {
                   if (!(h.rate >= 0.0) || !std::isfinite(h.rate))
                     throw ConfigError("baseline rate must be >= 0");
                 },
                 [](const PeriodicRate& p) {
                   if (!(p.period > 0.0)) throw ConfigError("baseline period must be positive");
                   if (p.rates.empty()) throw ConfigError("periodic baseline needs at least one bucket");
                   for (double r : p.rates)
                     if (!(r >= 0.0) || !std::isfinite(r)) throw ConfigError("bucket rates must be >= 0");
                 },
             },
             baseline.rate);
  validate(baseline.prior, schema);
}

void validate(const ModelSpec& model, const MarkSchema& schema) {
  validate(model.baseline, schema);
  if (!(model.epsilon >= 0.0 && model.epsilon < 1.0))
    throw ConfigError("truncation epsilon must lie in [0,1)");
  for (const auto& c : model.components) {
    try {
      validate(c.fertility, schema);
      validate(c.transition, schema);
      validate(c.delay);
    } catch (const ConfigError& e) {
      throw ConfigError("component '" + c.name + "': " + e.what());
    }
    if (c.source != SourceFilter::any && schema.kind != MarkKind::composite)
      throw ConfigError("component '" + c.name + "': source filters need node-tagged marks");
  }
}

int bucket_of(const PeriodicRate& rate, double t) {
  const double width = rate.period / static_cast<double>(rate.rates.size());
  const double phase = std::fmod(t, rate.period);
  const int k = static_cast<int>(std::floor(phase / width));
  return std::clamp(k, 0, static_cast<int>(rate.rates.size()) - 1);
}

double baseline_rate(const BaselineRate& rate, double t) {
  return std::visit(overloaded{
                        [](const HomogeneousRate& h) { return h.rate; },
                        [t](const PeriodicRate& p) { return p.rates[bucket_of(p, t)]; },
                    },
                    rate);
}

std::vector<double> bucket_durations(const PeriodicRate& rate, double a, double b) {
  const std::size_t K = rate.rates.size();
  std::vector<double> out(K, 0.0);
  if (!(b > a)) return out;
  const double width = rate.period / static_cast<double>(K);
  // Whole periods first, then the remaining partial stretch bucket by bucket.
  const double periods = std::floor((b - a) / rate.period);
  for (double& d : out) d = periods * width;
  double t = a + periods * rate.period;
  while (t < b) {
    const int k = bucket_of(rate, t);
    const double phase = std::fmod(t, rate.period);
    double end = t + (static_cast<double>(k + 1) * width - phase);
    if (end <= t) end = t + width;  // guards rounding at a bucket edge
    const double stop = std::min(end, b);
    out[k] += stop - t;
    t = stop;
  }
  return out;
}

double baseline_integral(const BaselineRate& rate, double a, double b) {
  if (!(b > a)) return 0.0;
  return std::visit(overloaded{
                        [&](const HomogeneousRate& h) { return h.rate * (b - a); },
                        [&](const PeriodicRate& p) {
                          const auto d = bucket_durations(p, a, b);
                          double s = 0.0;
                          for (std::size_t k = 0; k < d.size(); ++k) s += p.rates[k] * d[k];
                          return s;
                        },
                    },
                    rate);
}

bool source_allows(SourceFilter filter, const Dataset& data, const Mark& parent) {
  switch (filter) {
    case SourceFilter::any:
      return true;
    case SourceFilter::own:
      return node_of(parent) == data.target_node;
    case SourceFilter::other:
      return node_of(parent) != data.target_node;
  }
  return true;
}

bool is_regularized(const ModelSpec& model) {
  for (const auto& c : model.components) {
    if (const auto* t = std::get_if<CategoricalTransition>(&c.transition))
      if (t->dirichlet && t->dirichlet->magnitude > 0.0) return true;
    if (const auto* f = std::get_if<PerSourceFertility>(&c.fertility))
      if (f->pooling > 0.0) return true;
  }
  return false;
}

ModelSpec scale_rates(const ModelSpec& model, double s) {
  ModelSpec out = model;
  std::visit(overloaded{
                 [s](HomogeneousRate& h) { h.rate *= s; },
                 [s](PeriodicRate& p) {
                   for (double& r : p.rates) r *= s;
                 },
             },
             out.baseline.rate);
  for (auto& c : out.components) c.fertility = scale(c.fertility, s);
  return out;
}

ModelSpec resolve_priors(const ModelSpec& model, const Dataset& data) {
  ModelSpec out = model;
  bool need = prior_is_empty(out.baseline.prior);
  for (const auto& c : out.components) {
    if (const auto* p = std::get_if<PriorTransition>(&c.transition)) need |= prior_is_empty(p->prior);
    if (const auto* g = std::get_if<GammaMixTransition>(&c.transition)) need |= g->prior.p.empty();
  }
  if (!need) return out;

  std::vector<double> weights(data.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    weights[i] = data.is_target(i) ? 1.0 : 0.0;
    total += weights[i];
  }
  if (total == 0.0) throw DataError("cannot resolve an empirical prior without events");
  const MarkPrior fallback = data.schema.kind == MarkKind::features
                                 ? MarkPrior{FeaturePrior{}}
                                 : MarkPrior{CategoricalPrior{}};
  const MarkPrior empirical = fit_mark_prior(data, weights, fallback);

  if (prior_is_empty(out.baseline.prior)) out.baseline.prior = empirical;
  for (auto& c : out.components) {
    if (auto* p = std::get_if<PriorTransition>(&c.transition)) {
      if (prior_is_empty(p->prior)) p->prior = empirical;
    } else if (auto* g = std::get_if<GammaMixTransition>(&c.transition)) {
      if (g->prior.p.empty()) g->prior = std::get<FeaturePrior>(empirical);
    }
  }
  return out;
}

}  // namespace cascade
