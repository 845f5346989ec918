#include "cascade/fertility.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <spdlog/spdlog.h>

#include "cascade/errors.hpp"
#include "cascade/regularize.hpp"

namespace cascade {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

constexpr double kWeightFloor = 1e-12;

// Active beta indices of a linear term.
std::vector<int> linear_active(const LinearFertility& spec, const Mark& x) {
  std::vector<int> active = active_features(x);
  if (!spec.augmented) return active;
  const int F = static_cast<int>(spec.beta.size() / 2);
  std::vector<int> out = active;
  std::size_t k = 0;
  for (int i = 0; i < F; ++i) {
    if (k < active.size() && active[k] == i) {
      ++k;
    } else {
      out.push_back(F + i);
    }
  }
  return out;
}

// Active weight indices of a multiplicative term: bias 0 plus 1 + feature.
std::vector<int> multiplicative_active(const Mark& x) {
  std::vector<int> out{0};
  for (int i : active_features(x)) out.push_back(i + 1);
  return out;
}

double linear_value(const LinearFertility& spec, const Mark& x) {
  double a = spec.alpha0;
  for (int i : linear_active(spec, x)) a += spec.beta.at(i);
  return a;
}

double multiplicative_value(const MultiplicativeFertility& spec, const Mark& x) {
  double a = spec.w.at(0);
  for (int i : active_features(x)) a *= spec.w.at(i + 1);
  return a;
}

void validate_term(const FertilityTerm& t, const MarkSchema& schema) {
  const auto F = static_cast<std::size_t>(schema.width());
  std::visit(overloaded{
                 [&](const LinearFertility& l) {
                   if (l.beta.size() != (l.augmented ? 2 * F : F))
                     throw ConfigError("linear fertility beta has the wrong length");
                   if (!(l.alpha0 >= 0.0)) throw ConfigError("linear fertility needs alpha0 >= 0");
                   for (double b : l.beta)
                     if (!(b >= 0.0)) throw ConfigError("linear fertility needs beta >= 0");
                 },
                 [&](const MultiplicativeFertility& m) {
                   if (m.w.size() != F + 1)
                     throw ConfigError("multiplicative fertility needs F+1 weights");
                   for (double w : m.w)
                     if (!(w > 0.0) || !std::isfinite(w))
                       throw ConfigError("multiplicative weights must be positive");
                 },
             },
             t);
}

}  // namespace

std::string kind_name(const FertilitySpec& spec) {
  return std::visit(overloaded{
                        [](const ConstantFertility&) { return std::string("constant"); },
                        [](const LinearFertility&) { return std::string("linear"); },
                        [](const MultiplicativeFertility&) { return std::string("multiplicative"); },
                        [](const CombinedFertility&) { return std::string("combined"); },
                        [](const PerSourceFertility&) { return std::string("per_source"); },
                    },
                    spec);
}

void validate(const FertilitySpec& spec, const MarkSchema& schema) {
  std::visit(overloaded{
                 [](const ConstantFertility& c) {
                   if (!(c.alpha0 >= 0.0) || !std::isfinite(c.alpha0))
                     throw ConfigError("constant fertility must be >= 0");
                 },
                 [&](const LinearFertility& l) { validate_term(l, schema); },
                 [&](const MultiplicativeFertility& m) { validate_term(m, schema); },
                 [&](const CombinedFertility& c) {
                   if (c.terms.empty()) throw ConfigError("combined fertility needs at least one term");
                   for (const auto& t : c.terms) validate_term(t, schema);
                 },
                 [&](const PerSourceFertility& p) {
                   if (schema.kind != MarkKind::composite)
                     throw ConfigError("per-source fertility needs node-tagged marks");
                   if (p.alpha.size() != schema.nodes.size())
                     throw ConfigError("per-source fertility needs one value per node");
                   for (double a : p.alpha)
                     if (!(a >= 0.0)) throw ConfigError("per-source fertility must be >= 0");
                   if (!(p.pooling >= 0.0 && p.pooling <= 1.0))
                     throw ConfigError("pooling weight must lie in [0,1]");
                 },
             },
             spec);
}

double fertility(const FertilityTerm& term, const Mark& x) {
  return std::visit(overloaded{
                        [&](const LinearFertility& l) { return linear_value(l, x); },
                        [&](const MultiplicativeFertility& m) { return multiplicative_value(m, x); },
                    },
                    term);
}

double fertility(const FertilitySpec& spec, const Mark& x) {
  return std::visit(overloaded{
                        [](const ConstantFertility& c) { return c.alpha0; },
                        [&](const LinearFertility& l) { return linear_value(l, x); },
                        [&](const MultiplicativeFertility& m) { return multiplicative_value(m, x); },
                        [&](const CombinedFertility& c) {
                          double a = 0.0;
                          for (const auto& t : c.terms) a += fertility(t, x);
                          return a;
                        },
                        [&](const PerSourceFertility& p) { return p.alpha.at(node_of(x)); },
                    },
                    spec);
}

LinearAllocation allocate_linear(const LinearFertility& spec, const Mark& x) {
  const double a = linear_value(spec, x);
  if (!(a > 0.0)) throw NumericalError("cannot allocate credit: linear fertility is zero");
  LinearAllocation out;
  out.bias = spec.alpha0 / a;
  for (int i : linear_active(spec, x)) out.features.emplace_back(i, spec.beta[i] / a);
  return out;
}

LinearFertility update_linear(const LinearFertility& current, double bias_credit,
                              double bias_exposure, std::span<const double> credits,
                              std::span<const double> exposures) {
  auto ratio = [](double credit, double exposure, double keep, const char* what) {
    if (exposure > 0.0) return credit / exposure;
    if (credit > 0.0) throw NumericalError(std::string("zero exposure with positive credit for ") + what);
    return keep;
  };
  LinearFertility out = current;
  out.alpha0 = ratio(bias_credit, bias_exposure, current.alpha0, "the linear bias");
  for (std::size_t i = 0; i < out.beta.size(); ++i)
    out.beta[i] = ratio(credits[i], exposures[i], current.beta[i], "a linear feature weight");
  return out;
}

double poisson_objective(const MultiplicativeFertility& spec,
                         std::span<const MultiplicativeObservation> obs) {
  double f = 0.0;
  for (const auto& o : obs) {
    double a = 1.0;
    for (int j : o.active) a *= spec.w[j];
    if (o.credit > 0.0) f += o.credit * std::log(a);
    f -= o.exposure * a;
  }
  return f;
}

MultiplicativeFertility update_multiplicative(const MultiplicativeFertility& current,
                                              std::span<const MultiplicativeObservation> obs) {
  MultiplicativeFertility spec = current;
  const std::size_t J = spec.w.size();
  std::vector<std::vector<std::size_t>> touching(J);
  std::vector<double> numer(J, 0.0);
  for (std::size_t e = 0; e < obs.size(); ++e) {
    for (int j : obs[e].active) {
      touching[j].push_back(e);
      numer[j] += obs[e].credit;
    }
  }
  std::vector<double> alpha(obs.size());
  for (std::size_t e = 0; e < obs.size(); ++e) {
    double a = 1.0;
    for (int j : obs[e].active) a *= spec.w[j];
    alpha[e] = a;
  }

  bool floored = false;
  double objective = poisson_objective(spec, obs);
  for (int sweep = 0; sweep < 200; ++sweep) {
    double max_change = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
      if (touching[j].empty()) continue;
      double denom = 0.0;
      for (std::size_t e : touching[j]) denom += obs[e].exposure * alpha[e] / spec.w[j];
      double next;
      if (denom > 0.0) {
        next = numer[j] / denom;
      } else if (numer[j] > 0.0) {
        throw NumericalError("multiplicative fertility: unbounded likelihood in coordinate " +
                             std::to_string(j));
      } else {
        continue;
      }
      if (next < kWeightFloor) {
        next = kWeightFloor;
        floored = true;
      }
      const double factor = next / spec.w[j];
      max_change = std::max(max_change, std::abs(factor - 1.0));
      for (std::size_t e : touching[j]) alpha[e] *= factor;
      spec.w[j] = next;
    }
    const double updated = poisson_objective(spec, obs);
    if (updated < objective - 1e-10 * std::max(1.0, std::abs(objective)))
      throw NumericalError("multiplicative fertility sweep decreased the objective");
    objective = updated;
    if (max_change < 1e-8) break;
  }
  if (floored) spdlog::warn("multiplicative fertility: weights with zero credit clamped to 1e-12");
  return spec;
}

namespace {

FertilityTerm update_term(const FertilityTerm& term, std::span<const Event> events,
                          std::span<const double> credit, std::span<const double> exposure) {
  return std::visit(
      overloaded{
          [&](const LinearFertility& l) -> FertilityTerm {
            double bias_credit = 0.0, bias_exposure = 0.0;
            std::vector<double> c(l.beta.size(), 0.0), x(l.beta.size(), 0.0);
            for (std::size_t e = 0; e < events.size(); ++e) {
              if (exposure[e] == 0.0 && credit[e] == 0.0) continue;
              const auto active = linear_active(l, events[e].mark);
              bias_exposure += exposure[e];
              for (int i : active) x[i] += exposure[e];
              if (credit[e] == 0.0) continue;
              const auto alloc = allocate_linear(l, events[e].mark);
              bias_credit += credit[e] * alloc.bias;
              for (const auto& [i, share] : alloc.features) c[i] += credit[e] * share;
            }
            return update_linear(l, bias_credit, bias_exposure, c, x);
          },
          [&](const MultiplicativeFertility& m) -> FertilityTerm {
            std::vector<MultiplicativeObservation> obs;
            obs.reserve(events.size());
            for (std::size_t e = 0; e < events.size(); ++e) {
              if (exposure[e] == 0.0 && credit[e] == 0.0) continue;
              obs.push_back({multiplicative_active(events[e].mark), credit[e], exposure[e]});
            }
            return update_multiplicative(m, obs);
          },
      },
      term);
}

}  // namespace

FertilitySpec update_fertility(const FertilitySpec& current, std::span<const Event> events,
                               std::span<const double> credit, std::span<const double> exposure) {
  return std::visit(
      overloaded{
          [&](const ConstantFertility& c) -> FertilitySpec {
            double n = 0.0, x = 0.0;
            for (std::size_t e = 0; e < events.size(); ++e) {
              n += credit[e];
              x += exposure[e];
            }
            if (x > 0.0) return ConstantFertility{n / x};
            if (n > 0.0) throw NumericalError("constant fertility: credit without exposure");
            return c;
          },
          [&](const LinearFertility& l) -> FertilitySpec {
            return std::get<LinearFertility>(update_term(l, events, credit, exposure));
          },
          [&](const MultiplicativeFertility& m) -> FertilitySpec {
            return std::get<MultiplicativeFertility>(update_term(m, events, credit, exposure));
          },
          [&](const CombinedFertility& c) -> FertilitySpec {
            // Split each parent's credit across terms in proportion to their values.
            const std::size_t K = c.terms.size();
            std::vector<std::vector<double>> term_credit(K, std::vector<double>(events.size(), 0.0));
            for (std::size_t e = 0; e < events.size(); ++e) {
              if (credit[e] == 0.0) continue;
              double total = 0.0;
              std::vector<double> v(K);
              for (std::size_t k = 0; k < K; ++k) total += v[k] = fertility(c.terms[k], events[e].mark);
              if (!(total > 0.0)) throw NumericalError("combined fertility: credit on a zero-fertility parent");
              for (std::size_t k = 0; k < K; ++k) term_credit[k][e] = credit[e] * v[k] / total;
            }
            CombinedFertility out;
            for (std::size_t k = 0; k < K; ++k)
              out.terms.push_back(update_term(c.terms[k], events, term_credit[k], exposure));
            return out;
          },
          [&](const PerSourceFertility& p) -> FertilitySpec {
            std::vector<double> n(p.alpha.size(), 0.0), m(p.alpha.size(), 0.0);
            for (std::size_t e = 0; e < events.size(); ++e) {
              if (exposure[e] == 0.0 && credit[e] == 0.0) continue;
              const int v = node_of(events[e].mark);
              n.at(v) += credit[e];
              m.at(v) += exposure[e];
            }
            PerSourceFertility out = p;
            const auto reg = regularized_alpha(n, m, p.pooling);
            // Only sources that can act as parents carry information.
            for (std::size_t v = 0; v < reg.size(); ++v)
              if (m[v] > 0.0) out.alpha[v] = reg[v];
            return out;
          },
      },
      current);
}

FertilitySpec scale(const FertilitySpec& spec, double s) {
  auto scale_term = [s](const FertilityTerm& t) -> FertilityTerm {
    return std::visit(overloaded{
                          [s](const LinearFertility& l) -> FertilityTerm {
                            LinearFertility out = l;
                            out.alpha0 *= s;
                            for (double& b : out.beta) b *= s;
                            return out;
                          },
                          [s](const MultiplicativeFertility& m) -> FertilityTerm {
                            MultiplicativeFertility out = m;
                            out.w[0] *= s;
                            return out;
                          },
                      },
                      t);
  };
  return std::visit(overloaded{
                        [s](const ConstantFertility& c) -> FertilitySpec { return ConstantFertility{c.alpha0 * s}; },
                        [&](const LinearFertility& l) -> FertilitySpec {
                          return std::get<LinearFertility>(scale_term(l));
                        },
                        [&](const MultiplicativeFertility& m) -> FertilitySpec {
                          return std::get<MultiplicativeFertility>(scale_term(m));
                        },
                        [&](const CombinedFertility& c) -> FertilitySpec {
                          CombinedFertility out;
                          for (const auto& t : c.terms) out.terms.push_back(scale_term(t));
                          return out;
                        },
                        [s](const PerSourceFertility& p) -> FertilitySpec {
                          PerSourceFertility out = p;
                          for (double& a : out.alpha) a *= s;
                          return out;
                        },
                    },
                    spec);
}

}  // namespace cascade
