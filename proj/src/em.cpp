#include "cascade/em.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "cascade/errors.hpp"
#include "cascade/io.hpp"
#include "cascade/parallel.hpp"

namespace cascade {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

constexpr std::size_t kBlock = 256;

struct Kernel {
  const KernelComponent* spec;
  std::vector<double> alpha;  // per event, 0 where the source filter excludes it
  TransitionEvaluator g;
  double window;
  const ExpMixtureDelay* mixture;
};

/// Everything the E-step needs, evaluated once per model.
struct Context {
  const ModelSpec& model;
  const Dataset& data;
  std::vector<double> times;
  std::vector<Kernel> kernels;
  double max_window = 0.0;

  Context(const ModelSpec& m, const Dataset& d) : model(m), data(d) {
    times.reserve(d.size());
    for (const auto& e : d.events) times.push_back(e.t);
    kernels.reserve(m.components.size());
    for (const auto& c : m.components) {
      Kernel k{&c, std::vector<double>(d.size(), 0.0), TransitionEvaluator(c.transition),
               tail_window(c.delay, m.epsilon), std::get_if<ExpMixtureDelay>(&c.delay)};
      for (std::size_t e = 0; e < d.size(); ++e)
        if (source_allows(c.source, d, d.events[e].mark)) k.alpha[e] = fertility(c.fertility, d.events[e].mark);
      max_window = std::max(max_window, k.window);
      kernels.push_back(std::move(k));
    }
  }

  double baseline_value(std::size_t i) const {
    const auto& e = data.events[i];
    return baseline_rate(model.baseline.rate, e.t) * prior_prob(model.baseline.prior, e.mark);
  }

  /// First candidate parent index for a child at time t.
  std::size_t first_parent(double t) const {
    if (!std::isfinite(max_window)) return 0;
    return static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), t - max_window) -
                                    times.begin());
  }

  /// Appends every cause with a positive kernel value at child i (value in
  /// Cause::z) and returns their sum.
  double causes(std::size_t i, std::vector<Cause>& out) const {
    out.clear();
    const auto& child = data.events[i];
    double total = 0.0;
    const double base = baseline_value(i);
    if (base > 0.0) {
      out.push_back({i, kBaselineCause, 0, base});
      total += base;
    }
    const std::size_t hi =
        static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), child.t) - times.begin());
    for (std::size_t j = first_parent(child.t); j < hi; ++j) {
      const double delta = child.t - times[j];
      for (std::size_t c = 0; c < kernels.size(); ++c) {
        const auto& k = kernels[c];
        if (delta > k.window || k.alpha[j] == 0.0) continue;
        const double ag = k.alpha[j] * k.g(data.events[j].mark, child.mark);
        if (ag == 0.0) continue;
        if (k.mixture) {
          for (std::size_t s = 0; s < k.mixture->rates.size(); ++s) {
            const double r = k.mixture->rates[s];
            const double v = ag * k.mixture->weights[s] * r * std::exp(-r * delta);
            if (v > 0.0) {
              out.push_back({j, static_cast<int>(c), static_cast<int>(s), v});
              total += v;
            }
          }
        } else {
          const double v = ag * density(k.spec->delay, delta);
          if (v > 0.0) {
            out.push_back({j, static_cast<int>(c), 0, v});
            total += v;
          }
        }
      }
    }
    return total;
  }

  double cause_value(std::size_t i, const Cause& cause) const {
    if (cause.component == kBaselineCause) return baseline_value(i);
    const auto& k = kernels.at(cause.component);
    const double delta = times[i] - times[cause.parent];
    if (!(delta > 0.0)) return 0.0;
    const double ag = k.alpha[cause.parent] * k.g(data.events[cause.parent].mark, data.events[i].mark);
    if (k.mixture) {
      const double r = k.mixture->rates.at(cause.sub);
      return ag * k.mixture->weights[cause.sub] * r * std::exp(-r * delta);
    }
    return ag * density(k.spec->delay, delta);
  }
};

[[noreturn]] void zero_intensity(const Dataset& data, std::size_t i) {
  std::ostringstream msg;
  msg << "intensity is zero at event " << i << " (t=" << io::format_double(data.events[i].t)
      << "); the model cannot explain it";
  throw NumericalError(msg.str());
}

std::vector<std::size_t> target_ids(const Dataset& data) {
  std::vector<std::size_t> out;
  for (std::size_t i = data.first_target; i < data.size(); ++i)
    if (data.is_target(i)) out.push_back(i);
  return out;
}

bool needs_delay_samples(const DelaySpec& d) {
  return !std::holds_alternative<ExponentialDelay>(d) && !std::holds_alternative<ExpMixtureDelay>(d);
}

SufficientStats empty_stats(const ModelSpec& model, const Dataset& data) {
  SufficientStats s;
  s.baseline_credit.assign(data.size(), 0.0);
  s.intensity.assign(data.size(), 0.0);
  const int L = data.schema.categories();
  for (const auto& c : model.components) {
    ComponentStats cs;
    cs.parent_credit.assign(data.size(), 0.0);
    if (const auto* m = std::get_if<ExpMixtureDelay>(&c.delay)) {
      cs.sub_credit.assign(m->rates.size(), 0.0);
      cs.sub_weighted_delay.assign(m->rates.size(), 0.0);
    }
    if (L > 0) cs.counts = Eigen::MatrixXd::Zero(L, L);
    if (std::holds_alternative<GammaMixTransition>(c.transition))
      cs.gamma = GammaMixStats(static_cast<std::size_t>(data.schema.width()));
    s.components.push_back(std::move(cs));
  }
  return s;
}

// Complete-data objective of a delay with fertilities held at `alpha`:
// sum z log h(delta) - sum_e alpha_e X_e(delay).
double delay_objective(const KernelComponent& comp, const DelaySpec& delay, const ComponentStats& cs,
                       const std::vector<double>& alpha, const Dataset& data) {
  double q = std::visit(
      overloaded{
          [&](const ExponentialDelay& d) { return cs.credit * std::log(d.rate) - d.rate * cs.weighted_delay; },
          [&](const ExpMixtureDelay& d) {
            double v = 0.0;
            for (std::size_t s = 0; s < d.rates.size(); ++s) {
              if (cs.sub_credit[s] == 0.0) continue;
              v += cs.sub_credit[s] * std::log(d.weights[s] * d.rates[s]) - d.rates[s] * cs.sub_weighted_delay[s];
            }
            return v;
          },
          [&](const auto&) { return weighted_log_density(delay, cs.delays); },
      },
      delay);
  const auto x = exposures(comp, delay, data);
  for (std::size_t e = 0; e < x.size(); ++e) q -= alpha[e] * x[e];
  return q;
}

DelaySpec delay_candidate(const DelaySpec& current, const ComponentStats& cs) {
  return std::visit(overloaded{
                        [&](const ExponentialDelay& d) -> DelaySpec {
                          if (!(cs.weighted_delay > 0.0)) return d;
                          return exponential_mle(cs.credit, cs.weighted_delay);
                        },
                        [&](const ExpMixtureDelay& d) -> DelaySpec {
                          auto out = exp_mixture_mle(cs.sub_credit, cs.sub_weighted_delay);
                          for (std::size_t s = 0; s < out.rates.size(); ++s)
                            if (!std::isfinite(out.rates[s])) out.rates[s] = d.rates[s];
                          return out;
                        },
                        [&](const auto&) -> DelaySpec { return weighted_mle(current, cs.delays); },
                    },
                    current);
}

// Generalized M-step for the delay: accept the weighted MLE if it does not
// lower the objective (it ignores the edge-corrected exposure term), otherwise
// back off toward the current parameters.
DelaySpec update_delay(const KernelComponent& comp, const ComponentStats& cs,
                       const std::vector<double>& alpha, const Dataset& data) {
  const DelaySpec candidate = delay_candidate(comp.delay, cs);
  const double q_old = delay_objective(comp, comp.delay, cs, alpha, data);
  double t = 1.0;
  for (int k = 0; k < 40; ++k, t *= 0.5) {
    const DelaySpec trial = t == 1.0 ? candidate : interpolate(comp.delay, candidate, t);
    if (delay_objective(comp, trial, cs, alpha, data) >= q_old) return trial;
  }
  return comp.delay;
}

}  // namespace

double intensity(const ModelSpec& model, const Dataset& history, double t, const Mark& x) {
  double total = baseline_rate(model.baseline.rate, t) * prior_prob(model.baseline.prior, x);
  for (const auto& c : model.components) {
    const double window = tail_window(c.delay, model.epsilon);
    const TransitionEvaluator g(c.transition);
    for (const auto& p : history.events) {
      if (!(p.t < t)) break;
      const double delta = t - p.t;
      if (delta > window || !source_allows(c.source, history, p.mark)) continue;
      total += fertility(c.fertility, p.mark) * g(p.mark, x) * density(c.delay, delta);
    }
  }
  return total;
}

std::vector<double> exposures(const KernelComponent& component, const DelaySpec& delay,
                              const Dataset& data) {
  std::vector<double> out(data.size(), 0.0);
  for (std::size_t e = 0; e < data.size(); ++e) {
    const auto& ev = data.events[e];
    if (!source_allows(component.source, data, ev.mark)) continue;
    out[e] = cdf(delay, data.horizon - ev.t) - cdf(delay, data.start - ev.t);
  }
  return out;
}

double compensator(const ModelSpec& model, const Dataset& data) {
  double total = baseline_integral(model.baseline.rate, data.start, data.horizon);
  for (const auto& c : model.components) {
    const auto x = exposures(c, c.delay, data);
    for (std::size_t e = 0; e < data.size(); ++e)
      if (x[e] != 0.0) total += fertility(c.fertility, data.events[e].mark) * x[e];
  }
  return total;
}

double log_likelihood(const ModelSpec& model, const Dataset& data, int workers) {
  const Context ctx(model, data);
  const auto rows = target_ids(data);
  const std::size_t blocks = (rows.size() + kBlock - 1) / kBlock;
  std::vector<double> partial(blocks, 0.0);
  parallel_for(blocks, workers, [&](std::size_t b) {
    std::vector<Cause> scratch;
    double s = 0.0;
    for (std::size_t r = b * kBlock; r < std::min(rows.size(), (b + 1) * kBlock); ++r) {
      const double lambda = ctx.causes(rows[r], scratch);
      if (!(lambda > 0.0)) zero_intensity(data, rows[r]);
      s += std::log(lambda);
    }
    partial[b] = s;
  });
  double ll = 0.0;
  for (double p : partial) ll += p;
  return ll - compensator(model, data);
}

Responsibilities e_step(const ModelSpec& model, const Dataset& data, int workers) {
  const Context ctx(model, data);
  Responsibilities z;
  z.child = target_ids(data);
  const std::size_t n = z.rows();
  const std::size_t blocks = (n + kBlock - 1) / kBlock;
  std::vector<std::vector<Cause>> block_causes(blocks);
  std::vector<std::size_t> row_size(n, 0);
  z.intensity.assign(n, 0.0);
  parallel_for(blocks, workers, [&](std::size_t b) {
    std::vector<Cause> scratch;
    auto& out = block_causes[b];
    for (std::size_t r = b * kBlock; r < std::min(n, (b + 1) * kBlock); ++r) {
      const double total = ctx.causes(z.child[r], scratch);
      if (!(total > 0.0)) zero_intensity(data, z.child[r]);
      for (auto c : scratch) {
        c.z /= total;
        out.push_back(c);
      }
      row_size[r] = scratch.size();
      z.intensity[r] = total;
    }
  });
  z.offsets.assign(n + 1, 0);
  for (std::size_t r = 0; r < n; ++r) z.offsets[r + 1] = z.offsets[r] + row_size[r];
  z.causes.reserve(z.offsets[n]);
  for (auto& b : block_causes) z.causes.insert(z.causes.end(), b.begin(), b.end());
  return z;
}

SufficientStats collect_stats(const ModelSpec& model, const Dataset& data, const Responsibilities& z) {
  SufficientStats s = empty_stats(model, data);
  const bool categorical = data.schema.categories() > 0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const std::size_t i = z.child[r];
    const auto& child = data.events[i];
    s.intensity[i] = z.intensity[r];
    s.log_intensity += std::log(z.intensity[r]);
    for (const auto& cause : z.row(r)) {
      if (cause.component == kBaselineCause) {
        s.baseline_credit[i] += cause.z;
        continue;
      }
      auto& cs = s.components[cause.component];
      const auto& comp = model.components[cause.component];
      const auto& parent = data.events[cause.parent];
      const double delta = child.t - parent.t;
      cs.parent_credit[cause.parent] += cause.z;
      cs.credit += cause.z;
      cs.weighted_delay += cause.z * delta;
      if (!cs.sub_credit.empty()) {
        cs.sub_credit[cause.sub] += cause.z;
        cs.sub_weighted_delay[cause.sub] += cause.z * delta;
      }
      if (needs_delay_samples(comp.delay)) cs.delays.push_back({delta, cause.z});
      if (categorical) cs.counts(category_of(parent.mark), category_of(child.mark)) += cause.z;
      if (std::holds_alternative<GammaMixTransition>(comp.transition))
        cs.gamma.add(std::get<Features>(parent.mark), std::get<Features>(child.mark), cause.z);
    }
  }
  return s;
}

bool fast_path_applies(const ModelSpec& model, const Dataset& data) {
  if (data.schema.kind != MarkKind::labels) return false;
  for (const auto& c : model.components) {
    if (!std::holds_alternative<ExponentialDelay>(c.delay)) return false;
    if (c.source != SourceFilter::any) return false;
  }
  return true;
}

SufficientStats fast_estep_exponential(const ModelSpec& model, const Dataset& data) {
  if (data.schema.kind != MarkKind::labels)
    throw ConfigError("the exponential recursion needs label marks");
  const int L = data.schema.categories();
  const std::size_t C = model.components.size();
  std::vector<double> lambda(C);
  std::vector<Eigen::MatrixXd> g(C);
  std::vector<std::vector<std::vector<int>>> fanout(C, std::vector<std::vector<int>>(L));
  std::vector<std::vector<double>> alpha(C, std::vector<double>(data.size()));
  for (std::size_t c = 0; c < C; ++c) {
    const auto& comp = model.components[c];
    const auto* d = std::get_if<ExponentialDelay>(&comp.delay);
    if (!d) throw ConfigError("the exponential recursion needs exponential delays");
    lambda[c] = d->rate;
    g[c].resize(L, L);
    for (int k = 0; k < L; ++k) {
      for (int j = 0; j < L; ++j) {
        g[c](k, j) = trans_prob(comp.transition, Label{k}, Label{j});
        if (g[c](k, j) > 0.0) fanout[c][k].push_back(j);
      }
    }
    for (std::size_t e = 0; e < data.size(); ++e) alpha[c][e] = fertility(comp.fertility, data.events[e].mark);
  }

  SufficientStats s = empty_stats(model, data);
  const std::size_t n = data.size();

  // Forward pass. A[c][j] is the triggered intensity toward label j at time
  // `last`, D[c][j] the same sum weighted by each parent's elapsed delay.
  std::vector<std::vector<double>> A(C, std::vector<double>(L, 0.0)), D = A;
  double last = n ? data.events[0].t : 0.0;
  for (std::size_t lo = 0; lo < n;) {
    std::size_t hi = lo;
    const double t = data.events[lo].t;
    while (hi < n && data.events[hi].t == t) ++hi;
    const double gap = t - last;
    for (std::size_t c = 0; c < C; ++c) {
      const double f = std::exp(-lambda[c] * gap);
      for (int j = 0; j < L; ++j) {
        D[c][j] = (D[c][j] + A[c][j] * gap) * f;
        A[c][j] *= f;
      }
    }
    last = t;
    for (std::size_t i = lo; i < hi; ++i) {
      if (!data.is_target(i)) continue;
      const int j = category_of(data.events[i].mark);
      double total = baseline_rate(model.baseline.rate, t) * prior_prob(model.baseline.prior, data.events[i].mark);
      const double base = total;
      for (std::size_t c = 0; c < C; ++c) total += A[c][j];
      if (!(total > 0.0)) zero_intensity(data, i);
      s.intensity[i] = total;
      s.log_intensity += std::log(total);
      s.baseline_credit[i] = base / total;
      for (std::size_t c = 0; c < C; ++c) {
        s.components[c].credit += A[c][j] / total;
        s.components[c].weighted_delay += D[c][j] / total;
      }
    }
    for (std::size_t p = lo; p < hi; ++p) {
      const int k = category_of(data.events[p].mark);
      for (std::size_t c = 0; c < C; ++c) {
        const double a = lambda[c] * alpha[c][p];
        if (a == 0.0) continue;
        for (int j : fanout[c][k]) A[c][j] += a * g[c](k, j);
      }
    }
    lo = hi;
  }

  // Backward pass. R[c][j] sums exp(-lambda (t_i - t)) / intensity_i over
  // later target events i with label j; a parent's credit toward label j is
  // lambda alpha g(j|k) R[c][j].
  std::vector<std::vector<double>> R(C, std::vector<double>(L, 0.0));
  last = n ? data.events[n - 1].t : 0.0;
  for (std::size_t hi = n; hi > 0;) {
    std::size_t lo = hi;
    const double t = data.events[hi - 1].t;
    while (lo > 0 && data.events[lo - 1].t == t) --lo;
    const double gap = last - t;
    for (std::size_t c = 0; c < C; ++c) {
      const double f = std::exp(-lambda[c] * gap);
      for (double& r : R[c]) r *= f;
    }
    last = t;
    for (std::size_t p = lo; p < hi; ++p) {
      const int k = category_of(data.events[p].mark);
      for (std::size_t c = 0; c < C; ++c) {
        const double a = lambda[c] * alpha[c][p];
        if (a == 0.0) continue;
        auto& cs = s.components[c];
        for (int j : fanout[c][k]) {
          const double v = a * g[c](k, j) * R[c][j];
          cs.counts(k, j) += v;
          cs.parent_credit[p] += v;
        }
      }
    }
    for (std::size_t i = lo; i < hi; ++i) {
      if (!data.is_target(i)) continue;
      const int j = category_of(data.events[i].mark);
      for (std::size_t c = 0; c < C; ++c) R[c][j] += 1.0 / s.intensity[i];
    }
    hi = lo;
  }
  return s;
}

double lower_bound(const ModelSpec& model, const Dataset& data, const Responsibilities& z) {
  const Context ctx(model, data);
  double bound = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    for (const auto& cause : z.row(r)) {
      if (cause.z <= 0.0) continue;
      const double v = ctx.cause_value(z.child[r], cause);
      if (!(v > 0.0)) return -std::numeric_limits<double>::infinity();
      bound += cause.z * std::log(v / cause.z);
    }
  }
  return bound - compensator(model, data);
}

ModelSpec m_step(const ModelSpec& model, const Dataset& data, const SufficientStats& stats) {
  ModelSpec out = model;

  double base_total = 0.0;
  for (double z : stats.baseline_credit) base_total += z;
  std::visit(overloaded{
                 [&](HomogeneousRate& h) {
                   if (data.window_length() > 0.0) h.rate = base_total / data.window_length();
                 },
                 [&](PeriodicRate& p) {
                   std::vector<double> credit(p.rates.size(), 0.0);
                   for (std::size_t i = 0; i < data.size(); ++i)
                     if (stats.baseline_credit[i] != 0.0)
                       credit[bucket_of(p, data.events[i].t)] += stats.baseline_credit[i];
                   const auto dur = bucket_durations(p, data.start, data.horizon);
                   for (std::size_t k = 0; k < p.rates.size(); ++k)
                     if (dur[k] > 0.0) p.rates[k] = credit[k] / dur[k];
                 },
             },
             out.baseline.rate);
  if (model.baseline.fit_prior)
    out.baseline.prior = fit_mark_prior(data, stats.baseline_credit, model.baseline.prior);

  // Delay first (fertility held fixed), then fertility under the new delay.
  for (std::size_t c = 0; c < model.components.size(); ++c) {
    const auto& old = model.components[c];
    const auto& cs = stats.components[c];
    auto& comp = out.components[c];
    if (cs.credit > 0.0) {
      std::vector<double> alpha(data.size(), 0.0);
      for (std::size_t e = 0; e < data.size(); ++e)
        if (source_allows(old.source, data, data.events[e].mark))
          alpha[e] = fertility(old.fertility, data.events[e].mark);
      comp.delay = update_delay(old, cs, alpha, data);
    }
    const auto x = exposures(comp, comp.delay, data);
    comp.fertility = update_fertility(old.fertility, data.events, cs.parent_credit, x);
  }

  // Transitions, pooled over components sharing a group.
  std::map<std::string, std::size_t> group_slot;
  std::vector<std::vector<std::size_t>> order;
  for (std::size_t c = 0; c < model.components.size(); ++c) {
    const auto& key = model.components[c].transition_group;
    if (key.empty()) {
      order.push_back({c});
      continue;
    }
    auto [it, fresh] = group_slot.try_emplace(key, order.size());
    if (fresh) order.emplace_back();
    order[it->second].push_back(c);
  }
  for (const auto& members : order) {
    const auto& head = model.components[members.front()].transition;
    TransitionSpec fitted = head;
    if (const auto* gm = std::get_if<GammaMixTransition>(&head)) {
      GammaMixStats pooled(gm->prior.p.size());
      for (std::size_t c : members) pooled += stats.components[c].gamma;
      if (pooled.total_weight() > 0.0) {
        GammaMixTransition next = *gm;
        next.gamma = fit_gamma(pooled, gm->prior);
        fitted = next;
      }
    } else if (const auto* cat = std::get_if<CategoricalTransition>(&head)) {
      Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(cat->theta.rows(), cat->theta.cols());
      for (std::size_t c : members) pooled += stats.components[c].counts;
      const bool shrink = cat->dirichlet && cat->dirichlet->magnitude > 0.0;
      if (!shrink) {
        // Rows without credit carry no information; keep them as they are.
        for (Eigen::Index r = 0; r < pooled.rows(); ++r)
          if (pooled.row(r).sum() <= 0.0) pooled.row(r) = cat->theta.row(r);
      }
      fitted = fit_categorical(pooled, cat->dirichlet);
    }
    for (std::size_t c : members) {
      if (std::holds_alternative<IdentityTransition>(fitted) || std::holds_alternative<PriorTransition>(fitted))
        continue;
      out.components[c].transition = fitted;
    }
  }
  return out;
}

ModelSpec m_step(const ModelSpec& model, const Dataset& data, const Responsibilities& z) {
  return m_step(model, data, collect_stats(model, data, z));
}

ModelSpec normalize(const ModelSpec& model, const Dataset& data) {
  const auto n = static_cast<double>(data.target_count());
  if (n == 0.0) return model;
  const double lambda = compensator(model, data);
  if (!(lambda > 0.0)) throw NumericalError("cannot normalize: compensator is zero with observed events");
  return scale_rates(model, n / lambda);
}

FitReport fit(const ModelSpec& initial, const Dataset& data, const EmOptions& options,
              const Dataset* test) {
  ModelSpec model = resolve_priors(initial, data);
  validate(model, data.schema);
  const bool fast = options.fast_path && fast_path_applies(model, data);
  const bool monotone = !is_regularized(model);
  const double n = static_cast<double>(std::max<std::size_t>(data.target_count(), 1));

  auto statistics = [&](const ModelSpec& m) {
    return fast ? fast_estep_exponential(m, data) : collect_stats(m, data, e_step(m, data, options.workers));
  };
  FitReport report;
  auto record = [&](const ModelSpec& m, const SufficientStats& s, double ll) {
    report.train_ll.push_back(ll);
    report.test_ll.push_back(test ? log_likelihood(m, *test, options.workers)
                                  : std::numeric_limits<double>::quiet_NaN());
    std::vector<double> share, delay;
    for (std::size_t c = 0; c < m.components.size(); ++c) {
      share.push_back(s.components[c].credit / n);
      delay.push_back(mean(m.components[c].delay));
    }
    report.fertility_share.push_back(std::move(share));
    report.delay_mean.push_back(std::move(delay));
  };

  SufficientStats stats = statistics(model);
  double ll = stats.log_intensity - compensator(model, data);
  record(model, stats, ll);
  for (int it = 0; it < options.max_iters; ++it) {
    ModelSpec next = m_step(model, data, stats);
    if (model.normalize) next = normalize(next, data);
    SufficientStats next_stats = statistics(next);
    const double next_ll = next_stats.log_intensity - compensator(next, data);
    if (monotone && next_ll < ll - 1e-8 * std::abs(ll)) {
      std::ostringstream msg;
      msg << "log-likelihood decreased at iteration " << (it + 1) << ": " << io::format_double(ll)
          << " -> " << io::format_double(next_ll);
      throw NumericalError(msg.str());
    }
    const double gain = (next_ll - ll) / std::max(std::abs(ll), 1e-300);
    model = std::move(next);
    stats = std::move(next_stats);
    ll = next_ll;
    record(model, stats, ll);
    report.iterations = it + 1;
    if (gain < options.tol) {
      report.converged = true;
      break;
    }
  }
  report.model = std::move(model);
  return report;
}

void write_trace_csv(std::ostream& out, const FitReport& report) {
  out << "iteration,train_ll,test_ll";
  for (const auto& c : report.model.components) out << ",share_" << c.name;
  for (const auto& c : report.model.components) out << ",delay_mean_" << c.name;
  out << '\n';
  auto num = [](double v) { return std::isnan(v) ? std::string() : io::format_double(v); };
  for (std::size_t i = 0; i < report.train_ll.size(); ++i) {
    out << i << ',' << num(report.train_ll[i]) << ',' << num(report.test_ll[i]);
    for (double v : report.fertility_share[i]) out << ',' << num(v);
    for (double v : report.delay_mean[i]) out << ',' << num(v);
    out << '\n';
  }
}

}  // namespace cascade
