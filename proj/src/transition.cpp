#include "cascade/transition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <spdlog/spdlog.h>

#include "cascade/errors.hpp"
#include "cascade/io.hpp"

namespace cascade {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

double bern(double p, int v) { return v ? p : 1.0 - p; }

const Features& features_of(const Mark& m) {
  const auto* f = std::get_if<Features>(&m);
  if (!f) throw DataError("transition expects binary feature marks");
  return *f;
}

int sample_index(std::span<const double> probs, Rng& rng) {
  const double u = uniform_open(rng);
  double acc = 0.0;
  int last_positive = 0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (probs[k] > 0.0) last_positive = static_cast<int>(k);
    acc += probs[k];
    if (u <= acc && probs[k] > 0.0) return static_cast<int>(k);
  }
  return last_positive;
}

Mark with_category(const Mark& like, int category) {
  if (const auto* c = std::get_if<NodeMark>(&like)) return NodeMark{category, c->node};
  return Label{category};
}

}  // namespace

DirichletPrior DirichletPrior::broadcast(const Eigen::VectorXd& direction, double magnitude) {
  DirichletPrior d;
  d.direction = direction.transpose().replicate(direction.size(), 1);
  d.magnitude = magnitude;
  return d;
}

std::string kind_name(const TransitionSpec& spec) {
  return std::visit(overloaded{
                        [](const IdentityTransition&) { return std::string("identity"); },
                        [](const PriorTransition&) { return std::string("prior"); },
                        [](const GammaMixTransition&) { return std::string("gamma_mix"); },
                        [](const CategoricalTransition&) { return std::string("categorical"); },
                    },
                    spec);
}

void validate(const MarkPrior& prior, const MarkSchema& schema) {
  if (const auto* f = std::get_if<FeaturePrior>(&prior)) {
    if (schema.kind != MarkKind::features) throw ConfigError("feature prior on a categorical schema");
    if (static_cast<int>(f->p.size()) != schema.width())
      throw ConfigError("feature prior width does not match the schema");
    for (double p : f->p)
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("feature probabilities must lie in [0,1]");
  } else {
    const auto& c = std::get<CategoricalPrior>(prior);
    if (schema.kind == MarkKind::features) throw ConfigError("categorical prior on a feature schema");
    if (static_cast<int>(c.probs.size()) != schema.categories())
      throw ConfigError("categorical prior size does not match the label count");
    double s = 0.0;
    for (double p : c.probs) {
      if (p < 0.0) throw ConfigError("categorical prior probabilities must be >= 0");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ConfigError("categorical prior must sum to 1");
  }
}

void validate(const TransitionSpec& spec, const MarkSchema& schema) {
  std::visit(overloaded{
                 [](const IdentityTransition&) {},
                 [&](const PriorTransition& t) { validate(t.prior, schema); },
                 [&](const GammaMixTransition& t) {
                   if (!(t.gamma >= 0.0 && t.gamma <= 1.0)) throw ConfigError("gamma must lie in [0,1]");
                   validate(MarkPrior{t.prior}, schema);
                 },
                 [&](const CategoricalTransition& t) {
                   if (schema.kind == MarkKind::features)
                     throw ConfigError("categorical transition on a feature schema");
                   const int L = schema.categories();
                   if (t.theta.rows() != L || t.theta.cols() != L)
                     throw ConfigError("transition matrix must be L x L");
                   for (int r = 0; r < L; ++r) {
                     if ((t.theta.row(r).array() < 0.0).any())
                       throw ConfigError("transition probabilities must be >= 0");
                     if (std::abs(t.theta.row(r).sum() - 1.0) > 1e-9)
                       throw ConfigError("transition rows must sum to 1");
                   }
                   if (t.dirichlet) {
                     if (t.dirichlet->magnitude < 0.0) throw ConfigError("dirichlet magnitude must be >= 0");
                     if (t.dirichlet->direction.rows() != L || t.dirichlet->direction.cols() != L)
                       throw ConfigError("dirichlet direction must be L x L");
                   }
                 },
             },
             spec);
}

double prior_prob(const FeaturePrior& prior, const Features& x) {
  if (prior.p.size() != x.bits.size()) throw DataError("prior width does not match feature vector");
  double log_g = 0.0;
  for (std::size_t i = 0; i < x.bits.size(); ++i) {
    const double q = bern(prior.p[i], x.bits[i]);
    if (q <= 0.0) return 0.0;
    log_g += std::log(q);
  }
  return std::exp(log_g);
}

double prior_prob(const MarkPrior& prior, const Mark& x) {
  if (const auto* f = std::get_if<FeaturePrior>(&prior)) return prior_prob(*f, features_of(x));
  const auto& c = std::get<CategoricalPrior>(prior);
  return c.probs.at(category_of(x));
}

FeaturePrior fit_prior(const Dataset& data) {
  if (data.schema.kind != MarkKind::features) throw DataError("feature prior needs a feature schema");
  if (data.events.empty()) throw DataError("cannot fit a prior on an empty dataset");
  FeaturePrior out;
  out.p.assign(data.schema.width(), 0.0);
  for (const auto& e : data.events) {
    const auto& f = features_of(e.mark);
    for (std::size_t i = 0; i < f.bits.size(); ++i) out.p[i] += f.bits[i];
  }
  for (double& p : out.p) p /= static_cast<double>(data.events.size());
  return out;
}

MarkPrior fit_mark_prior(const Dataset& data) {
  std::vector<double> ones(data.events.size(), 1.0);
  if (data.events.empty()) throw DataError("cannot fit a prior on an empty dataset");
  MarkPrior dummy = data.schema.kind == MarkKind::features ? MarkPrior{FeaturePrior{}}
                                                           : MarkPrior{CategoricalPrior{}};
  return fit_mark_prior(data, ones, dummy);
}

MarkPrior fit_mark_prior(const Dataset& data, std::span<const double> weights,
                         const MarkPrior& current) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) return current;
  if (data.schema.kind == MarkKind::features) {
    FeaturePrior out;
    out.p.assign(data.schema.width(), 0.0);
    for (std::size_t e = 0; e < data.events.size(); ++e) {
      if (weights[e] == 0.0) continue;
      const auto& f = features_of(data.events[e].mark);
      for (std::size_t i = 0; i < f.bits.size(); ++i)
        if (f.bits[i]) out.p[i] += weights[e];
    }
    for (double& p : out.p) p = std::clamp(p / total, 0.0, 1.0);
    return out;
  }
  CategoricalPrior out;
  out.probs.assign(data.schema.categories(), 0.0);
  for (std::size_t e = 0; e < data.events.size(); ++e)
    if (weights[e] != 0.0) out.probs[category_of(data.events[e].mark)] += weights[e];
  for (double& p : out.probs) p /= total;
  return out;
}

double trans_prob(const TransitionSpec& spec, const Mark& parent, const Mark& child) {
  return std::visit(
      overloaded{
          [&](const IdentityTransition&) -> double {
            if (const auto* f = std::get_if<Features>(&child)) return features_of(parent) == *f ? 1.0 : 0.0;
            return category_of(parent) == category_of(child) ? 1.0 : 0.0;
          },
          [&](const PriorTransition& t) -> double { return prior_prob(t.prior, child); },
          [&](const GammaMixTransition& t) -> double {
            const auto& x = features_of(parent);
            const auto& y = features_of(child);
            if (x.bits.size() != y.bits.size() || t.prior.p.size() != y.bits.size())
              throw DataError("feature widths disagree in gamma transition");
            double log_g = 0.0;
            for (std::size_t i = 0; i < y.bits.size(); ++i) {
              const double f = (x.bits[i] == y.bits[i] ? 1.0 - t.gamma : 0.0) +
                               t.gamma * bern(t.prior.p[i], y.bits[i]);
              if (f <= 0.0) return 0.0;
              log_g += std::log(f);
            }
            return std::exp(log_g);
          },
          [&](const CategoricalTransition& t) -> double {
            return t.theta(category_of(parent), category_of(child));
          },
      },
      spec);
}

Mark sample_prior(const MarkPrior& prior, Rng& rng) {
  if (const auto* f = std::get_if<FeaturePrior>(&prior)) {
    Features x;
    x.bits.resize(f->p.size());
    for (std::size_t i = 0; i < f->p.size(); ++i) x.bits[i] = uniform_open(rng) < f->p[i] ? 1 : 0;
    return x;
  }
  return Label{sample_index(std::get<CategoricalPrior>(prior).probs, rng)};
}

Mark sample_transition(const TransitionSpec& spec, const Mark& parent, Rng& rng) {
  return std::visit(
      overloaded{
          [&](const IdentityTransition&) -> Mark { return parent; },
          [&](const PriorTransition& t) -> Mark {
            Mark m = sample_prior(t.prior, rng);
            if (std::holds_alternative<Label>(m)) return with_category(parent, std::get<Label>(m).value);
            return m;
          },
          [&](const GammaMixTransition& t) -> Mark {
            Features y = features_of(parent);
            for (std::size_t i = 0; i < y.bits.size(); ++i) {
              // Redraw from the prior with probability gamma, else copy.
              const bool redraw = uniform_open(rng) < t.gamma;
              const double u = uniform_open(rng);
              if (redraw) y.bits[i] = u < t.prior.p[i] ? 1 : 0;
            }
            return y;
          },
          [&](const CategoricalTransition& t) -> Mark {
            const int r = category_of(parent);
            std::vector<double> row(t.theta.cols());
            for (int s = 0; s < t.theta.cols(); ++s) row[s] = t.theta(r, s);
            return with_category(parent, sample_index(row, rng));
          },
      },
      spec);
}

TransitionEvaluator::TransitionEvaluator(const TransitionSpec& spec) : spec_(spec) {
  if (const auto* g = std::get_if<GammaMixTransition>(&spec_)) {
    const std::size_t F = g->prior.p.size();
    log_same_.resize(2 * F);
    log_diff_.resize(2 * F);
    for (std::size_t i = 0; i < F; ++i) {
      for (int v = 0; v < 2; ++v) {
        const double q = bern(g->prior.p[i], v);
        log_same_[2 * i + v] = std::log((1.0 - g->gamma) + g->gamma * q);
        log_diff_[2 * i + v] = std::log(g->gamma * q);
      }
    }
  } else if (const auto* p = std::get_if<PriorTransition>(&spec_)) {
    if (const auto* f = std::get_if<FeaturePrior>(&p->prior)) {
      log_bern_.resize(2 * f->p.size());
      for (std::size_t i = 0; i < f->p.size(); ++i)
        for (int v = 0; v < 2; ++v) log_bern_[2 * i + v] = std::log(bern(f->p[i], v));
    }
  }
}

double TransitionEvaluator::operator()(const Mark& parent, const Mark& child) const {
  if (!log_same_.empty()) {
    const auto& x = std::get<Features>(parent).bits;
    const auto& y = std::get<Features>(child).bits;
    double log_g = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const std::size_t k = 2 * i + y[i];
      log_g += x[i] == y[i] ? log_same_[k] : log_diff_[k];
    }
    return std::exp(log_g);
  }
  if (!log_bern_.empty()) {
    const auto& y = std::get<Features>(child).bits;
    double log_g = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) log_g += log_bern_[2 * i + y[i]];
    return std::exp(log_g);
  }
  if (std::holds_alternative<GammaMixTransition>(spec_)) {
    // Zero-width feature vectors.
    return 1.0;
  }
  return trans_prob(spec_, parent, child);
}

void GammaMixStats::add(const Features& parent, const Features& child, double weight) {
  if (weight == 0.0) return;
  if (2 * child.bits.size() != same.size() || parent.bits.size() != child.bits.size())
    throw DataError("feature widths disagree in gamma statistics");
  for (std::size_t i = 0; i < child.bits.size(); ++i) {
    const std::size_t k = 2 * i + child.bits[i];
    (parent.bits[i] == child.bits[i] ? same : diff)[k] += weight;
  }
  total_ += weight;
}

GammaMixStats& GammaMixStats::operator+=(const GammaMixStats& other) {
  if (same.empty()) {
    *this = other;
    return *this;
  }
  for (std::size_t k = 0; k < same.size(); ++k) {
    same[k] += other.same[k];
    diff[k] += other.diff[k];
  }
  total_ += other.total_;
  return *this;
}

namespace {

// Terms: same -> log(1 - gamma * (1 - q)), diff -> log(gamma * q).
double gamma_score(const GammaMixStats& s, const FeaturePrior& prior, double gamma) {
  double d = 0.0;
  for (std::size_t k = 0; k < s.same.size(); ++k) {
    const double q = bern(prior.p[k / 2], static_cast<int>(k % 2));
    if (s.same[k] > 0.0 && q < 1.0) d -= s.same[k] * (1.0 - q) / (1.0 - gamma * (1.0 - q));
    if (s.diff[k] > 0.0 && q > 0.0) d += s.diff[k] / gamma;
  }
  return d;
}

}  // namespace

double gamma_objective(const GammaMixStats& s, const FeaturePrior& prior, double gamma) {
  double f = 0.0;
  for (std::size_t k = 0; k < s.same.size(); ++k) {
    const double q = bern(prior.p[k / 2], static_cast<int>(k % 2));
    if (s.same[k] > 0.0) f += s.same[k] * std::log(1.0 - gamma * (1.0 - q));
    if (s.diff[k] > 0.0 && q > 0.0) f += s.diff[k] * std::log(gamma * q);
  }
  return f;
}

double fit_gamma(const GammaMixStats& s, const FeaturePrior& prior) {
  if (!(s.total_weight() > 0.0)) throw NumericalError("fit_gamma with zero total weight");
  if (s.same.size() != 2 * prior.p.size()) throw DataError("prior width disagrees with statistics");
  // The objective is concave, so its derivative is nonincreasing in gamma.
  if (gamma_score(s, prior, 0.0) <= 0.0) return 0.0;
  if (gamma_score(s, prior, 1.0) >= 0.0) return 1.0;
  double lo = 0.0, hi = 1.0;
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    (gamma_score(s, prior, mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double fit_gamma(std::span<const GammaSample> samples, const FeaturePrior& prior) {
  GammaMixStats s(prior.p.size());
  for (const auto& x : samples) s.add(x.parent, x.child, x.weight);
  return fit_gamma(s, prior);
}

CategoricalTransition fit_categorical(const Eigen::MatrixXd& counts,
                                      const std::optional<DirichletPrior>& dirichlet) {
  if (counts.rows() != counts.cols()) throw DataError("transition counts must be square");
  if ((counts.array() < 0.0).any()) throw NumericalError("negative transition counts");
  const auto L = counts.rows();
  if (dirichlet) {
    if (dirichlet->magnitude < 0.0) throw ConfigError("dirichlet magnitude must be >= 0");
    if (dirichlet->direction.rows() != L || dirichlet->direction.cols() != L)
      throw ConfigError("dirichlet direction must match the transition size");
  }
  CategoricalTransition out;
  out.theta.resize(L, L);
  out.dirichlet = dirichlet;
  const double c = dirichlet ? dirichlet->magnitude : 0.0;
  for (Eigen::Index r = 0; r < L; ++r) {
    const double n = counts.row(r).sum();
    if (n + c > 0.0) {
      for (Eigen::Index s = 0; s < L; ++s) {
        const double prior = c > 0.0 ? c * dirichlet->direction(r, s) : 0.0;
        out.theta(r, s) = (counts(r, s) + prior) / (n + c);
      }
    } else {
      spdlog::warn("transition row {} has no counts and no prior; using a uniform row", r);
      out.theta.row(r).setConstant(1.0 / static_cast<double>(L));
    }
  }
  return out;
}

void write_matrix_csv(std::ostream& out, const Eigen::MatrixXd& m,
                      const std::vector<std::string>& row_labels,
                      const std::vector<std::string>& col_labels) {
  out << "source";
  for (const auto& c : col_labels) out << ',' << c;
  out << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out << row_labels.at(r);
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << ',' << io::format_double(m(r, c));
    out << '\n';
  }
}

void write_log_ratio_csv(std::ostream& out, const Eigen::MatrixXd& m, const Eigen::VectorXd& marginal,
                         const std::vector<std::string>& row_labels,
                         const std::vector<std::string>& col_labels) {
  Eigen::MatrixXd ratio(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) ratio(r, c) = std::log(m(r, c) / marginal(c));
  write_matrix_csv(out, ratio, row_labels, col_labels);
}

}  // namespace cascade
