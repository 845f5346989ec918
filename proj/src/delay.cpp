#include "cascade/delay.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <boost/random/gamma_distribution.hpp>

#include "cascade/errors.hpp"

namespace cascade {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

// Bin index b (0-based) with delta in (edges[b], edges[b+1]], or -1.
int bin_of(const PiecewiseUniformDelay& d, double delta) {
  if (delta <= 0.0 || delta > d.edges.back()) return -1;
  auto it = std::lower_bound(d.edges.begin() + 1, d.edges.end(), delta);
  return static_cast<int>(it - d.edges.begin()) - 1;
}

void check_samples(std::span<const WeightedDelay> samples) {
  double w = 0.0;
  for (const auto& s : samples) {
    if (s.weight < 0.0 || !std::isfinite(s.weight)) throw NumericalError("negative sample weight");
    if (s.weight > 0.0 && !(s.delta > 0.0)) throw NumericalError("delay samples must be positive");
    w += s.weight;
  }
  if (!(w > 0.0)) throw NumericalError("weighted delay MLE with zero total weight");
}

}  // namespace

void validate(const DelaySpec& spec) {
  std::visit(
      overloaded{
          [](const ExponentialDelay& d) {
            if (!(d.rate > 0.0) || !std::isfinite(d.rate))
              throw ConfigError("exponential rate must be positive");
          },
          [](const GammaDelay& d) {
            if (!(d.shape > 0.0) || !(d.rate > 0.0))
              throw ConfigError("gamma shape and rate must be positive");
          },
          [](const UniformDelay& d) {
            if (!(d.width > 0.0)) throw ConfigError("uniform width must be positive");
          },
          [](const PiecewiseUniformDelay& d) {
            if (d.edges.size() < 2 || d.probs.size() + 1 != d.edges.size())
              throw ConfigError("piecewise uniform needs B+1 edges and B probabilities");
            if (d.edges[0] != 0.0) throw ConfigError("piecewise uniform edges must start at 0");
            for (std::size_t b = 1; b < d.edges.size(); ++b)
              if (!(d.edges[b] > d.edges[b - 1]))
                throw ConfigError("piecewise uniform edges must increase");
            double s = 0.0;
            for (double p : d.probs) {
              if (p < 0.0) throw ConfigError("piecewise uniform probabilities must be >= 0");
              s += p;
            }
            if (std::abs(s - 1.0) > 1e-9) throw ConfigError("piecewise probabilities must sum to 1");
          },
          [](const ExpMixtureDelay& d) {
            if (d.weights.empty() || d.weights.size() != d.rates.size())
              throw ConfigError("exponential mixture needs matching weights and rates");
            double s = 0.0;
            for (std::size_t c = 0; c < d.weights.size(); ++c) {
              if (d.weights[c] < 0.0 || !(d.rates[c] > 0.0))
                throw ConfigError("mixture weights must be >= 0 and rates > 0");
              s += d.weights[c];
            }
            if (std::abs(s - 1.0) > 1e-9) throw ConfigError("mixture weights must sum to 1");
          },
      },
      spec);
}

std::string family_name(const DelaySpec& spec) {
  return std::visit(overloaded{
                        [](const ExponentialDelay&) { return std::string("exponential"); },
                        [](const GammaDelay&) { return std::string("gamma"); },
                        [](const UniformDelay&) { return std::string("uniform"); },
                        [](const PiecewiseUniformDelay&) { return std::string("piecewise_uniform"); },
                        [](const ExpMixtureDelay&) { return std::string("exp_mixture"); },
                    },
                    spec);
}

double density(const DelaySpec& spec, double delta) {
  if (!(delta > 0.0)) return 0.0;
  return std::visit(
      overloaded{
          [&](const ExponentialDelay& d) { return d.rate * std::exp(-d.rate * delta); },
          [&](const GammaDelay& d) {
            return std::exp(d.shape * std::log(d.rate) + (d.shape - 1.0) * std::log(delta) -
                            d.rate * delta - std::lgamma(d.shape));
          },
          [&](const UniformDelay& d) { return delta <= d.width ? 1.0 / d.width : 0.0; },
          [&](const PiecewiseUniformDelay& d) {
            const int b = bin_of(d, delta);
            return b < 0 ? 0.0 : d.probs[b] / (d.edges[b + 1] - d.edges[b]);
          },
          [&](const ExpMixtureDelay& d) {
            double h = 0.0;
            for (std::size_t c = 0; c < d.rates.size(); ++c)
              h += d.weights[c] * d.rates[c] * std::exp(-d.rates[c] * delta);
            return h;
          },
      },
      spec);
}

double cdf(const DelaySpec& spec, double delta) {
  if (!(delta > 0.0)) return 0.0;
  if (std::isinf(delta)) return 1.0;
  return std::visit(
      overloaded{
          [&](const ExponentialDelay& d) { return -std::expm1(-d.rate * delta); },
          [&](const GammaDelay& d) { return boost::math::gamma_p(d.shape, d.rate * delta); },
          [&](const UniformDelay& d) { return std::min(delta / d.width, 1.0); },
          [&](const PiecewiseUniformDelay& d) {
            double h = 0.0;
            for (std::size_t b = 0; b < d.probs.size(); ++b) {
              if (delta >= d.edges[b + 1]) {
                h += d.probs[b];
              } else {
                if (delta > d.edges[b])
                  h += d.probs[b] * (delta - d.edges[b]) / (d.edges[b + 1] - d.edges[b]);
                break;
              }
            }
            return std::min(h, 1.0);
          },
          [&](const ExpMixtureDelay& d) {
            double h = 0.0;
            for (std::size_t c = 0; c < d.rates.size(); ++c)
              h += d.weights[c] * -std::expm1(-d.rates[c] * delta);
            return h;
          },
      },
      spec);
}

double mean(const DelaySpec& spec) {
  return std::visit(overloaded{
                        [](const ExponentialDelay& d) { return 1.0 / d.rate; },
                        [](const GammaDelay& d) { return d.shape / d.rate; },
                        [](const UniformDelay& d) { return d.width / 2.0; },
                        [](const PiecewiseUniformDelay& d) {
                          double m = 0.0;
                          for (std::size_t b = 0; b < d.probs.size(); ++b)
                            m += d.probs[b] * 0.5 * (d.edges[b] + d.edges[b + 1]);
                          return m;
                        },
                        [](const ExpMixtureDelay& d) {
                          double m = 0.0;
                          for (std::size_t c = 0; c < d.rates.size(); ++c)
                            m += d.weights[c] / d.rates[c];
                          return m;
                        },
                    },
                    spec);
}

double tail_window(const DelaySpec& spec, double epsilon) {
  if (!(epsilon > 0.0)) return kInf;
  if (epsilon >= 1.0) return 0.0;
  return std::visit(
      overloaded{
          [&](const ExponentialDelay& d) { return -std::log(epsilon) / d.rate; },
          [&](const GammaDelay& d) { return boost::math::gamma_q_inv(d.shape, epsilon) / d.rate; },
          [&](const UniformDelay& d) { return d.width; },
          [&](const PiecewiseUniformDelay& d) { return d.edges.back(); },
          [&](const ExpMixtureDelay& d) {
            // Survival is monotone; bracket then bisect.
            auto survival = [&](double x) {
              double s = 0.0;
              for (std::size_t c = 0; c < d.rates.size(); ++c)
                s += d.weights[c] * std::exp(-d.rates[c] * x);
              return s;
            };
            double hi = 0.0;
            for (std::size_t c = 0; c < d.rates.size(); ++c)
              hi = std::max(hi, -std::log(epsilon) / d.rates[c]);
            double lo = 0.0;
            for (int it = 0; it < 200 && hi - lo > 1e-12 * hi; ++it) {
              const double mid = 0.5 * (lo + hi);
              (survival(mid) < epsilon ? hi : lo) = mid;
            }
            return hi;
          },
      },
      spec);
}

double sample(const DelaySpec& spec, Rng& rng) {
  return std::visit(
      overloaded{
          [&](const ExponentialDelay& d) { return -std::log(uniform_open(rng)) / d.rate; },
          [&](const GammaDelay& d) {
            boost::random::gamma_distribution<double> dist(d.shape, 1.0 / d.rate);
            double x = 0.0;
            while (!(x > 0.0)) x = dist(rng);
            return x;
          },
          [&](const UniformDelay& d) { return d.width * uniform_open(rng); },
          [&](const PiecewiseUniformDelay& d) {
            const double u = uniform_open(rng);
            double acc = 0.0;
            std::size_t b = 0;
            for (; b + 1 < d.probs.size(); ++b) {
              acc += d.probs[b];
              if (u <= acc) break;
            }
            while (d.probs[b] == 0.0 && b > 0) --b;
            return d.edges[b] + uniform_open(rng) * (d.edges[b + 1] - d.edges[b]);
          },
          [&](const ExpMixtureDelay& d) {
            const double u = uniform_open(rng);
            double acc = 0.0;
            std::size_t c = 0;
            for (; c + 1 < d.weights.size(); ++c) {
              acc += d.weights[c];
              if (u <= acc) break;
            }
            return -std::log(uniform_open(rng)) / d.rates[c];
          },
      },
      spec);
}

ExponentialDelay exponential_mle(double total_weight, double weighted_delay) {
  if (!(total_weight > 0.0)) throw NumericalError("exponential MLE with zero total weight");
  if (!(weighted_delay > 0.0)) throw NumericalError("exponential MLE with zero weighted delay");
  return {total_weight / weighted_delay};
}

ExpMixtureDelay exp_mixture_mle(std::span<const double> credits,
                                std::span<const double> weighted_delays) {
  double total = 0.0;
  for (double c : credits) total += c;
  if (!(total > 0.0)) throw NumericalError("mixture MLE with zero total weight");
  ExpMixtureDelay out;
  for (std::size_t c = 0; c < credits.size(); ++c) {
    out.weights.push_back(credits[c] / total);
    out.rates.push_back(credits[c] > 0.0 && weighted_delays[c] > 0.0
                            ? credits[c] / weighted_delays[c]
                            : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

GammaDelay gamma_mle(std::span<const WeightedDelay> samples) {
  check_samples(samples);
  double w = 0.0, wx = 0.0, wlogx = 0.0;
  for (const auto& s : samples) {
    if (s.weight == 0.0) continue;
    w += s.weight;
    wx += s.weight * s.delta;
    wlogx += s.weight * std::log(s.delta);
  }
  const double m = wx / w;
  const double target = std::log(m) - wlogx / w;  // log k - digamma(k) at the optimum
  if (!(target > 1e-14)) throw NumericalError("gamma MLE is degenerate: all delays coincide");
  // Moment-style initialisation (Minka), then Newton on log k - digamma(k) = target.
  double k = (3.0 - target + std::sqrt((target - 3.0) * (target - 3.0) + 24.0 * target)) /
             (12.0 * target);
  for (int it = 0; it < 100; ++it) {
    const double f = std::log(k) - boost::math::digamma(k) - target;
    if (std::abs(f) < 1e-10) break;
    const double fp = 1.0 / k - boost::math::trigamma(k);
    double next = k - f / fp;
    if (!(next > 0.0)) next = k / 2.0;
    k = next;
  }
  return {k, k * w / wx};
}

DelaySpec weighted_mle(const DelaySpec& current, std::span<const WeightedDelay> samples) {
  check_samples(samples);
  return std::visit(
      overloaded{
          [&](const ExponentialDelay&) -> DelaySpec {
            double w = 0.0, wx = 0.0;
            for (const auto& s : samples) {
              w += s.weight;
              wx += s.weight * s.delta;
            }
            return exponential_mle(w, wx);
          },
          [&](const GammaDelay&) -> DelaySpec { return gamma_mle(samples); },
          [&](const UniformDelay& d) -> DelaySpec { return d; },
          [&](const PiecewiseUniformDelay& d) -> DelaySpec {
            PiecewiseUniformDelay out = d;
            std::fill(out.probs.begin(), out.probs.end(), 0.0);
            double w = 0.0;
            for (const auto& s : samples) {
              if (s.weight == 0.0) continue;
              const int b = bin_of(d, s.delta);
              if (b < 0) throw NumericalError("delay sample outside piecewise uniform support");
              out.probs[b] += s.weight;
              w += s.weight;
            }
            for (double& p : out.probs) p /= w;
            return out;
          },
          [&](const ExpMixtureDelay& d) -> DelaySpec {
            const std::size_t C = d.rates.size();
            std::vector<double> credit(C, 0.0), wdelay(C, 0.0), r(C);
            for (const auto& s : samples) {
              if (s.weight == 0.0) continue;
              double norm = 0.0;
              for (std::size_t c = 0; c < C; ++c) {
                r[c] = d.weights[c] * d.rates[c] * std::exp(-d.rates[c] * s.delta);
                norm += r[c];
              }
              if (!(norm > 0.0)) continue;
              for (std::size_t c = 0; c < C; ++c) {
                credit[c] += s.weight * r[c] / norm;
                wdelay[c] += s.weight * r[c] / norm * s.delta;
              }
            }
            auto out = exp_mixture_mle(credit, wdelay);
            for (std::size_t c = 0; c < C; ++c)
              if (!std::isfinite(out.rates[c])) out.rates[c] = d.rates[c];
            return out;
          },
      },
      current);
}

double weighted_log_density(const DelaySpec& spec, std::span<const WeightedDelay> samples) {
  double acc = 0.0;
  for (const auto& s : samples) {
    if (s.weight == 0.0) continue;
    const double h = density(spec, s.delta);
    if (!(h > 0.0)) return -kInf;
    acc += s.weight * std::log(h);
  }
  return acc;
}

DelaySpec interpolate(const DelaySpec& a, const DelaySpec& b, double t) {
  auto mix = [t](double x, double y) { return (1.0 - t) * x + t * y; };
  return std::visit(
      overloaded{
          [&](const ExponentialDelay& x) -> DelaySpec {
            return ExponentialDelay{mix(x.rate, std::get<ExponentialDelay>(b).rate)};
          },
          [&](const GammaDelay& x) -> DelaySpec {
            const auto& y = std::get<GammaDelay>(b);
            return GammaDelay{mix(x.shape, y.shape), mix(x.rate, y.rate)};
          },
          [&](const UniformDelay& x) -> DelaySpec { return x; },
          [&](const PiecewiseUniformDelay& x) -> DelaySpec {
            const auto& y = std::get<PiecewiseUniformDelay>(b);
            PiecewiseUniformDelay out = x;
            for (std::size_t i = 0; i < out.probs.size(); ++i) out.probs[i] = mix(x.probs[i], y.probs[i]);
            return out;
          },
          [&](const ExpMixtureDelay& x) -> DelaySpec {
            const auto& y = std::get<ExpMixtureDelay>(b);
            ExpMixtureDelay out = x;
            for (std::size_t i = 0; i < out.rates.size(); ++i) {
              out.weights[i] = mix(x.weights[i], y.weights[i]);
              out.rates[i] = mix(x.rates[i], y.rates[i]);
            }
            return out;
          },
      },
      a);
}

}  // namespace cascade
