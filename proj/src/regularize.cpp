#include "cascade/regularize.hpp"

#include "cascade/errors.hpp"

namespace cascade {

std::vector<double> regularized_alpha(std::span<const double> n, std::span<const double> m,
                                      double lambda) {
  if (n.size() != m.size()) throw NumericalError("regularized_alpha: n and m differ in length");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("pooling weight must lie in [0,1]");
  double sum_n = 0.0, sum_m = 0.0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    if (n[i] < 0.0 || m[i] < 0.0) throw NumericalError("regularized_alpha: negative statistics");
    if (m[i] == 0.0 && n[i] > 0.0)
      throw NumericalError("regularized_alpha: neighbor " + std::to_string(i) +
                           " has triggered credit but no exposure");
    sum_n += n[i];
    sum_m += m[i];
  }
  const double pooled = sum_m > 0.0 ? sum_n / sum_m : 0.0;
  std::vector<double> out(n.size());
  for (std::size_t i = 0; i < n.size(); ++i) {
    const double own = m[i] > 0.0 ? n[i] / m[i] : pooled;
    out[i] = lambda * pooled + (1.0 - lambda) * own;
  }
  return out;
}

}  // namespace cascade
