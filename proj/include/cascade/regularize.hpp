#pragma once

#include <span>
#include <vector>

namespace cascade {

/// Per-neighbor intensity shrunk toward the pooled rate:
///   alpha_i = lambda * sum(n) / sum(m) + (1 - lambda) * n_i / m_i.
/// n_i is the expected number of events triggered by neighbor i, m_i its
/// exposure (revision count). Neighbors with m_i == 0 get the pooled rate.
[[nodiscard]] std::vector<double> regularized_alpha(std::span<const double> n,
                                                    std::span<const double> m, double lambda);

}  // namespace cascade
