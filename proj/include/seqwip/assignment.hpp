#pragma once

// Dense linear assignment by shortest augmenting paths with dual potentials
// (Hungarian / Jonker–Volgenant style), O(K³).

#include <algorithm>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace seqwip {

struct Assignment {
  std::vector<std::size_t> row_to_col;
  double cost = 0.0;  // Σ_i C[i][row_to_col[i]], summed in row order
};

/// Minimum-cost perfect matching on a K×K row-major cost matrix.
inline Assignment solve_assignment(std::span<const double> cost, std::size_t k) {
  if (cost.size() != k * k) throw std::invalid_argument("cost matrix must be K x K");
  Assignment out;
  if (k == 0) return out;
  constexpr double inf = std::numeric_limits<double>::infinity();

  // row then column reduction; leaves the optimal matching unchanged
  std::vector<double> c(cost.begin(), cost.end());
  for (std::size_t i = 0; i < k; ++i) {
    const double m = *std::min_element(c.begin() + static_cast<std::ptrdiff_t>(i * k),
                                       c.begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
    for (std::size_t j = 0; j < k; ++j) c[i * k + j] -= m;
  }
  for (std::size_t j = 0; j < k; ++j) {
    double m = inf;
    for (std::size_t i = 0; i < k; ++i) m = std::min(m, c[i * k + j]);
    for (std::size_t i = 0; i < k; ++i) c[i * k + j] -= m;
  }

  // 1-based rows/cols, column 0 is the virtual source
  std::vector<double> u(k + 1, 0.0), v(k + 1, 0.0), minv(k + 1);
  std::vector<std::size_t> match(k + 1, 0), way(k + 1, 0);
  std::vector<char> used(k + 1);
  for (std::size_t i = 1; i <= k; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      const double* row = &c[(i0 - 1) * k];
      for (std::size_t j = 1; j <= k; ++j) {
        if (used[j]) continue;
        const double cur = row[j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= k; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  out.row_to_col.assign(k, 0);
  for (std::size_t j = 1; j <= k; ++j) out.row_to_col[match[j] - 1] = j - 1;
  for (std::size_t i = 0; i < k; ++i) out.cost += cost[i * k + out.row_to_col[i]];
  return out;
}

}  // namespace seqwip
