#include <algorithm>
#include <cmath>
#include <limits>

#include "domprompt/heads.hpp"

namespace domprompt {
namespace {

// Shortest augmenting path with potentials on an n x m matrix, n <= m.
// Returns the column of every row.
std::vector<std::size_t> solve_rows(const std::vector<double>& a, std::size_t n, std::size_t m) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

// Optimal cost of matching min(|rows|, |cols|) pairs within a sub-matrix.
double optimum(const std::vector<double>& cost, std::size_t stride,
               const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols) {
  if (rows.empty() || cols.empty()) return 0.0;
  const bool flip = rows.size() > cols.size();
  const auto& r = flip ? cols : rows;
  const auto& c = flip ? rows : cols;
  std::vector<double> sub(r.size() * c.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    for (std::size_t j = 0; j < c.size(); ++j) {
      sub[i * c.size() + j] = flip ? cost[c[j] * stride + r[i]] : cost[r[i] * stride + c[j]];
    }
  }
  const auto assign = solve_rows(sub, r.size(), c.size());
  double total = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) total += sub[i * c.size() + assign[i]];
  return total;
}

bool same_cost(double a, double b) {
  return std::abs(a - b) <= 1e-9 * std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

}  // namespace

MatchResult hungarian_match(const std::vector<double>& cost, std::size_t preds, std::size_t gts) {
  if (cost.size() != preds * gts) {
    throw DimensionError("hungarian_match: " + std::to_string(cost.size()) + " costs for " +
                         std::to_string(preds) + "x" + std::to_string(gts));
  }
  for (double c : cost) {
    if (!std::isfinite(c)) throw std::invalid_argument("hungarian_match: non-finite cost");
  }
  MatchResult result;
  if (preds == 0 || gts == 0) return result;
  std::vector<std::size_t> all_rows(preds), all_cols(gts);
  for (std::size_t i = 0; i < preds; ++i) all_rows[i] = i;
  for (std::size_t j = 0; j < gts; ++j) all_cols[j] = j;
  const double best = optimum(cost, gts, all_rows, all_cols);
  const std::size_t target = std::min(preds, gts);

  // Walk predictions in order, giving each the smallest ground truth that
  // still admits an optimal completion.
  double fixed = 0.0;
  std::vector<std::size_t> free_cols = all_cols;
  for (std::size_t p = 0; p < preds && result.pairs.size() < target; ++p) {
    std::vector<std::size_t> rest_rows;
    for (std::size_t r = p + 1; r < preds; ++r) rest_rows.push_back(r);
    bool placed = false;
    for (std::size_t k = 0; k < free_cols.size() && !placed; ++k) {
      std::vector<std::size_t> rest_cols = free_cols;
      rest_cols.erase(rest_cols.begin() + static_cast<std::ptrdiff_t>(k));
      if (result.pairs.size() + 1 + std::min(rest_rows.size(), rest_cols.size()) != target) continue;
      const double c = cost[p * gts + free_cols[k]];
      if (same_cost(fixed + c + optimum(cost, gts, rest_rows, rest_cols), best)) {
        result.pairs.emplace_back(p, free_cols[k]);
        fixed += c;
        free_cols = std::move(rest_cols);
        placed = true;
      }
    }
  }
  for (const auto& [p, g] : result.pairs) result.total_cost += cost[p * gts + g];
  return result;
}

}  // namespace domprompt
