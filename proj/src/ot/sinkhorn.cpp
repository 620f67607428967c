#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "olva/errors.hpp"
#include "olva/ot.hpp"

namespace olva::ot {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_or_neg_inf(double v) { return v > 0.0 ? std::log(v) : kNegInf; }

// Projects a nearly feasible plan onto exact marginals: shrink rows and
// columns that carry too much mass, then spread the deficit as a rank-one
// correction.
void round_to_marginals(std::vector<double>& gamma, std::size_t m, std::size_t n, std::span<const double> a,
                        std::span<const double> b) {
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += gamma[i * n + j];
    if (s > a[i] && s > 0.0) {
      const double f = a[i] / s;
      for (std::size_t j = 0; j < n; ++j) gamma[i * n + j] *= f;
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += gamma[i * n + j];
    if (s > b[j] && s > 0.0) {
      const double f = b[j] / s;
      for (std::size_t i = 0; i < m; ++i) gamma[i * n + j] *= f;
    }
  }
  std::vector<double> er(m), ec(n);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += gamma[i * n + j];
    er[i] = std::max(0.0, a[i] - s);
    total += er[i];
  }
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += gamma[i * n + j];
    ec[j] = std::max(0.0, b[j] - s);
  }
  if (total <= 0.0) return;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) gamma[i * n + j] += er[i] * ec[j] / total;
}

}  // namespace

Coupling solve_sinkhorn(const CostMatrix& cost, std::span<const double> row_marginal,
                        std::span<const double> col_marginal, SinkhornOptions options) {
  if (!(options.epsilon > 0.0)) throw ContractError("solve_sinkhorn: epsilon must be positive");
  if (row_marginal.size() != cost.rows || col_marginal.size() != cost.cols) {
    throw DimensionError("solve_sinkhorn: marginals do not match the " + std::to_string(cost.rows) + "x" +
                         std::to_string(cost.cols) + " cost");
  }
  double sa = 0.0, sb = 0.0;
  for (double v : row_marginal) {
    if (!(v >= 0.0)) throw ContractError("solve_sinkhorn: row marginal entries must be non-negative");
    sa += v;
  }
  for (double v : col_marginal) {
    if (!(v >= 0.0)) throw ContractError("solve_sinkhorn: column marginal entries must be non-negative");
    sb += v;
  }
  if (std::abs(sa - sb) > kMarginalSumTolerance) {
    throw ContractError("infeasible marginals: row mass " + std::to_string(sa) + " vs column mass " +
                        std::to_string(sb));
  }

  const std::size_t m = cost.rows, n = cost.cols;
  const double eps = options.epsilon;
  std::vector<double> log_a(m), log_b(n);
  for (std::size_t i = 0; i < m; ++i) log_a[i] = log_or_neg_inf(row_marginal[i]);
  for (std::size_t j = 0; j < n; ++j) log_b[j] = log_or_neg_inf(col_marginal[j]);

  // Dual potentials f, g with gamma_ij = exp((f_i + g_j - c_ij) / eps).
  std::vector<double> f(m, 0.0), g(n, 0.0), scratch(std::max(m, n));
  auto lse = [&](std::size_t len) {
    double mx = kNegInf;
    for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, scratch[k]);
    if (mx == kNegInf) return kNegInf;
    double s = 0.0;
    for (std::size_t k = 0; k < len; ++k) s += std::exp(scratch[k] - mx);
    return mx + std::log(s);
  };

  Coupling out;
  out.rows = m;
  out.cols = n;
  out.converged = false;
  std::size_t it = 0;
  while (it < options.max_iters) {
    ++it;
    for (std::size_t i = 0; i < m; ++i) {
      if (log_a[i] == kNegInf) {
        f[i] = kNegInf;
        continue;
      }
      for (std::size_t j = 0; j < n; ++j) scratch[j] = (g[j] - cost(i, j)) / eps;
      f[i] = eps * (log_a[i] - lse(n));
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (log_b[j] == kNegInf) {
        g[j] = kNegInf;
        continue;
      }
      for (std::size_t i = 0; i < m; ++i) scratch[i] = (f[i] - cost(i, j)) / eps;
      g[j] = eps * (log_b[j] - lse(m));
    }
    // Columns are exact after the g update; rows carry the violation.
    double violation = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      if (f[i] != kNegInf) {
        for (std::size_t j = 0; j < n; ++j) {
          if (g[j] != kNegInf) s += std::exp((f[i] + g[j] - cost(i, j)) / eps);
        }
      }
      violation += std::abs(s - row_marginal[i]);
    }
    if (violation <= options.tol) {
      out.converged = true;
      break;
    }
  }
  out.iterations = it;

  out.gamma.assign(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (f[i] == kNegInf) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (g[j] != kNegInf) out.gamma[i * n + j] = std::exp((f[i] + g[j] - cost(i, j)) / eps);
    }
  }
  round_to_marginals(out.gamma, m, n, row_marginal, col_marginal);
  out.row_marginal.assign(row_marginal.begin(), row_marginal.end());
  out.col_marginal.assign(col_marginal.begin(), col_marginal.end());
  out.objective = transport_cost(cost, out);
  return out;
}

}  // namespace olva::ot
