#pragma once

// Discrete optimal transport between two point clouds: squared-Euclidean
// cost matrices, an exact network-simplex solver, a log-domain Sinkhorn
// solver, and coupling diagnostics. All arithmetic is double precision.

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "olva/tensor.hpp"

namespace olva::ot {

struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major, all >= 0
  double alpha = 10.0;

  double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  /// Same matrix with every entry multiplied by factor > 0.
  CostMatrix scaled(double factor) const;
};

struct Coupling {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> gamma;  // row-major
  std::vector<double> row_marginal;
  std::vector<double> col_marginal;
  double objective = 0.0;  // <gamma, C>
  bool converged = true;
  std::size_t iterations = 0;

  double operator()(std::size_t i, std::size_t j) const { return gamma[i * cols + j]; }
  /// gamma as a [rows, cols] tensor (no gradient).
  template <std::floating_point T>
  BasicTensor<T> as_tensor() const;
};

/// entry(i, j) = alpha * ||source_i - target_j||^2 for [m, K] and [n, K].
CostMatrix cost_matrix(const Tensor& source, const Tensor& target, double alpha);
CostMatrix cost_matrix(std::span<const double> source, std::span<const double> target, std::size_t dim,
                       double alpha);
/// Wraps explicit values (tests, CSV round trips). Entries must be >= 0.
CostMatrix make_cost(std::size_t rows, std::size_t cols, std::vector<double> values, double alpha = 1.0);

std::vector<double> uniform_marginal(std::size_t size);

inline constexpr std::size_t kMaxExactSide = 512;
inline constexpr double kMarginalSumTolerance = 1e-9;

/// Exact transport by the network simplex on the bipartite transportation
/// graph, with Bland's rule on cell index (row-major) for both entering and
/// leaving arcs. Throws ContractError for negative marginals or sums that
/// disagree by more than 1e-9.
Coupling solve_exact(const CostMatrix& cost, std::span<const double> row_marginal,
                     std::span<const double> col_marginal);

struct SinkhornOptions {
  double epsilon = 0.01;
  std::size_t max_iters = 10000;
  double tol = 1e-6;  // L1 marginal violation
};

/// Entropic transport in the log domain. Non-convergence is reported through
/// Coupling::converged. The returned plan is projected onto the exact
/// marginals before being returned.
Coupling solve_sinkhorn(const CostMatrix& cost, std::span<const double> row_marginal,
                        std::span<const double> col_marginal, SinkhornOptions options = {});

/// Frobenius inner product sum_ij gamma_ij c_ij.
double transport_cost(const CostMatrix& cost, const Coupling& coupling);

/// Largest absolute deviation of a row or column sum from its marginal.
double marginal_violation(const Coupling& coupling);

/// Writes "# rows=R cols=C" then one comma-separated line per row.
void write_csv(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
               std::span<const double> values);

}  // namespace olva::ot
