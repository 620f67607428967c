// Transportation simplex on the complete bipartite graph rows -> columns.
//
// The basis is a spanning tree of m + n - 1 cells over the m + n nodes
// (rows are nodes [0, m), columns are nodes [m, m + n)). Each pivot prices
// cells with potentials u_i + v_j = c_ij on the tree, brings in the first
// cell (row-major) with negative reduced cost, and drops the lowest-index
// cell among the tied minimum-flow backward arcs of the created cycle.
// Choosing both by index is Bland's rule, which rules out cycling on
// degenerate pivots.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "olva/errors.hpp"
#include "olva/ot.hpp"

namespace olva::ot {
namespace {

void check_marginals(const CostMatrix& cost, std::span<const double> a, std::span<const double> b) {
  if (a.size() != cost.rows) {
    throw DimensionError("row marginal has " + std::to_string(a.size()) + " entries, cost has " +
                         std::to_string(cost.rows) + " rows");
  }
  if (b.size() != cost.cols) {
    throw DimensionError("column marginal has " + std::to_string(b.size()) + " entries, cost has " +
                         std::to_string(cost.cols) + " columns");
  }
  double sa = 0.0, sb = 0.0;
  for (double v : a) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ContractError("row marginal entries must be finite and non-negative");
    sa += v;
  }
  for (double v : b) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ContractError("column marginal entries must be finite and non-negative");
    sb += v;
  }
  if (std::abs(sa - sb) > kMarginalSumTolerance) {
    throw ContractError("infeasible marginals: row mass " + std::to_string(sa) + " vs column mass " +
                        std::to_string(sb));
  }
  if (!(sa > 0.0)) throw ContractError("marginals carry no mass");
}

class TransportSimplex {
 public:
  TransportSimplex(const CostMatrix& cost, std::span<const double> a, std::span<const double> b)
      : c_(cost), m_(cost.rows), n_(cost.cols), flow_(m_ * n_, 0.0), basic_(m_ * n_, false) {
    double scale = 0.0;
    for (double v : c_.values) scale = std::max(scale, std::abs(v));
    price_tol_ = 1e-12 * (1.0 + scale);
    northwest_corner(a, b);
  }

  std::size_t run() {
    std::size_t pivots = 0;
    for (;;) {
      compute_potentials();
      const std::size_t entering = find_entering();
      if (entering == kNone) return pivots;
      pivot(entering);
      ++pivots;
    }
  }

  const std::vector<double>& flow() const { return flow_; }

 private:
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  void northwest_corner(std::span<const double> a, std::span<const double> b) {
    std::vector<double> ra(a.begin(), a.end()), rb(b.begin(), b.end());
    std::size_t i = 0, j = 0;
    for (;;) {
      const double q = std::min(ra[i], rb[j]);
      set_basic(i * n_ + j, q);
      ra[i] -= q;
      rb[j] -= q;
      if (i == m_ - 1 && j == n_ - 1) break;
      if (i == m_ - 1) {
        ++j;
      } else if (j == n_ - 1) {
        ++i;
      } else if (ra[i] <= rb[j]) {
        ++i;
      } else {
        ++j;
      }
    }
  }

  void set_basic(std::size_t cell, double q) {
    basic_[cell] = true;
    flow_[cell] = q;
    cells_.push_back(cell);
  }

  void build_adjacency() {
    adj_.assign(m_ + n_, {});
    for (std::size_t cell : cells_) {
      const std::size_t i = cell / n_, j = cell % n_;
      adj_[i].push_back(cell);
      adj_[m_ + j].push_back(cell);
    }
  }

  std::size_t other_end(std::size_t node, std::size_t cell) const {
    return node < m_ ? m_ + cell % n_ : cell / n_;
  }

  // Potentials by a traversal of the basis tree rooted at row 0 (u_0 = 0).
  void compute_potentials() {
    build_adjacency();
    pot_.assign(m_ + n_, 0.0);
    std::vector<bool> seen(m_ + n_, false);
    stack_.clear();
    stack_.push_back(0);
    seen[0] = true;
    while (!stack_.empty()) {
      const std::size_t node = stack_.back();
      stack_.pop_back();
      for (std::size_t cell : adj_[node]) {
        const std::size_t next = other_end(node, cell);
        if (seen[next]) continue;
        seen[next] = true;
        pot_[next] = c_.values[cell] - pot_[node];
        stack_.push_back(next);
      }
    }
  }

  std::size_t find_entering() const {
    for (std::size_t i = 0; i < m_; ++i) {
      for (std::size_t j = 0; j < n_; ++j) {
        const std::size_t cell = i * n_ + j;
        if (basic_[cell]) continue;
        if (c_.values[cell] - pot_[i] - pot_[m_ + j] < -price_tol_) return cell;
      }
    }
    return kNone;
  }

  // Tree path from column node (m + j) back to row node i, as basic cells.
  std::vector<std::size_t> tree_path(std::size_t row, std::size_t col_node) {
    std::vector<std::size_t> parent_cell(m_ + n_, kNone);
    std::vector<bool> seen(m_ + n_, false);
    stack_.clear();
    stack_.push_back(row);
    seen[row] = true;
    while (!stack_.empty()) {
      const std::size_t node = stack_.back();
      stack_.pop_back();
      if (node == col_node) break;
      for (std::size_t cell : adj_[node]) {
        const std::size_t next = other_end(node, cell);
        if (seen[next]) continue;
        seen[next] = true;
        parent_cell[next] = cell;
        stack_.push_back(next);
      }
    }
    std::vector<std::size_t> path;
    for (std::size_t node = col_node; node != row;) {
      const std::size_t cell = parent_cell[node];
      path.push_back(cell);
      node = other_end(node, cell);
    }
    return path;
  }

  void pivot(std::size_t entering) {
    const std::size_t row = entering / n_, col = entering % n_;
    // path[0] touches the entering column; alternate signs starting with -.
    const auto path = tree_path(row, m_ + col);
    double theta = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < path.size(); k += 2) theta = std::min(theta, flow_[path[k]]);
    std::size_t leaving = kNone;
    for (std::size_t k = 0; k < path.size(); k += 2) {
      if (flow_[path[k]] == theta && path[k] < leaving) leaving = path[k];
    }
    for (std::size_t k = 0; k < path.size(); ++k) {
      double& f = flow_[path[k]];
      f += (k % 2 == 0) ? -theta : theta;
      if (std::abs(f) < 1e-18) f = 0.0;
    }
    flow_[leaving] = 0.0;
    basic_[leaving] = false;
    std::replace(cells_.begin(), cells_.end(), leaving, entering);
    basic_[entering] = true;
    flow_[entering] = theta;
  }

  const CostMatrix& c_;
  std::size_t m_, n_;
  std::vector<double> flow_;
  std::vector<bool> basic_;
  std::vector<std::size_t> cells_;
  std::vector<std::vector<std::size_t>> adj_;
  std::vector<double> pot_;
  std::vector<std::size_t> stack_;
  double price_tol_ = 0.0;
};

}  // namespace

Coupling solve_exact(const CostMatrix& cost, std::span<const double> row_marginal,
                     std::span<const double> col_marginal) {
  check_marginals(cost, row_marginal, col_marginal);
  if (cost.rows > kMaxExactSide || cost.cols > kMaxExactSide) {
    throw ContractError("solve_exact: problem sides are limited to " + std::to_string(kMaxExactSide));
  }
  TransportSimplex simplex(cost, row_marginal, col_marginal);
  Coupling out;
  out.rows = cost.rows;
  out.cols = cost.cols;
  out.iterations = simplex.run();
  out.gamma = simplex.flow();
  for (double& g : out.gamma) g = std::max(g, 0.0);
  out.row_marginal.assign(row_marginal.begin(), row_marginal.end());
  out.col_marginal.assign(col_marginal.begin(), col_marginal.end());
  out.objective = transport_cost(cost, out);
  out.converged = true;
  return out;
}

}  // namespace olva::ot
