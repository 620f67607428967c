#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <string>

#include "olva/errors.hpp"
#include "olva/ot.hpp"

namespace olva::ot {

CostMatrix CostMatrix::scaled(double factor) const {
  if (!(factor > 0.0)) throw ContractError("cost scaling factor must be positive");
  CostMatrix out = *this;
  for (double& v : out.values) v *= factor;
  out.alpha *= factor;
  return out;
}

template <std::floating_point T>
BasicTensor<T> Coupling::as_tensor() const {
  std::vector<T> v(gamma.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(gamma[i]);
  return BasicTensor<T>::from(Shape{rows, cols}, std::move(v));
}

template BasicTensor<float> Coupling::as_tensor<float>() const;
template BasicTensor<double> Coupling::as_tensor<double>() const;

CostMatrix cost_matrix(std::span<const double> source, std::span<const double> target, std::size_t dim,
                       double alpha) {
  if (!(alpha > 0.0)) throw ContractError("cost_matrix: alpha must be positive, got " + std::to_string(alpha));
  if (dim == 0 || source.size() % dim != 0 || target.size() % dim != 0) {
    throw DimensionError("cost_matrix: point buffers are not multiples of the feature axis extent " +
                         std::to_string(dim));
  }
  CostMatrix c;
  c.rows = source.size() / dim;
  c.cols = target.size() / dim;
  c.alpha = alpha;
  c.values.resize(c.rows * c.cols);
  for (std::size_t i = 0; i < c.rows; ++i) {
    for (std::size_t j = 0; j < c.cols; ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double d = source[i * dim + k] - target[j * dim + k];
        d2 += d * d;
      }
      c.values[i * c.cols + j] = alpha * d2;
    }
  }
  return c;
}

CostMatrix cost_matrix(const Tensor& source, const Tensor& target, double alpha) {
  if (source.rank() != 2 || target.rank() != 2) {
    throw DimensionError("cost_matrix: expected [m, K] and [n, K], got " + shape_str(source.shape()) + " and " +
                         shape_str(target.shape()));
  }
  if (source.dim(1) != target.dim(1)) {
    throw DimensionError("cost_matrix: feature axis (1) mismatch, " + std::to_string(source.dim(1)) + " vs " +
                         std::to_string(target.dim(1)));
  }
  std::vector<double> s(source.data().begin(), source.data().end());
  std::vector<double> t(target.data().begin(), target.data().end());
  return cost_matrix(s, t, source.dim(1), alpha);
}

CostMatrix make_cost(std::size_t rows, std::size_t cols, std::vector<double> values, double alpha) {
  if (rows == 0 || cols == 0 || values.size() != rows * cols) {
    throw DimensionError("make_cost: " + std::to_string(values.size()) + " values for a " + std::to_string(rows) +
                         "x" + std::to_string(cols) + " matrix");
  }
  for (double v : values)
    if (!(v >= 0.0) || !std::isfinite(v)) throw ContractError("make_cost: entries must be finite and non-negative");
  return CostMatrix{rows, cols, std::move(values), alpha};
}

std::vector<double> uniform_marginal(std::size_t size) {
  if (size == 0) throw ContractError("uniform_marginal: empty support");
  return std::vector<double>(size, 1.0 / static_cast<double>(size));
}

double transport_cost(const CostMatrix& cost, const Coupling& coupling) {
  if (cost.rows != coupling.rows || cost.cols != coupling.cols) {
    throw DimensionError("transport_cost: cost is " + std::to_string(cost.rows) + "x" + std::to_string(cost.cols) +
                         " but coupling is " + std::to_string(coupling.rows) + "x" + std::to_string(coupling.cols));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < cost.values.size(); ++i) acc += cost.values[i] * coupling.gamma[i];
  return acc;
}

double marginal_violation(const Coupling& coupling) {
  double worst = 0.0;
  for (std::size_t i = 0; i < coupling.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < coupling.cols; ++j) s += coupling(i, j);
    worst = std::max(worst, std::abs(s - coupling.row_marginal[i]));
  }
  for (std::size_t j = 0; j < coupling.cols; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < coupling.rows; ++i) s += coupling(i, j);
    worst = std::max(worst, std::abs(s - coupling.col_marginal[j]));
  }
  return worst;
}

void write_csv(const std::filesystem::path& path, std::size_t rows, std::size_t cols, std::span<const double> values) {
  if (values.size() != rows * cols) throw DimensionError("write_csv: value count does not match the shape");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "# rows=" << rows << " cols=" << cols << '\n';
  out << std::setprecision(17);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out << (j ? "," : "") << values[i * cols + j];
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace olva::ot
