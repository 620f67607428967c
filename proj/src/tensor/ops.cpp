#include "olva/ops.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "kernels.hpp"
#include "olva/errors.hpp"

namespace olva::ops {
namespace {

template <std::floating_point T>
BasicTape<T>* tracking_tape(std::initializer_list<const BasicTensor<T>*> inputs) {
  BasicTape<T>* tape = BasicTape<T>::active();
  if (tape == nullptr) return nullptr;
  for (const BasicTensor<T>* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

template <std::floating_point T>
void require_same_shape(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != b.rank()) {
    throw DimensionError(std::string(op) + ": rank mismatch, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  for (std::size_t axis = 0; axis < a.rank(); ++axis) {
    if (a.dim(axis) != b.dim(axis)) {
      throw DimensionError(std::string(op) + ": extent mismatch on axis " + std::to_string(axis) + " (" +
                           std::to_string(a.dim(axis)) + " vs " + std::to_string(b.dim(axis)) + ")");
    }
  }
}

template <std::floating_point T>
void require_rank(const char* op, const char* what, const BasicTensor<T>& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

// Elementwise unary op: forward f(x) and derivative d(x, y).
template <std::floating_point T, class Forward, class Deriv>
BasicTensor<T> unary(const BasicTensor<T>& x, Forward f, Deriv d) {
  std::vector<T> values(x.numel());
  auto xs = x.data();
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = f(xs[i]);
  auto out = BasicTensor<T>::from(x.shape(), std::move(values));
  if (auto* tape = tracking_tape({&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x = x, out, d]() mutable {
      auto gx = x.grad();
      auto go = out.grad();
      auto xs = x.data();
      auto ys = out.data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * d(xs[i], ys[i]);
    });
  }
  return out;
}

}  // namespace

template <std::floating_point T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("add", a, b);
  std::vector<T> v(a.numel());
  auto as = a.data();
  auto bs = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = as[i] + bs[i];
  auto out = BasicTensor<T>::from(a.shape(), std::move(v));
  if (auto* tape = tracking_tape({&a, &b})) {
    out.set_requires_grad(true);
    tape->record({a, b}, out, [a = a, b = b, out]() mutable {
      auto go = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

template <std::floating_point T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("sub", a, b);
  std::vector<T> v(a.numel());
  auto as = a.data();
  auto bs = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = as[i] - bs[i];
  auto out = BasicTensor<T>::from(a.shape(), std::move(v));
  if (auto* tape = tracking_tape({&a, &b})) {
    out.set_requires_grad(true);
    tape->record({a, b}, out, [a = a, b = b, out]() mutable {
      auto go = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
      }
    });
  }
  return out;
}

template <std::floating_point T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("mul", a, b);
  std::vector<T> v(a.numel());
  auto as = a.data();
  auto bs = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = as[i] * bs[i];
  auto out = BasicTensor<T>::from(a.shape(), std::move(v));
  if (auto* tape = tracking_tape({&a, &b})) {
    out.set_requires_grad(true);
    tape->record({a, b}, out, [a = a, b = b, out]() mutable {
      auto go = out.grad();
      auto as = a.data();
      auto bs = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bs[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * as[i];
      }
    });
  }
  return out;
}

template <std::floating_point T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("div", a, b);
  std::vector<T> v(a.numel());
  auto as = a.data();
  auto bs = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (bs[i] == T(0)) throw NumericDomainError("div: division by zero at element " + std::to_string(i));
    v[i] = as[i] / bs[i];
  }
  auto out = BasicTensor<T>::from(a.shape(), std::move(v));
  if (auto* tape = tracking_tape({&a, &b})) {
    out.set_requires_grad(true);
    tape->record({a, b}, out, [a = a, b = b, out]() mutable {
      auto go = out.grad();
      auto bs = b.data();
      auto ys = out.data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] / bs[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i] * ys[i] / bs[i];
      }
    });
  }
  return out;
}

template <std::floating_point T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  return unary(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <std::floating_point T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T offset) {
  return unary(x, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <std::floating_point T>
BasicTensor<T> square(const BasicTensor<T>& x) {
  return unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <std::floating_point T>
BasicTensor<T> log(const BasicTensor<T>& x) {
  auto xs = x.data();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!(xs[i] > T(0))) {
      throw NumericDomainError("log: argument " + std::to_string(xs[i]) + " at element " + std::to_string(i) +
                               " is outside (0, inf)");
    }
  }
  return unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <std::floating_point T>
BasicTensor<T> exp(const BasicTensor<T>& x) {
  auto xs = x.data();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (std::isnan(xs[i]) || !std::isfinite(std::exp(xs[i]))) {
      throw NumericDomainError("exp: argument " + std::to_string(xs[i]) + " at element " + std::to_string(i) +
                               " overflows");
    }
  }
  return unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <std::floating_point T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope) {
  if (!(slope >= T(0) && slope < T(1))) throw ContractError("leaky_relu: slope must lie in [0, 1)");
  return unary(x, [slope](T v) { return v > T(0) ? v : slope * v; },
               [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <std::floating_point T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  return unary(
      x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <std::floating_point T>
BasicTensor<T> dropout(const BasicTensor<T>& x, T rate, bool training, CounterRng& rng) {
  if (!(rate >= T(0) && rate < T(1))) throw ContractError("dropout: rate must lie in [0, 1)");
  if (!training || rate == T(0)) return x;
  const T keep_scale = T(1) / (T(1) - rate);
  std::vector<T> mask(x.numel());
  for (T& m : mask) m = rng.uniform() < static_cast<double>(rate) ? T(0) : keep_scale;
  return mul(x, BasicTensor<T>::from(x.shape(), std::move(mask)));
}

template <std::floating_point T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v);
  auto out = BasicTensor<T>::scalar(static_cast<T>(acc));
  if (auto* tape = tracking_tape({&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x = x, out]() mutable {
      const T g = out.grad()[0];
      for (T& gx : x.grad()) gx += g;
    });
  }
  return out;
}

template <std::floating_point T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <std::floating_point T>
BasicTensor<T> sum_inner(const BasicTensor<T>& x, std::size_t keep) {
  if (keep == 0 || keep > x.rank()) {
    throw DimensionError("sum_inner: cannot keep " + std::to_string(keep) + " axes of " + shape_str(x.shape()));
  }
  Shape out_shape(x.shape().begin(), x.shape().begin() + static_cast<std::ptrdiff_t>(keep));
  const std::size_t groups = shape_numel(out_shape);
  const std::size_t inner = x.numel() / groups;
  std::vector<T> v(groups);
  auto xs = x.data();
  for (std::size_t g = 0; g < groups; ++g) {
    double acc = 0.0;
    for (std::size_t i = 0; i < inner; ++i) acc += static_cast<double>(xs[g * inner + i]);
    v[g] = static_cast<T>(acc);
  }
  auto out = BasicTensor<T>::from(std::move(out_shape), std::move(v));
  if (auto* tape = tracking_tape({&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x = x, out, groups, inner]() mutable {
      auto gx = x.grad();
      auto go = out.grad();
      for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t i = 0; i < inner; ++i) gx[g * inner + i] += go[g];
    });
  }
  return out;
}

template <std::floating_point T>
BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("mse", a, b);
  return mean(square(sub(a, b)));
}

template <std::floating_point T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  require_rank("linear", "input", x, 2);
  require_rank("linear", "weight", weight, 2);
  require_rank("linear", "bias", bias, 1);
  const std::size_t n = x.dim(0), in = x.dim(1), out_f = weight.dim(0);
  if (weight.dim(1) != in) {
    throw DimensionError("linear: feature axis (1) of input is " + std::to_string(in) + " but weight expects " +
                         std::to_string(weight.dim(1)));
  }
  if (bias.dim(0) != out_f) {
    throw DimensionError("linear: bias axis (0) is " + std::to_string(bias.dim(0)) + " but weight has " +
                         std::to_string(out_f) + " outputs");
  }
  std::vector<T> v(n * out_f);
  auto xs = x.data();
  auto ws = weight.data();
  auto bs = bias.data();
  // Weight transposed once so the inner loop is contiguous in the output.
  std::vector<T> wt(in * out_f);
  kernels::transpose(out_f, in, ws.data(), wt.data());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t o = 0; o < out_f; ++o) v[r * out_f + o] = bs[o];
  kernels::gemm_nn(n, out_f, in, xs.data(), wt.data(), v.data());
  auto out = BasicTensor<T>::from(Shape{n, out_f}, std::move(v));
  if (auto* tape = tracking_tape({&x, &weight, &bias})) {
    out.set_requires_grad(true);
    tape->record({x, weight, bias}, out, [x = x, weight = weight, bias = bias, out, n, in, out_f]() mutable {
      auto go = out.grad();
      if (x.requires_grad()) {
        // dx[N, in] += go[N, out] * W[out, in]
        kernels::gemm_nn(n, in, out_f, go.data(), weight.data().data(), x.grad().data());
      }
      if (weight.requires_grad()) {
        // dW[out, in] += go^T[out, N] * x[N, in]
        kernels::gemm_tn(out_f, in, n, go.data(), x.data().data(), weight.grad().data());
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t o = 0; o < out_f; ++o) gb[o] += go[r * out_f + o];
      }
    });
  }
  return out;
}

template <std::floating_point T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " cannot be viewed as " + shape_str(shape));
  }
  auto src = x.data();
  auto out = BasicTensor<T>::from(std::move(shape), std::vector<T>(src.begin(), src.end()));
  if (auto* tape = tracking_tape({&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x = x, out]() mutable {
      auto gx = x.grad();
      auto go = out.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
    });
  }
  return out;
}

template <std::floating_point T>
BasicTensor<T> slice_cols(const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
  require_rank("slice_cols", "input", x, 2);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (begin >= end || end > cols) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for column axis (1) of extent " + std::to_string(cols));
  }
  const std::size_t width = end - begin;
  std::vector<T> v(rows * width);
  auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) v[r * width + c] = xs[r * cols + begin + c];
  auto out = BasicTensor<T>::from(Shape{rows, width}, std::move(v));
  if (auto* tape = tracking_tape({&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x = x, out, rows, cols, begin, width]() mutable {
      auto gx = x.grad();
      auto go = out.grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < width; ++c) gx[r * cols + begin + c] += go[r * width + c];
    });
  }
  return out;
}

template <std::floating_point T>
BasicTensor<T> tile_spatial(const BasicTensor<T>& x, std::size_t extent) {
  require_rank("tile_spatial", "input", x, 4);
  if (x.dim(2) != 1 || x.dim(3) != 1) {
    throw DimensionError("tile_spatial: spatial axes (2, 3) must be 1, got " + shape_str(x.shape()));
  }
  if (extent == 1) return x;
  const std::size_t planes = x.dim(0) * x.dim(1), area = extent * extent;
  std::vector<T> v(planes * area);
  auto xs = x.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < area; ++i) v[p * area + i] = xs[p];
  auto out = BasicTensor<T>::from(Shape{x.dim(0), x.dim(1), extent, extent}, std::move(v));
  if (auto* tape = tracking_tape({&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x = x, out, planes, area]() mutable {
      auto gx = x.grad();
      auto go = out.grad();
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < area; ++i) gx[p] += go[p * area + i];
    });
  }
  return out;
}

template <std::floating_point T>
BasicTensor<T> weighted_pair_sqdist(const BasicTensor<T>& a, const BasicTensor<T>& b,
                                    const BasicTensor<T>& weights) {
  require_rank("weighted_pair_sqdist", "first point set", a, 2);
  require_rank("weighted_pair_sqdist", "second point set", b, 2);
  require_rank("weighted_pair_sqdist", "weights", weights, 2);
  const std::size_t m = a.dim(0), n = b.dim(0), k = a.dim(1);
  if (b.dim(1) != k) {
    throw DimensionError("weighted_pair_sqdist: feature axis (1) differs, " + std::to_string(k) + " vs " +
                         std::to_string(b.dim(1)));
  }
  if (weights.dim(0) != m || weights.dim(1) != n) {
    throw DimensionError("weighted_pair_sqdist: weights " + shape_str(weights.shape()) + " do not match " +
                         std::to_string(m) + "x" + std::to_string(n));
  }
  auto as = a.data();
  auto bs = b.data();
  auto ws = weights.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const T w = ws[i * n + j];
      if (w == T(0)) continue;
      double d2 = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        const double d = static_cast<double>(as[i * k + c]) - static_cast<double>(bs[j * k + c]);
        d2 += d * d;
      }
      acc += static_cast<double>(w) * d2;
    }
  }
  auto out = BasicTensor<T>::scalar(static_cast<T>(acc));
  if (auto* tape = tracking_tape({&a, &b})) {
    out.set_requires_grad(true);
    tape->record({a, b}, out, [a = a, b = b, weights = weights, out, m, n, k]() mutable {
      const T g = out.grad()[0];
      auto as = a.data();
      auto bs = b.data();
      auto ws = weights.data();
      const bool need_a = a.requires_grad(), need_b = b.requires_grad();
      std::span<T> ga = need_a ? a.grad() : std::span<T>{};
      std::span<T> gb = need_b ? b.grad() : std::span<T>{};
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const T w = ws[i * n + j];
          if (w == T(0)) continue;
          const T coeff = T(2) * g * w;
          for (std::size_t c = 0; c < k; ++c) {
            const T d = as[i * k + c] - bs[j * k + c];
            if (need_a) ga[i * k + c] += coeff * d;
            if (need_b) gb[j * k + c] -= coeff * d;
          }
        }
      }
    });
  }
  return out;
}

namespace {

template <std::floating_point T>
void check_conv_operands(const char* op, const BasicTensor<T>& input, const BasicTensor<T>& weight,
                         const BasicTensor<T>& bias, std::size_t weight_in_axis, std::size_t weight_out_axis,
                         std::size_t stride) {
  require_rank(op, "input", input, 4);
  require_rank(op, "weight", weight, 4);
  require_rank(op, "bias", bias, 1);
  if (stride == 0) throw ContractError(std::string(op) + ": stride must be positive");
  if (weight.dim(2) != weight.dim(3)) {
    throw DimensionError(std::string(op) + ": kernel axes (2, 3) must be square, got " + shape_str(weight.shape()));
  }
  if (input.dim(1) != weight.dim(weight_in_axis)) {
    throw DimensionError(std::string(op) + ": channel axis (1) of input is " + std::to_string(input.dim(1)) +
                         " but weight axis " + std::to_string(weight_in_axis) + " expects " +
                         std::to_string(weight.dim(weight_in_axis)));
  }
  if (bias.dim(0) != weight.dim(weight_out_axis)) {
    throw DimensionError(std::string(op) + ": bias axis (0) is " + std::to_string(bias.dim(0)) +
                         " but weight declares " + std::to_string(weight.dim(weight_out_axis)) + " output channels");
  }
}

}  // namespace

template <std::floating_point T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      std::size_t stride, std::size_t padding) {
  check_conv_operands("conv2d", input, weight, bias, 1, 0, stride);
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t o = weight.dim(0), k = weight.dim(2);
  if (h + 2 * padding < k) throw DimensionError("conv2d: height axis (2) smaller than the kernel");
  if (w + 2 * padding < k) throw DimensionError("conv2d: width axis (3) smaller than the kernel");
  const kernels::ConvGeometry geo{c, h, w, k, stride, padding, (h + 2 * padding - k) / stride + 1,
                                  (w + 2 * padding - k) / stride + 1};
  const std::size_t patch = geo.patch(), positions = geo.positions();

  std::vector<T> v(n * o * positions);
  std::vector<T> col(patch * positions);
  auto xs = input.data();
  auto ws = weight.data();
  auto bs = bias.data();
  for (std::size_t s = 0; s < n; ++s) {
    kernels::im2col(geo, xs.data() + s * c * h * w, col.data());
    T* dst = v.data() + s * o * positions;
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t p = 0; p < positions; ++p) dst[oc * positions + p] = bs[oc];
    kernels::gemm_nn(o, positions, patch, ws.data(), col.data(), dst);
  }
  auto out = BasicTensor<T>::from(Shape{n, o, geo.out_height, geo.out_width}, std::move(v));

  if (auto* tape = tracking_tape({&input, &weight, &bias})) {
    out.set_requires_grad(true);
    tape->record({input, weight, bias}, out, [input = input, weight = weight, bias = bias, out, geo, n, o]() mutable {
      const std::size_t patch = geo.patch(), positions = geo.positions();
      const std::size_t image = geo.channels * geo.height * geo.width;
      auto go = out.grad();
      auto xs = input.data();
      std::vector<T> col(patch * positions), col_t(positions * patch), dcol(patch * positions);
      for (std::size_t s = 0; s < n; ++s) {
        const T* gout = go.data() + s * o * positions;
        if (bias.requires_grad()) {
          auto gb = bias.grad();
          for (std::size_t oc = 0; oc < o; ++oc) {
            T acc = T(0);
            for (std::size_t p = 0; p < positions; ++p) acc += gout[oc * positions + p];
            gb[oc] += acc;
          }
        }
        if (weight.requires_grad()) {
          kernels::im2col(geo, xs.data() + s * image, col.data());
          kernels::transpose(patch, positions, col.data(), col_t.data());
          // dW[o, patch] += dOut[o, P] * col^T[P, patch]
          kernels::gemm_nn(o, patch, positions, gout, col_t.data(), weight.grad().data());
        }
        if (input.requires_grad()) {
          std::fill(dcol.begin(), dcol.end(), T(0));
          kernels::gemm_tn(patch, positions, o, weight.data().data(), gout, dcol.data());
          kernels::col2im(geo, dcol.data(), input.grad().data() + s * image);
        }
      }
    });
  }
  return out;
}

template <std::floating_point T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                const BasicTensor<T>& bias, std::size_t stride, std::size_t padding,
                                std::size_t output_padding) {
  check_conv_operands("conv_transpose2d", input, weight, bias, 0, 1, stride);
  if (output_padding == static_cast<std::size_t>(-1)) output_padding = stride - 1;
  if (output_padding >= stride) throw ContractError("conv_transpose2d: output_padding must be below stride");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t o = weight.dim(1), k = weight.dim(2);
  const std::size_t full_h = (h - 1) * stride + k + output_padding;
  const std::size_t full_w = (w - 1) * stride + k + output_padding;
  if (full_h <= 2 * padding || full_w <= 2 * padding) throw DimensionError("conv_transpose2d: padding exceeds output");
  // The adjoint conv maps the [O, OH, OW] output image onto the [C, H, W] input grid.
  const kernels::ConvGeometry geo{o, full_h - 2 * padding, full_w - 2 * padding, k, stride, padding, h, w};
  const std::size_t patch = geo.patch(), positions = geo.positions();
  const std::size_t out_image = o * geo.height * geo.width;

  std::vector<T> v(n * out_image, T(0));
  std::vector<T> col(patch * positions);
  auto xs = input.data();
  auto ws = weight.data();
  auto bs = bias.data();
  for (std::size_t s = 0; s < n; ++s) {
    std::fill(col.begin(), col.end(), T(0));
    // col[O*k*k, HW] = W^T[O*k*k, C] * x[C, HW]
    kernels::gemm_tn(patch, positions, c, ws.data(), xs.data() + s * c * positions, col.data());
    T* dst = v.data() + s * out_image;
    kernels::col2im(geo, col.data(), dst);
    const std::size_t area = geo.height * geo.width;
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t p = 0; p < area; ++p) dst[oc * area + p] += bs[oc];
  }
  auto out = BasicTensor<T>::from(Shape{n, o, geo.height, geo.width}, std::move(v));

  if (auto* tape = tracking_tape({&input, &weight, &bias})) {
    out.set_requires_grad(true);
    tape->record({input, weight, bias}, out, [input = input, weight = weight, bias = bias, out, geo, n, c]() mutable {
      const std::size_t patch = geo.patch(), positions = geo.positions();
      const std::size_t area = geo.height * geo.width, out_image = geo.channels * area;
      auto go = out.grad();
      auto xs = input.data();
      std::vector<T> dcol(patch * positions), dcol_t(positions * patch);
      for (std::size_t s = 0; s < n; ++s) {
        const T* gout = go.data() + s * out_image;
        if (bias.requires_grad()) {
          auto gb = bias.grad();
          for (std::size_t oc = 0; oc < geo.channels; ++oc) {
            T acc = T(0);
            for (std::size_t p = 0; p < area; ++p) acc += gout[oc * area + p];
            gb[oc] += acc;
          }
        }
        if (!weight.requires_grad() && !input.requires_grad()) continue;
        kernels::im2col(geo, gout, dcol.data());
        if (input.requires_grad()) {
          // dx[C, HW] += W[C, O*k*k] * dcol[O*k*k, HW]
          kernels::gemm_nn(c, positions, patch, weight.data().data(), dcol.data(),
                           input.grad().data() + s * c * positions);
        }
        if (weight.requires_grad()) {
          kernels::transpose(patch, positions, dcol.data(), dcol_t.data());
          // dW[C, O*k*k] += x[C, HW] * dcol^T[HW, O*k*k]
          kernels::gemm_nn(c, patch, positions, xs.data() + s * c * positions, dcol_t.data(),
                           weight.grad().data());
        }
      }
    });
  }
  return out;
}

#define OLVA_INSTANTIATE_OPS(T)                                                                               \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
  template BasicTensor<T> div(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                                    \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                                               \
  template BasicTensor<T> square(const BasicTensor<T>&);                                                      \
  template BasicTensor<T> log(const BasicTensor<T>&);                                                         \
  template BasicTensor<T> exp(const BasicTensor<T>&);                                                         \
  template BasicTensor<T> leaky_relu(const BasicTensor<T>&, T);                                               \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                                     \
  template BasicTensor<T> dropout(const BasicTensor<T>&, T, bool, CounterRng&);                               \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                         \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                                        \
  template BasicTensor<T> sum_inner(const BasicTensor<T>&, std::size_t);                                      \
  template BasicTensor<T> mse(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);        \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                              \
  template BasicTensor<T> slice_cols(const BasicTensor<T>&, std::size_t, std::size_t);                        \
  template BasicTensor<T> tile_spatial(const BasicTensor<T>&, std::size_t);                                   \
  template BasicTensor<T> weighted_pair_sqdist(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                               const BasicTensor<T>&);                                        \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,         \
                                 std::size_t, std::size_t);                                                   \
  template BasicTensor<T> conv_transpose2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                           std::size_t, std::size_t, std::size_t);

OLVA_INSTANTIATE_OPS(float)
OLVA_INSTANTIATE_OPS(double)

#undef OLVA_INSTANTIATE_OPS

}  // namespace olva::ops
