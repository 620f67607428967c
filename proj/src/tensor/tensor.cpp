#include "olva/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "olva/errors.hpp"

namespace olva {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <std::floating_point T>
typename BasicTensor<T>::Impl& BasicTensor<T>::impl() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return *impl_;
}

template <std::floating_point T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <std::floating_point T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <std::floating_point T>
BasicTensor<T> BasicTensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  for (std::size_t axis = 0; axis < shape.size(); ++axis) {
    if (shape[axis] == 0) throw DimensionError("tensor extent on axis " + std::to_string(axis) + " must be positive");
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " holds " + std::to_string(shape_numel(shape)) +
                         " values but " + std::to_string(values.size()) + " were given");
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  BasicTensor t(std::move(impl));
  t.set_requires_grad(requires_grad);
  return t;
}

template <std::floating_point T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return from(Shape{1}, {value}, requires_grad);
}

template <std::floating_point T>
const Shape& BasicTensor<T>::shape() const {
  return impl().shape;
}

template <std::floating_point T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank-" + std::to_string(s.size()) +
                         " tensor");
  }
  return s[axis];
}

template <std::floating_point T>
std::size_t BasicTensor<T>::numel() const {
  return impl().data.size();
}

template <std::floating_point T>
std::span<T> BasicTensor<T>::data() {
  return impl().data;
}

template <std::floating_point T>
std::span<const T> BasicTensor<T>::data() const {
  return impl().data;
}

template <std::floating_point T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl().data[0];
}

template <std::floating_point T>
bool BasicTensor<T>::requires_grad() const {
  return impl().requires_grad;
}

template <std::floating_point T>
void BasicTensor<T>::set_requires_grad(bool on) {
  Impl& im = impl();
  im.requires_grad = on;
  if (on) {
    im.grad.assign(im.data.size(), T(0));
  } else {
    im.grad.clear();
    im.grad.shrink_to_fit();
  }
}

template <std::floating_point T>
bool BasicTensor<T>::has_grad() const {
  return impl().requires_grad;
}

template <std::floating_point T>
std::span<T> BasicTensor<T>::grad() {
  if (!requires_grad()) throw ContractError("tensor " + shape_str(shape()) + " does not track a gradient");
  return impl().grad;
}

template <std::floating_point T>
std::span<const T> BasicTensor<T>::grad() const {
  if (!requires_grad()) throw ContractError("tensor " + shape_str(shape()) + " does not track a gradient");
  return impl().grad;
}

template <std::floating_point T>
void BasicTensor<T>::zero_grad() {
  if (requires_grad()) std::fill(impl().grad.begin(), impl().grad.end(), T(0));
}

template <std::floating_point T>
BasicTensor<T> BasicTensor<T>::clone() const {
  return from(shape(), impl().data);
}

namespace {

template <std::floating_point T>
BasicTape<T>*& active_slot() {
  thread_local BasicTape<T>* slot = nullptr;
  return slot;
}

}  // namespace

template <std::floating_point T>
BasicTape<T>* BasicTape<T>::active() {
  return active_slot<T>();
}

template <std::floating_point T>
void BasicTape<T>::record(std::vector<BasicTensor<T>> inputs, BasicTensor<T> output, Rule rule) {
  nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(rule)});
}

template <std::floating_point T>
void BasicTape<T>::backward(const BasicTensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) throw ContractError("backward(): loss was not produced by a recorded operation");

  bool found = false;
  for (auto& node : nodes_) {
    node.output.zero_grad();
    found = found || node.output.id() == loss.id();
  }
  if (!found) throw ContractError("backward(): loss is not an output of this tape");

  BasicTensor<T> seed = loss;
  seed.grad()[0] = T(1);
  // Nodes recorded after the loss cannot influence it.
  auto it = nodes_.rbegin();
  while (it->output.id() != loss.id()) ++it;
  for (; it != nodes_.rend(); ++it) it->rule();
}

template <std::floating_point T>
TapeGuard<T>::TapeGuard(BasicTape<T>& tape) : previous_(active_slot<T>()) {
  active_slot<T>() = &tape;
}

template <std::floating_point T>
TapeGuard<T>::~TapeGuard() {
  active_slot<T>() = previous_;
}

template <std::floating_point T>
void backward(const BasicTensor<T>& loss) {
  BasicTape<T>* tape = BasicTape<T>::active();
  if (tape == nullptr) throw ContractError("backward() called without an active tape");
  tape->backward(loss);
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template class BasicTape<float>;
template class BasicTape<double>;
template class TapeGuard<float>;
template class TapeGuard<double>;
template void backward<float>(const BasicTensor<float>&);
template void backward<double>(const BasicTensor<double>&);

}  // namespace olva
