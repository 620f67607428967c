#include "olva/adam.hpp"

#include <cmath>

#include "olva/errors.hpp"

namespace olva {

template <std::floating_point T>
void BasicAdam<T>::step(std::span<BasicParameter<T>> params) {
  for (const auto& p : params) {
    if (p.frozen) throw ContractError("adam: parameter '" + p.name + "' is frozen and cannot be updated");
    if (!p.value.requires_grad()) throw ContractError("adam: parameter '" + p.name + "' has no gradient");
  }
  const std::uint64_t t = steps_ + 1;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (auto& p : params) {
    BasicTensor<T> value = p.value;
    auto w = value.data();
    auto g = value.grad();
    Moments& mo = moments_[p.name];
    if (mo.first.size() != w.size()) {
      mo.first.assign(w.size(), T(0));
      mo.second.assign(w.size(), T(0));
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double m = b1 * static_cast<double>(mo.first[i]) + (1.0 - b1) * gi;
      const double v = b2 * static_cast<double>(mo.second[i]) + (1.0 - b2) * gi * gi;
      mo.first[i] = static_cast<T>(m);
      mo.second[i] = static_cast<T>(v);
      const double m_hat = m / correction1;
      const double v_hat = v / correction2;
      w[i] = static_cast<T>(static_cast<double>(w[i]) - options_.lr * m_hat / (std::sqrt(v_hat) + options_.eps));
    }
  }
  steps_ = t;
}

template <std::floating_point T>
const typename BasicAdam<T>::Moments* BasicAdam<T>::moments(const std::string& name) const {
  auto it = moments_.find(name);
  return it == moments_.end() ? nullptr : &it->second;
}

template class BasicAdam<float>;
template class BasicAdam<double>;

}  // namespace olva
