#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "grad_cases.hpp"
#include "olva/adam.hpp"
#include "olva/checkpoint.hpp"
#include "olva/errors.hpp"
#include "olva/ops.hpp"
#include "olva/rng.hpp"

using namespace olva;
using oracle::TensorD;

TEST_CASE("rng streams are reproducible and derived streams differ") {
  CounterRng a(42), b(42);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  CounterRng c = CounterRng(42).derive({1}), d = CounterRng(42).derive({2});
  CHECK(c.next_u64() != d.next_u64());
  // Deriving ignores how far the parent has advanced.
  CounterRng used(42);
  used.next_u64();
  CHECK(used.derive({1}) == CounterRng(42).derive({1}));
}

TEST_CASE("rng uniform and normal moments") {
  CounterRng rng(7);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0, lo = 1, hi = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  CHECK(lo >= 0.0);
  CHECK(hi < 1.0);
  CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(std::abs(sn / n) < 0.01);
  CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));
  std::map<std::uint64_t, int> counts;
  for (int i = 0; i < 30000; ++i) ++counts[rng.below(3)];
  CHECK(counts.size() == 3);
  for (auto& [k, v] : counts) CHECK(std::abs(v - 10000) < 500);
}

TEST_CASE("tensor handles alias storage and clone copies") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor alias = a;
  alias.at(0) = 9;
  CHECK(a.at(0) == 9);
  Tensor copy = a.clone();
  copy.at(1) = -1;
  CHECK(a.at(1) == 2);
  CHECK(a.numel() == 4);
  CHECK_THROWS_AS(a.item(), ContractError);
  CHECK_THROWS_AS(Tensor::from({3}, {1, 2}), DimensionError);
  CHECK_THROWS_AS(a.grad(), ContractError);
}

TEST_CASE("elementwise examples") {
  Tensor x = Tensor::from({2}, {-1.0f, 2.0f});
  Tensor y = ops::leaky_relu(x, 0.3f);
  CHECK(y.at(0) == doctest::Approx(-0.3));
  CHECK(y.at(1) == doctest::Approx(2.0));
  CHECK(ops::sigmoid(Tensor::scalar(0.0f)).item() == 0.5f);
  CHECK_THROWS_AS(ops::add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
}

TEST_CASE("log and exp reject out-of-domain values") {
  CHECK_THROWS_AS(ops::log(Tensor::from({2}, {1.0f, 0.0f})), NumericDomainError);
  CHECK_THROWS_AS(ops::log(Tensor::from({1}, {-2.0f})), NumericDomainError);
  CHECK_THROWS_AS(ops::exp(Tensor::from({1}, {1000.0f})), NumericDomainError);
  CHECK(ops::exp(Tensor::scalar(0.0f)).item() == 1.0f);
}

TEST_CASE("conv2d examples") {
  Tensor x = Tensor::full({1, 1, 4, 4}, 1.0f);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor b = Tensor::zeros({1});
  Tensor y = ops::conv2d(x, w, b, 1);
  CHECK(y.shape() == Shape{1, 1, 4, 4});
  CHECK(y.at(1 * 4 + 1) == 9.0f);
  CHECK(y.at(0) == 4.0f);  // corner sees a 2x2 window
  Tensor s = ops::conv2d(x, w, b, 2);
  CHECK(s.shape() == Shape{1, 1, 2, 2});
  CHECK_THROWS_AS(ops::conv2d(x, Tensor::zeros({1, 2, 3, 3}), b, 1), DimensionError);
}

TEST_CASE("conv2d matches a direct loop") {
  CounterRng rng(3);
  auto x = oracle::random_tensor(rng, {2, 3, 7, 7}, -1, 1, false);
  auto w = oracle::random_tensor(rng, {4, 3, 3, 3}, -1, 1, false);
  auto b = oracle::random_tensor(rng, {4}, -1, 1, false);
  for (std::size_t stride : {1u, 2u}) {
    TensorD y = ops::conv2d(x, w, b, stride);
    const std::size_t out = (7 + 2 - 3) / stride + 1;
    REQUIRE(y.shape() == Shape{2, 4, out, out});
    double worst = 0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t o = 0; o < 4; ++o)
        for (std::size_t i = 0; i < out; ++i)
          for (std::size_t j = 0; j < out; ++j) {
            double acc = b.at(o);
            for (std::size_t c = 0; c < 3; ++c)
              for (int ki = 0; ki < 3; ++ki)
                for (int kj = 0; kj < 3; ++kj) {
                  const int yy = int(i * stride) + ki - 1, xx = int(j * stride) + kj - 1;
                  if (yy < 0 || xx < 0 || yy >= 7 || xx >= 7) continue;
                  acc += x.at(((n * 3 + c) * 7 + yy) * 7 + xx) * w.at(((o * 3 + c) * 3 + ki) * 3 + kj);
                }
            worst = std::max(worst, std::abs(acc - y.at(((n * 4 + o) * out + i) * out + j)));
          }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("conv_transpose2d doubles the extent and is the adjoint of conv2d") {
  Tensor x = Tensor::zeros({1, 1, 2, 2});
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor b = Tensor::from({1}, {0.25f});
  Tensor y = ops::conv_transpose2d(x, w, b, 2);
  CHECK(y.shape() == Shape{1, 1, 4, 4});
  for (float v : y.data()) CHECK(v == 0.25f);

  // <conv(u), v> == <u, convT(v)> with zero bias.
  CounterRng rng(11);
  auto u = oracle::random_tensor(rng, {1, 2, 8, 8}, -1, 1, false);
  auto v = oracle::random_tensor(rng, {1, 3, 4, 4}, -1, 1, false);
  auto k = oracle::random_tensor(rng, {3, 2, 3, 3}, -1, 1, false);
  auto zero3 = TensorD::zeros({3}), zero2 = TensorD::zeros({2});
  TensorD cu = ops::conv2d(u, k, zero3, 2);
  TensorD tv = ops::conv_transpose2d(v, k, zero2, 2);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < cu.numel(); ++i) lhs += cu.at(i) * v.at(i);
  for (std::size_t i = 0; i < tv.numel(); ++i) rhs += u.at(i) * tv.at(i);
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("backward examples") {
  Tape tape;
  TapeGuard guard(tape);
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  backward(ops::sum(x));
  for (float g : x.grad()) CHECK(g == 1.0f);

  Tensor v = Tensor::from({3}, {1, 2, 3}, true);
  backward(ops::sum(ops::square(v)));
  CHECK(v.grad()[0] == 2.0f);
  CHECK(v.grad()[1] == 4.0f);
  CHECK(v.grad()[2] == 6.0f);

  CHECK_THROWS_AS(backward(ops::square(v)), ContractError);
}

TEST_CASE("ops record nothing without an active tape") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tensor y = ops::square(x);
  CHECK_FALSE(y.requires_grad());
  CHECK(Tape::active() == nullptr);
}

TEST_CASE("every op gradient matches central differences") {
  CounterRng rng(2024);
  for (const auto& c : oracle::op_gradient_cases()) {
    CAPTURE(c.name);
    for (int rep = 0; rep < 3; ++rep) {
      auto r = oracle::check_instance(c, rng);
      CAPTURE(r.worst_input);
      CHECK(r.worst <= 1e-3);
    }
  }
}

TEST_CASE("composed conv -> lrelu -> linear -> mse graph matches central differences") {
  CounterRng rng(5);
  oracle::GradCase c{"composed",
                     [](CounterRng& r) {
                       return std::vector<TensorD>{oracle::random_tensor(r, {2, 2, 4, 4}),
                                                   oracle::random_tensor(r, {3, 2, 3, 3}),
                                                   oracle::random_tensor(r, {3}, 0.2, 0.4),
                                                   oracle::random_tensor(r, {4, 12}), oracle::random_tensor(r, {4}),
                                                   oracle::random_tensor(r, {2, 4}, -1, 1, false)};
                     },
                     [](const std::vector<TensorD>& in) {
                       auto h = ops::leaky_relu(ops::conv2d(in[0], in[1], in[2], 2), 0.3);
                       auto y = ops::linear(ops::reshape(h, {2, 12}), in[3], in[4]);
                       return ops::mse(y, in[5]);
                     }};
  for (int rep = 0; rep < 5; ++rep) CHECK(oracle::check_instance(c, rng).worst <= 1e-3);
}

TEST_CASE("adam first step moves each component by about lr") {
  BasicParameter<double> p{"w", TensorD::from({3}, {1.0, -2.0, 0.5}, true)};
  p.value.grad()[0] = 3.0;
  p.value.grad()[1] = -0.01;
  p.value.grad()[2] = 0.0;
  BasicAdam<double> adam({.lr = 0.01});
  std::vector<BasicParameter<double>> params{p};
  adam.step(params);
  CHECK(p.value.at(0) == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(p.value.at(1) == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
  CHECK(p.value.at(2) == 0.5);
  CHECK(adam.steps() == 1);
}

TEST_CASE("adam leaves parameters unchanged for zero gradients") {
  BasicParameter<double> p{"w", TensorD::from({2}, {4.0, 5.0}, true)};
  BasicAdam<double> adam;
  std::vector<BasicParameter<double>> params{p};
  for (int i = 0; i < 5; ++i) adam.step(params);
  CHECK(p.value.at(0) == 4.0);
  CHECK(p.value.at(1) == 5.0);
}

TEST_CASE("adam minimizes a scalar quadratic") {
  BasicParameter<double> p{"w", TensorD::from({1}, {0.0}, true)};
  BasicAdam<double> adam({.lr = 0.1});
  std::vector<BasicParameter<double>> params{p};
  std::vector<double> dist;
  for (int i = 0; i < 50; ++i) {
    p.value.grad()[0] = 2.0 * (p.value.at(0) - 3.0);
    adam.step(params);
    dist.push_back(std::abs(p.value.at(0) - 3.0));
  }
  for (std::size_t i = 10; i < dist.size(); i += 10) CHECK(dist[i] < dist[i - 10]);
  CHECK(dist.back() < dist.front());
}

TEST_CASE("adam refuses frozen or gradient-less parameters") {
  BasicAdam<double> adam;
  std::vector<BasicParameter<double>> frozen{{"f", TensorD::from({1}, {1.0}, true), true}};
  CHECK_THROWS_AS(adam.step(frozen), ContractError);
  std::vector<BasicParameter<double>> no_grad{{"g", TensorD::from({1}, {1.0}, false)}};
  CHECK_THROWS_AS(adam.step(no_grad), ContractError);
}

TEST_CASE("checkpoint round trip is exact") {
  std::vector<NamedTensor> tensors{{"a", Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6.5f})},
                                   {"layer.w", Tensor::from({1}, {-0.125f})}};
  auto bytes = encode_checkpoint(tensors);
  auto back = decode_checkpoint(bytes);
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "a");
  CHECK(back[0].tensor.shape() == Shape{2, 3});
  for (std::size_t i = 0; i < 6; ++i) CHECK(back[0].tensor.at(i) == tensors[0].tensor.at(i));
  CHECK(find_tensor(back, "layer.w").item() == -0.125f);
  CHECK_THROWS_AS(find_tensor(back, "missing"), ConfigError);
  CHECK(encode_checkpoint(back) == bytes);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(truncated), IoError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), IoError);

  const auto path = std::filesystem::temp_directory_path() / "olva_test_roundtrip.ckpt";
  save_checkpoint(path, tensors);
  CHECK(encode_checkpoint(load_checkpoint(path)) == bytes);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
  CHECK_THROWS_AS(save_checkpoint("/nonexistent-dir/x.ckpt", tensors), IoError);
}
