#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "skel3d/core/rng.hpp"
#include "skel3d/nn/ops.hpp"
#include "skel3d/nn/params.hpp"

using namespace skel3d;
using namespace skel3d::nn;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal() * scale;
  return t;
}

// Scalar probe: sum(out * w) for a fixed random w.
Var probe(const Var& out, std::uint64_t seed) {
  Var w = constant(random_tensor(out.shape(), seed));
  return scale(mean(mul(out, w)), static_cast<double>(out.value().numel()));
}

void expect_grads_ok(const std::function<Var()>& f, std::vector<Var> inputs) {
  auto res = testing::check_gradients(f, std::move(inputs));
  CHECK(res.checked > 0);
  CHECK_MESSAGE(res.failures == 0, "max rel error " << res.max_rel_error);
}

}  // namespace

TEST_CASE("conv2d matches a direct loop and has correct gradients") {
  Var x = parameter(random_tensor({2, 3, 5, 6}, 1));
  Var w = parameter(random_tensor({4, 3, 3, 3}, 2));
  Var b = parameter(random_tensor({4}, 3));
  for (int stride : {1, 2}) {
    Var y = conv2d(x, w, b, stride, 1);
    const int Ho = y.dim(2), Wo = y.dim(3);
    for (int n = 0; n < 2; ++n)
      for (int o = 0; o < 4; ++o)
        for (int oy = 0; oy < Ho; ++oy)
          for (int ox = 0; ox < Wo; ++ox) {
            double s = b.value()[o];
            for (int c = 0; c < 3; ++c)
              for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                  const int iy = oy * stride - 1 + ky, ix = ox * stride - 1 + kx;
                  if (iy < 0 || iy >= 5 || ix < 0 || ix >= 6) continue;
                  s += w.value().at(o, c, ky, kx) * x.value().at(n, c, iy, ix);
                }
            CHECK(y.value().at(n, o, oy, ox) == doctest::Approx(s).epsilon(1e-12));
          }
    expect_grads_ok([&] { return probe(conv2d(x, w, b, stride, 1), 9); }, {x, w, b});
  }
  Var w1 = parameter(random_tensor({2, 3, 1, 1}, 4));
  expect_grads_ok([&] { return probe(conv2d(x, w1, Var(), 1, 0), 10); }, {x, w1});
}

TEST_CASE("conv2d rows are independent of batch composition") {
  Tensor xs = random_tensor({3, 2, 4, 4}, 5);
  Var w = constant(random_tensor({3, 2, 3, 3}, 6));
  Var all = conv2d(constant(xs), w, Var(), 1, 1);
  Tensor one = xs.slice0(1).reshaped({1, 2, 4, 4});
  Var single = conv2d(constant(one), w, Var(), 1, 1);
  CHECK(all.value().slice0(1) == single.value().slice0(0));
}

TEST_CASE("linear, bmm, softmax and token reshapes have correct gradients") {
  Var x2 = parameter(random_tensor({3, 5}, 11));
  Var x3 = parameter(random_tensor({2, 4, 5}, 12));
  Var w = parameter(random_tensor({6, 5}, 13));
  Var b = parameter(random_tensor({6}, 14));
  expect_grads_ok([&] { return probe(linear(x2, w, b), 15); }, {x2, w, b});
  expect_grads_ok([&] { return probe(linear(x3, w, Var()), 16); }, {x3, w});

  Var a = parameter(random_tensor({2, 3, 4}, 17));
  Var bt = parameter(random_tensor({2, 5, 4}, 18));
  Var bn = parameter(random_tensor({2, 4, 5}, 19));
  expect_grads_ok([&] { return probe(bmm(a, bt, true), 20); }, {a, bt});
  expect_grads_ok([&] { return probe(bmm(a, bn, false), 21); }, {a, bn});
  expect_grads_ok([&] { return probe(softmax(a), 22); }, {a});

  Var img = parameter(random_tensor({2, 3, 2, 4}, 23));
  expect_grads_ok([&] { return probe(from_tokens(to_tokens(img), 2, 4), 24); }, {img});
  CHECK(from_tokens(to_tokens(img), 2, 4).value() == img.value());
}

TEST_CASE("softmax rows sum to one") {
  Var s = softmax(constant(random_tensor({3, 7}, 30, 5.0)));
  for (int r = 0; r < 3; ++r) {
    double sum = 0.0;
    for (int i = 0; i < 7; ++i) sum += s.value()[r * 7 + i];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("group_norm, modulate and elementwise ops have correct gradients") {
  Var x = parameter(random_tensor({2, 4, 3, 3}, 31, 2.0));
  Var g = parameter(random_tensor({2, 4, 3, 3}, 32, 0.5));
  Var bta = parameter(random_tensor({2, 4, 3, 3}, 33, 0.5));
  expect_grads_ok([&] { return probe(group_norm(x, 2, 1e-5), 34); }, {x});
  expect_grads_ok([&] { return probe(modulate(x, g, bta), 35); }, {x, g, bta});
  expect_grads_ok([&] { return probe(modulate(group_norm(x, 2, 1e-5), g, bta), 36); }, {x, g, bta});
  expect_grads_ok([&] { return probe(silu(x), 37); }, {x});
  expect_grads_ok([&] { return probe(mul(x, g), 38); }, {x, g});
  expect_grads_ok([&] { return probe(sub(x, g), 39); }, {x, g});
  expect_grads_ok([&] { return mse(x, g); }, {x, g});
  Var bias = parameter(random_tensor({2, 4}, 40));
  expect_grads_ok([&] { return probe(add_channel_bias(x, bias), 41); }, {x, bias});
}

TEST_CASE("resampling and channel plumbing have correct gradients") {
  Var x = parameter(random_tensor({2, 3, 4, 4}, 50));
  Var y = parameter(random_tensor({2, 2, 4, 4}, 51));
  expect_grads_ok([&] { return probe(upsample_nearest(x, 2), 52); }, {x});
  expect_grads_ok([&] { return probe(avg_pool(x, 2), 53); }, {x});
  expect_grads_ok([&] { return probe(concat_channels(x, y), 54); }, {x, y});
  expect_grads_ok([&] { return probe(slice_channels(x, 1, 2), 55); }, {x});
  expect_grads_ok([&] { return probe(reshape(x, {2, 48}), 56); }, {x});
}

TEST_CASE("group_norm rejects a group count that does not divide channels") {
  Var x = constant(Tensor({1, 6, 2, 2}));
  CHECK_THROWS(group_norm(x, 4, 1e-5));
}

TEST_CASE("no-grad mode records nothing") {
  Var x = parameter(random_tensor({2, 2}, 60));
  NoGradGuard guard;
  Var y = scale(x, 2.0);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("parameter init is keyed by name, not by insertion order") {
  ParameterStore a(7), b(7);
  a.add("first", {3, 4}, Init::uniform_fan_in, 4);
  a.add("shared", {5}, Init::normal_fan_in, 5);
  b.add("shared", {5}, Init::normal_fan_in, 5);
  CHECK(a.get("shared").value() == b.get("shared").value());
  CHECK(a.get("first").value().squared_norm() > 0.0);
}

TEST_CASE("adam minimizes a quadratic") {
  ParameterStore store(1);
  Var w = store.add("w", {4}, Init::normal_fan_in, 1);
  Var target = constant(Tensor({4}, std::vector<double>{1.0, -2.0, 0.5, 3.0}));
  Adam opt({.learning_rate = 0.05});
  for (int i = 0; i < 600; ++i) {
    backward(mse(w, target));
    opt.step(store);
  }
  for (int i = 0; i < 4; ++i) CHECK(w.value()[i] == doctest::Approx(target.value()[i]).epsilon(1e-3));
}
