#include "doctest.h"

#include <cmath>

#include "intake/gradcheck.hpp"
#include "intake/layers.hpp"
#include "intake/optim.hpp"
#include "test_support.hpp"

using namespace intake;
using intake::testing::as_vector;
using intake::testing::project;
using intake::testing::random_tensor;

TEST_CASE("dense forward") {
  SUBCASE("identity weight and zero bias") {
    Tensor x = random_tensor({2, 3, 4}, 1);
    Tensor w({4, 4});
    for (std::size_t i = 0; i < 4; ++i) w.at({i, i}) = 1.0;
    Tensor y = dense(x, w, Tensor({4}));
    CHECK(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
  }
  SUBCASE("affine shift") {
    Tensor y = dense(Tensor({1, 2}, {1, 2}), Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {3, 4}));
    CHECK(y[0] == 4.0);
    CHECK(y[1] == 6.0);
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(dense(Tensor({2, 3}), Tensor({4, 2}), Tensor({2})), std::invalid_argument);
  }
}

TEST_CASE("dense gradients match finite differences") {
  Tensor x = random_tensor({3, 4}, 2);
  Tensor w = random_tensor({4, 5}, 3);
  Tensor b = random_tensor({5}, 4);
  Tensor r = random_tensor({3, 5}, 5);
  auto loss = [&] { return project(dense(x, w, b), r); };
  DenseGrad g = dense_backward(x, w, r);
  CHECK(finite_difference_check(loss, x.values(), g.input.values()) < 1e-6);
  CHECK(finite_difference_check(loss, w.values(), g.weight.values()) < 1e-6);
  CHECK(finite_difference_check(loss, b.values(), g.bias.values()) < 1e-6);
}

TEST_CASE("finite difference harness detects a wrong gradient") {
  Tensor x = random_tensor({3, 4}, 6);
  Tensor w = random_tensor({4, 2}, 7);
  Tensor r = random_tensor({3, 2}, 8);
  Tensor b({2});
  auto loss = [&] { return project(dense(x, w, b), r); };
  DenseGrad g = dense_backward(x, w, r);
  for (double& v : g.weight.values()) v *= 2.0;
  CHECK(finite_difference_check(loss, w.values(), g.weight.values()) == doctest::Approx(1.0).epsilon(1e-4));
  CHECK_THROWS_AS(finite_difference_check(loss, w.values(), g.weight.values(), 1e-2), std::invalid_argument);
}

TEST_CASE("dilated convolution forward") {
  SUBCASE("unit kernel is the identity") {
    Tensor x = random_tensor({2, 1, 7}, 9);
    Tensor y = conv1d_dilated(x, Tensor({1, 1, 1}, 1.0), 4);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
  }
  SUBCASE("hand computed dilation 2") {
    Tensor y = conv1d_dilated(Tensor({1, 1, 5}, {1, 2, 3, 4, 5}), Tensor({1, 1, 3}, 1.0), 2);
    CHECK(as_vector(y) == std::vector<double>{4, 6, 9, 6, 8});
  }
  SUBCASE("time length preserved for every dilation") {
    for (std::size_t d : {1, 2, 4, 8, 16}) {
      Tensor y = conv1d_dilated(random_tensor({2, 3, 20, 4}, d), random_tensor({5, 3, 3}, d + 1), d);
      CHECK(y.shape() == std::vector<std::size_t>{2, 5, 20, 4});
    }
  }
  SUBCASE("even kernel rejected") {
    CHECK_THROWS_AS(conv1d_dilated(Tensor({1, 1, 5}), Tensor({1, 1, 2}), 1), std::invalid_argument);
  }
}

TEST_CASE("dilated convolution gradients match finite differences") {
  for (std::size_t d : {1, 2, 4, 8, 16}) {
    CAPTURE(d);
    Tensor x = random_tensor({2, 3, 19, 2}, 10 + d);
    Tensor k = random_tensor({4, 3, 3}, 20 + d);
    Tensor r = random_tensor({2, 4, 19, 2}, 30 + d);
    auto loss = [&] { return project(conv1d_dilated(x, k, d), r); };
    ConvGrad g = conv1d_dilated_backward(x, k, d, r);
    CHECK(finite_difference_check(loss, x.values(), g.input.values()) < 1e-6);
    CHECK(finite_difference_check(loss, k.values(), g.kernel.values()) < 1e-6);
  }
}

TEST_CASE("batch norm") {
  SUBCASE("constant channel maps to shift") {
    Tensor x({2, 2, 3, 2});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (i / 6) % 2 == 0 ? 5.0 : -2.0;
    Tensor y = batch_norm(x, Tensor({2}, {2.0, 3.0}), Tensor({2}, {0.25, -0.5}), BatchNormStats::identity(2),
                          Mode::train, 1e-5);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == ((i / 6) % 2 == 0 ? 0.25 : -0.5));
  }
  SUBCASE("unit scale normalizes per channel") {
    Tensor x = random_tensor({3, 2, 4, 5}, 40, -3.0, 7.0);
    Tensor y = batch_norm(x, Tensor({2}, 1.0), Tensor({2}, 0.0), BatchNormStats::identity(2), Mode::train, 1e-12);
    for (std::size_t c = 0; c < 2; ++c) {
      double s = 0.0, ss = 0.0;
      std::size_t n = 0;
      for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t i = 0; i < 20; ++i) {
          const double v = y[(b * 2 + c) * 20 + i];
          s += v;
          ss += v * v;
          ++n;
        }
      CHECK(s / n == doctest::Approx(0.0).epsilon(1e-12));
      CHECK(ss / n == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
  SUBCASE("running statistics and infer mode") {
    Tensor x = random_tensor({4, 1, 10}, 41, 1.0, 3.0);
    BatchNormStats stats = BatchNormStats::identity(1);
    BatchNormCache cache;
    batch_norm(x, Tensor({1}, 1.0), Tensor({1}, 0.0), stats, Mode::train, 1e-5, &cache);
    update_running_stats(stats, cache, 0.1);
    CHECK(stats.running_mean[0] == doctest::Approx(0.1 * cache.batch_mean[0]));
    CHECK(stats.running_var[0] == doctest::Approx(0.9 + 0.1 * cache.batch_var[0] * 40.0 / 39.0));
    Tensor y = batch_norm(x, Tensor({1}, 1.0), Tensor({1}, 0.0), stats, Mode::infer, 1e-5);
    CHECK(y[0] == doctest::Approx((x[0] - stats.running_mean[0]) / std::sqrt(stats.running_var[0] + 1e-5)));
  }
  SUBCASE("invalid eps") {
    CHECK_THROWS_AS(batch_norm(Tensor({2, 1, 2}), Tensor({1}), Tensor({1}), BatchNormStats::identity(1), Mode::train, 0.0),
                    std::invalid_argument);
  }
}

TEST_CASE("batch norm gradients match finite differences") {
  Tensor x = random_tensor({2, 3, 4, 3}, 50, -2.0, 2.0);
  Tensor scale = random_tensor({3}, 51, 0.5, 1.5);
  Tensor shift = random_tensor({3}, 52);
  Tensor r = random_tensor({2, 3, 4, 3}, 53);
  const auto stats = BatchNormStats{random_tensor({3}, 54), random_tensor({3}, 55, 0.5, 2.0)};
  for (Mode mode : {Mode::train, Mode::infer}) {
    auto loss = [&] { return project(batch_norm(x, scale, shift, stats, mode, 1e-5), r); };
    BatchNormCache cache;
    batch_norm(x, scale, shift, stats, mode, 1e-5, &cache);
    BatchNormGrad g = batch_norm_backward(cache, scale, r);
    CHECK(finite_difference_check(loss, x.values(), g.input.values(), 1e-5) < 1e-5);
    CHECK(finite_difference_check(loss, scale.values(), g.scale.values(), 1e-5) < 1e-5);
    CHECK(finite_difference_check(loss, shift.values(), g.shift.values(), 1e-5) < 1e-5);
  }
}

TEST_CASE("relu") {
  Tensor y = relu(Tensor({3}, {-1, 0, 2}));
  CHECK(as_vector(y) == std::vector<double>{0, 0, 2});
  Tensor neg = relu(random_tensor({10}, 60, -5.0, -0.1));
  for (double v : neg.values()) CHECK(v == 0.0);
  Tensor g = relu_backward(Tensor({3}, {-1, 0, 2}), Tensor({3}, 1.0));
  CHECK(as_vector(g) == std::vector<double>{0, 0, 1});

  Tensor x = random_tensor({40}, 61);
  for (double& v : x.values()) v += v > 0 ? 0.1 : -0.1;  // stay away from the kink
  Tensor r = random_tensor({40}, 62);
  auto loss = [&] { return project(relu(x), r); };
  CHECK(finite_difference_check(loss, x.values(), relu_backward(x, r).values()) < 1e-6);
}

TEST_CASE("dropout") {
  Tensor x = random_tensor({4, 5}, 70);
  RngStream rng(7);
  SUBCASE("rate 0 and infer mode are identity") {
    CHECK(dropout(x, 0.0, rng, Mode::train).storage() == x.storage());
    CHECK(dropout(x, 0.0, rng, Mode::infer).storage() == x.storage());
    CHECK(dropout(x, 0.7, rng, Mode::infer).storage() == x.storage());
  }
  SUBCASE("rate must be below one") { CHECK_THROWS_AS(dropout(x, 1.0, rng, Mode::train), std::invalid_argument); }
  SUBCASE("keep fraction over a million draws") {
    Tensor big({1000000}, 1.0);
    Tensor y = dropout(big, 0.5, RngStream(12345), Mode::train);
    std::size_t kept = 0;
    for (double v : y.values()) {
      if (v != 0.0) {
        CHECK(v == 2.0);
        ++kept;
      }
    }
    CHECK(std::abs(double(kept) / 1e6 - 0.5) <= 0.002);
  }
  SUBCASE("mask is deterministic and carries the gradient") {
    Tensor m1, m2;
    Tensor y1 = dropout(x, 0.3, rng, Mode::train, &m1);
    Tensor y2 = dropout(x, 0.3, rng, Mode::train, &m2);
    CHECK(y1.storage() == y2.storage());
    Tensor r = random_tensor({4, 5}, 71);
    auto loss = [&] { return project(dropout(x, 0.3, rng, Mode::train), r); };
    CHECK(finite_difference_check(loss, x.values(), dropout_backward(m1, r).values()) < 1e-6);
  }
}

TEST_CASE("fused relu and dropout") {
  Tensor x = random_tensor({6, 7}, 72);
  const RngStream rng(8);
  for (Mode mode : {Mode::train, Mode::infer}) {
    double scale = 0.0;
    Tensor fused = relu_dropout(x, 0.4, rng, mode, &scale);
    Tensor mask;
    Tensor composed = dropout(relu(x), 0.4, rng, mode, &mask);
    CHECK(fused.storage() == composed.storage());
    CHECK(scale == (mode == Mode::train ? 1.0 / 0.6 : 1.0));

    Tensor r = random_tensor({6, 7}, 73);
    Tensor expected = relu_backward(x, dropout_backward(mask, r));
    CHECK(relu_dropout_backward(fused, r, scale).storage() == expected.storage());
  }
}

TEST_CASE("graph convolution gradients match finite differences") {
  const std::size_t v = 4;
  Tensor x = random_tensor({2, 3, 5, v}, 80);
  std::vector<Tensor> w{random_tensor({2, 3}, 81), random_tensor({2, 3}, 82), random_tensor({2, 3}, 83)};
  std::vector<Tensor> a{random_tensor({v, v}, 84, 0, 1), random_tensor({v, v}, 85, 0, 1), random_tensor({v, v}, 86, 0, 1)};
  Tensor b = random_tensor({2}, 87);
  Tensor r = random_tensor({2, 2, 5, v}, 88);
  auto loss = [&] { return project(graph_conv(x, w, b, a), r); };
  GraphConvGrad g = graph_conv_backward(x, w, a, r);
  CHECK(finite_difference_check(loss, x.values(), g.input.values()) < 1e-6);
  CHECK(finite_difference_check(loss, b.values(), g.bias.values()) < 1e-6);
  for (std::size_t p = 0; p < 3; ++p) {
    CHECK(finite_difference_check(loss, w[p].values(), g.weights[p].values()) < 1e-6);
    CHECK(finite_difference_check(loss, a[p].values(), g.adjacency[p].values()) < 1e-6);
  }
}

TEST_CASE("graph convolution aggregates row-wise") {
  // y[i] = sum_j A[i, j] x[j] with a single channel and identity weight
  Tensor x({1, 1, 1, 2}, {3.0, 5.0});
  std::vector<Tensor> w{Tensor({1, 1}, 1.0)};
  std::vector<Tensor> a{Tensor({2, 2}, {0.5, 0.5, 0.0, 1.0})};
  Tensor y = graph_conv(x, w, Tensor({1}), a);
  CHECK(y[0] == 4.0);
  CHECK(y[1] == 5.0);
  std::vector<Tensor> bad{Tensor({3, 3})};
  CHECK_THROWS_AS(graph_conv(x, w, Tensor({1}), bad), std::invalid_argument);
}

TEST_CASE("adam") {
  AdamSettings s{0.01, 0.9, 0.999, 1e-8};
  SUBCASE("first step moves by lr against the gradient sign") {
    Param p("x", Tensor({3}, {1.0, 1.0, 1.0}));
    p.grad = Tensor({3}, {0.3, -5.0, 1e-3});
    adam_step(p, s);
    CHECK(p.value[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
    CHECK(p.value[1] == doctest::Approx(1.0 + 0.01).epsilon(1e-6));
    CHECK(p.value[2] == doctest::Approx(1.0 - 0.01).epsilon(1e-4));
    CHECK(p.step_count == 1);
    CHECK(p.grad[1] == -5.0);  // untouched
  }
  SUBCASE("zero gradient leaves the value but counts the step") {
    Param p("x", Tensor({2}, {0.5, -0.5}));
    adam_step(p, s);
    CHECK(p.value[0] == 0.5);
    CHECK(p.value[1] == -0.5);
    CHECK(p.step_count == 1);
  }
  SUBCASE("descends x^2") {
    Param p("x", Tensor({1}, 1.0));
    AdamSettings fast{0.1, 0.9, 0.999, 1e-8};
    for (int i = 0; i < 100; ++i) {
      p.grad[0] = 2.0 * p.value[0];
      adam_step(p, fast);
    }
    CHECK(std::abs(p.value[0]) < 0.1);
  }
  SUBCASE("non-positive learning rate") {
    Param p("x", Tensor({1}, 1.0));
    CHECK_THROWS_AS(adam_step(p, AdamSettings{0.0}), std::invalid_argument);
  }
}

TEST_CASE("rng streams are reproducible") {
  RngStream a(99), b(99);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(RngStream(1).split(3).next_u64() == RngStream(1).split(3).next_u64());
  CHECK(RngStream(1).split(3).next_u64() != RngStream(1).split(4).next_u64());
  RngStream c(5);
  for (int i = 0; i < 1000; ++i) {
    double u = c.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(c.below(7) < 7);
  }
  // Seed 0 starts the plain splitmix64 sequence; its first output is a published constant.
  CHECK(RngStream(0).next_u64() == 0xE220A8397B1DCDAFull);
  CHECK(RngStream(0).uniform_at(0) == RngStream(0).uniform());
}
