#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support/testutil.hpp"
#include "tubemesh/checkpoint.hpp"
#include "tubemesh/layers.hpp"
#include "tubemesh/optimizer.hpp"
#include "tubemesh/tape.hpp"

using namespace tubemesh;
using namespace tubemesh::nn;
using testutil::max_abs_diff;
using testutil::random_array;

TEST_CASE("conv1d_radial: zero kernel gives zero output") {
  Rng rng(7);
  NdArray in = random_array({1, 8}, rng);
  NdArray k({4, 1, 7});
  NdArray out = conv1d_radial(in, k, 1);
  CHECK(out.dim(0) == 4);
  CHECK(out.dim(1) == 2);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);
}

TEST_CASE("conv1d_radial: identity kernel of size 1 reproduces input") {
  Rng rng(8);
  NdArray in = random_array({1, 6}, rng);
  NdArray k({1, 1, 1}, {1.0});
  NdArray out = conv1d_radial(in, k, 1);
  CHECK(max_abs_diff(out, in) == 0.0);
}

TEST_CASE("conv1d_radial: random case matches the naive sliding-dot oracle") {
  Rng rng(9);
  NdArray in = random_array({1, 10}, rng);
  NdArray k = random_array({3, 1, 7}, rng);
  NdArray out = conv1d_radial(in, k, 1);
  CHECK(out.dim(1) == 4);
  NdArray want = testutil::naive_conv1d_radial(in, k, 1);
  CHECK(max_abs_diff(out, want) < 1e-12);
}

TEST_CASE("conv1d_radial: shape mismatch is rejected with a diagnostic") {
  NdArray in({2, 10});
  NdArray k({3, 4, 7});  // kernel expects 4 input channels
  CHECK_THROWS_WITH_AS(conv1d_radial(in, k, 1),
                       doctest::Contains("channel axis"),
                       std::invalid_argument);
  NdArray small({2, 5});
  NdArray k2({3, 2, 7});
  CHECK_THROWS_WITH_AS(conv1d_radial(small, k2, 1), doctest::Contains("R axis"),
                       std::invalid_argument);
}

TEST_CASE("conv3d_cyl: constant field maps to kernel-sum constant") {
  NdArray in = NdArray::full({1, 4, 5, 3}, 2.5);
  Rng rng(11);
  NdArray k = random_array({2, 1, 3, 3, 3}, rng);
  NdArray out = conv3d_cyl_forward(in, k);
  for (std::size_t co = 0; co < 2; ++co) {
    double ws = 0.0;
    for (std::size_t j = 0; j < 27; ++j) ws += k[co * 27 + j];
    const double want = 2.5 * ws;
    for (std::size_t i = 0; i < out.size() / 2; ++i) {
      CHECK(out[co * (out.size() / 2) + i] == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv3d_cyl: exactly equivariant to circular theta shifts") {
  Rng rng(13);
  const std::size_t T = 6, R = 5, Z = 4;
  NdArray in = random_array({1, T, R, Z}, rng);
  NdArray k = random_array({2, 1, 3, 3, 3}, rng);
  NdArray base = conv3d_cyl_forward(in, k);
  for (std::size_t shift : {1UL, 3UL}) {
    NdArray rolled({1, T, R, Z});
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t z = 0; z < Z; ++z)
          rolled[(((t + shift) % T) * R + r) * Z + z] = in[(t * R + r) * Z + z];
    NdArray out = conv3d_cyl_forward(rolled, k);
    const std::size_t Ro = R - 2;
    double m = 0.0;
    for (std::size_t co = 0; co < 2; ++co)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t r = 0; r < Ro; ++r)
          for (std::size_t z = 0; z < Z; ++z)
            m = std::max(m, std::fabs(
                out[((co * T + (t + shift) % T) * Ro + r) * Z + z] -
                base[((co * T + t) * Ro + r) * Z + z]));
    CHECK(m == 0.0);
  }
}

TEST_CASE("conv3d_cyl: random case matches the naive padded oracle") {
  Rng rng(17);
  NdArray in = random_array({1, 4, 5, 3}, rng);
  NdArray k = random_array({2, 1, 3, 3, 3}, rng);
  NdArray out = conv3d_cyl_forward(in, k);
  NdArray want = testutil::naive_conv3d_cyl(in, k);
  CHECK(max_abs_diff(out, want) < 1e-12);

  // multi-channel and short-z variants
  NdArray in2 = random_array({3, 5, 7, 2}, rng);
  NdArray k2 = random_array({2, 3, 3, 3, 3}, rng);
  CHECK(max_abs_diff(conv3d_cyl_forward(in2, k2),
                     testutil::naive_conv3d_cyl(in2, k2)) < 1e-12);
  NdArray in3 = random_array({2, 4, 4, 1}, rng);
  NdArray k3 = random_array({1, 2, 3, 3, 3}, rng);
  CHECK(max_abs_diff(conv3d_cyl_forward(in3, k3),
                     testutil::naive_conv3d_cyl(in3, k3)) < 1e-12);
}

TEST_CASE("conv3d_cyl: theta below 3 is rejected") {
  NdArray in({1, 2, 5, 3});
  NdArray k({1, 1, 3, 3, 3});
  CHECK_THROWS_WITH_AS(conv3d_cyl_forward(in, k), doctest::Contains("Theta"),
                       std::invalid_argument);
}

TEST_CASE("softmax of an all-equal vector is uniform") {
  NdArray x = NdArray::full({4}, 3.25);
  NdArray s = softmax(x, 0);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(s[i] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("sigmoid(0) is one half") {
  Tape t;
  Var x = t.constant(NdArray::scalar(0.0));
  Var s = sigmoid(t, x);
  CHECK(t.val(s)[0] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax columns sum to one along the channel axis") {
  Rng rng(23);
  Tape t;
  Var x = t.constant(random_array({2, 4, 3}, rng, -5.0, 5.0));
  Var s = softmax_channels(t, x);
  const NdArray& sv = t.val(s);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 3; ++i) {
      double acc = 0.0;
      for (std::size_t c = 0; c < 4; ++c) acc += sv[(b * 4 + c) * 3 + i];
      CHECK(std::fabs(acc - 1.0) < 1e-9);
    }
}

TEST_CASE("batch_norm matches a direct standardization oracle") {
  Rng rng(29);
  const std::size_t B = 6, C = 3, L = 5;
  NdArray x = random_array({B, C, L}, rng, -2.0, 3.0);
  BatchNorm bn("bn", C);
  // learned affine
  for (std::size_t c = 0; c < C; ++c) {
    bn.gamma.value[c] = rng.uniform(0.5, 1.5);
    bn.beta.value[c] = rng.uniform(-1.0, 1.0);
  }
  Tape t;
  Var out = batch_norm(t, t.constant(x), bn, true);
  const NdArray& ov = t.val(out);
  for (std::size_t c = 0; c < C; ++c) {
    double mu = 0.0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < L; ++i) mu += x[(b * C + c) * L + i];
    mu /= static_cast<double>(B * L);
    double var = 0.0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < L; ++i) {
        const double d = x[(b * C + c) * L + i] - mu;
        var += d * d;
      }
    var /= static_cast<double>(B * L);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < L; ++i) {
        const double want = (x[(b * C + c) * L + i] - mu) /
                                std::sqrt(var + bn.eps) * bn.gamma.value[c] +
                            bn.beta.value[c];
        CHECK(std::fabs(ov[(b * C + c) * L + i] - want) < 1e-9);
      }
  }
}

TEST_CASE("batch_norm permits a batch of one with floored variance") {
  BatchNorm bn("bn", 2);
  NdArray x({1, 2}, {3.0, -4.0});
  Tape t;
  Var out = batch_norm(t, t.constant(x), bn, true);
  CHECK(t.val(out)[0] == doctest::Approx(0.0));
  CHECK(t.val(out)[1] == doctest::Approx(0.0));
  CHECK(std::isfinite(t.val(out)[0]));
}

TEST_CASE("backward: gradient of sum is all ones") {
  Rng rng(31);
  Parameter p("p", random_array({7}, rng));
  Tape t;
  Var loss = sum(t, t.leaf(p));
  t.backward(loss);
  for (std::size_t i = 0; i < 7; ++i) CHECK(p.grad[i] == 1.0);
}

TEST_CASE("backward: gradient of half squared norm equals the input") {
  Rng rng(37);
  Parameter p("p", random_array({9}, rng));
  Tape t;
  Var loss = affine(t, sum(t, square(t, t.leaf(p))), 0.5, 0.0);
  t.backward(loss);
  for (std::size_t i = 0; i < 9; ++i)
    CHECK(p.grad[i] == doctest::Approx(p.value[i]).epsilon(1e-12));
}

TEST_CASE("backward: second call without reset is rejected") {
  Parameter p("p", NdArray::scalar(2.0));
  Tape t;
  Var loss = sum(t, t.leaf(p));
  t.backward(loss);
  CHECK_THROWS_AS(t.backward(loss), std::logic_error);
}

// Finite-difference gradient fidelity across every primitive, composed into a
// scalar through a weighted sum so all outputs are exercised.
TEST_CASE("analytic gradients of all primitives match central differences") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed * 1000 + 17);
    Parameter x("x", random_array({2, 3, 4, 6, 5}, rng));
    Parameter w3("w3", random_array({2, 3, 3, 3, 3}, rng, -0.5, 0.5));
    Parameter b3("b3", random_array({2}, rng, -0.1, 0.1));
    Parameter wr("wr", random_array({2, 2, 3}, rng, -0.5, 0.5));
    Parameter br("br", random_array({2}, rng, -0.1, 0.1));
    BatchNorm bn("bn", 2);
    NdArray mix = random_array({2, 2, 4, 2, 5}, rng);

    auto forward = [&]() {
      Tape t;
      Var h = conv3d_cyl(t, t.leaf(x), t.leaf(w3), t.leaf(b3));
      h = batch_norm(t, h, bn, true);
      h = leaky_relu(t, h, 0.1);
      h = conv_radial(t, h, t.leaf(wr), t.leaf(br), 1);
      h = sigmoid(t, h);
      Var s = weighted_sum(t, h, mix);
      return std::pair<Tape, Var>(std::move(t), s);
    };

    auto loss_value = [&]() {
      // running stats drift with each call; keep them frozen for the check
      NdArray rm = bn.running_mean, rv = bn.running_var;
      auto [t, s] = forward();
      bn.running_mean = rm;
      bn.running_var = rv;
      return t.val(s)[0];
    };

    auto [t, loss] = forward();
    for (Parameter* p : {&x, &w3, &b3, &wr, &br, &bn.gamma, &bn.beta})
      p->zero_grad();
    t.backward(loss);

    Rng pick(seed);
    for (Parameter* p : {&x, &w3, &b3, &wr, &br, &bn.gamma, &bn.beta}) {
      for (int trial = 0; trial < 3; ++trial) {
        const std::size_t i = pick.integer(p->value.size());
        const double fd =
            testutil::central_difference(loss_value, &p->value[i]);
        if (std::fabs(fd) < 1e-6) continue;  // avoid FD noise on flat coords
        CHECK(testutil::rel_err(p->grad[i], fd) < 1e-4);
      }
    }
  }
}

TEST_CASE("maxpool, global maxpool, linear, select_rows gradients") {
  Rng rng(97);
  Parameter x("x", random_array({3, 2, 12}, rng));
  Parameter w("w", random_array({4, 2}, rng));
  Parameter b("b", random_array({4}, rng));
  NdArray mix = random_array({2, 4}, rng);

  auto loss_value = [&]() {
    Tape t;
    Var h = maxpool1d(t, t.leaf(x), 3, 2);
    h = global_maxpool(t, h);
    h = linear(t, h, t.leaf(w), t.leaf(b));
    h = select_rows(t, h, {2, 0});
    return t.val(weighted_sum(t, abs_value(t, h), mix))[0];
  };
  Tape t;
  Var h = maxpool1d(t, t.leaf(x), 3, 2);
  h = global_maxpool(t, h);
  h = linear(t, h, t.leaf(w), t.leaf(b));
  h = select_rows(t, h, {2, 0});
  Var loss = weighted_sum(t, abs_value(t, h), mix);
  for (Parameter* p : {&x, &w, &b}) p->zero_grad();
  t.backward(loss);

  Rng pick(5);
  for (Parameter* p : {&x, &w, &b}) {
    for (int trial = 0; trial < 4; ++trial) {
      const std::size_t i = pick.integer(p->value.size());
      const double fd = testutil::central_difference(loss_value, &p->value[i]);
      if (std::fabs(fd) < 1e-6) continue;
      CHECK(testutil::rel_err(p->grad[i], fd) < 1e-4);
    }
  }
}

TEST_CASE("conv1d with zero padding and stride matches a naive oracle") {
  Rng rng(41);
  const std::size_t B = 2, C = 3, L = 11, Co = 4, k = 5;
  const int stride = 2, pad = 2;
  NdArray x = random_array({B, C, L}, rng);
  NdArray w = random_array({Co, C, k}, rng);
  NdArray bias = random_array({Co}, rng);
  Tape t;
  Var out = conv1d(t, t.constant(x), t.constant(w), t.constant(bias), stride,
                   pad);
  const NdArray& ov = t.val(out);
  const std::size_t Lo = (L + 2 * pad - k) / stride + 1;
  REQUIRE(ov.dim(2) == Lo);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t j = 0; j < Lo; ++j) {
        double s = bias[co];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t jj = 0; jj < k; ++jj) {
            const long zi = static_cast<long>(j * stride + jj) - pad;
            if (zi >= 0 && zi < static_cast<long>(L))
              s += w[(co * C + c) * k + jj] * x[(b * C + c) * L + zi];
          }
        CHECK(ov[(b * Co + co) * Lo + j] == doctest::Approx(s).epsilon(1e-12));
      }
}

TEST_CASE("forward passes are deterministic") {
  Rng rng(43);
  NdArray in = random_array({2, 5, 6, 4}, rng);
  NdArray k = random_array({3, 2, 3, 3, 3}, rng);
  NdArray a = conv3d_cyl_forward(in, k);
  NdArray b = conv3d_cyl_forward(in, k);
  CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("adamw: zero gradient and zero decay leave parameters unchanged") {
  Parameter p("p", NdArray({3}, {1.0, -2.0, 0.5}));
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt({&p}, cfg);
  opt.zero_grad();
  opt.step(0);
  CHECK(p.value[0] == 1.0);
  CHECK(p.value[1] == -2.0);
  CHECK(p.value[2] == 0.5);
}

TEST_CASE("adamw: one step on a scalar matches the published update") {
  Parameter p("p", NdArray::scalar(0.5));
  OptimizerConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.weight_decay = 0.02;
  AdamW opt({&p}, cfg);
  p.grad[0] = 1.0;
  opt.step(0);
  // hand computation: m=0.1, v=0.001; mhat=1, vhat=1;
  // p -= lr*(mhat/(sqrt(vhat)+eps) + wd*p)
  const double want =
      0.5 - 0.01 * (1.0 / (1.0 + 1e-8) + 0.02 * 0.5);
  CHECK(p.value[0] == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("adamw milestone schedule: two passed milestones scale lr by 1e-2") {
  OptimizerConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.milestones = {3000, 4000, 5000};
  cfg.gamma = 0.1;
  CHECK(cfg.effective_lr(4500) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(cfg.effective_lr(0) == doctest::Approx(0.01));
  CHECK(cfg.effective_lr(5000) == doctest::Approx(1e-5));
}

TEST_CASE("optimizer config invariants are enforced") {
  OptimizerConfig cfg;
  cfg.milestones = {100, 100};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.milestones = {100, 200};
  cfg.gamma = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("checkpoint round trip preserves tensors and metadata") {
  Rng rng(53);
  NdArray a = random_array({3, 4}, rng);
  NdArray b = random_array({7}, rng);
  nlohmann::ordered_json meta;
  meta["epoch"] = 42;
  meta["seed"] = 7;
  const std::string path = "/tmp/tubemesh_test_ckpt.tmnn";
  save_checkpoint(path, {{"layer.w", &a}, {"layer.b", &b}}, meta);
  Checkpoint ck = load_checkpoint(path);
  CHECK(ck.meta.at("epoch").get<int>() == 42);
  CHECK(ck.meta.at("seed").get<int>() == 7);
  CHECK(max_abs_diff(ck.tensor("layer.w"), a) == 0.0);
  CHECK(max_abs_diff(ck.tensor("layer.b"), b) == 0.0);
  CHECK_THROWS(ck.tensor("missing"));
}
