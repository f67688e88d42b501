#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "lego/lego.hpp"
#include "lego/local_loss.hpp"
#include "lego/ops.hpp"
#include "support/test_util.hpp"

using lego::ConvSpec;
using lego::i64;
using lego::Tensor;
using test_util::fd_check;
using test_util::random_tensor;
using test_util::weighted_sum;

namespace {
constexpr double kTol = 1e-5;
}

TEST_CASE("conv gradients match finite differences", "[gradcheck]") {
  std::mt19937 rng(101);
  for (int rep = 0; rep < 20; ++rep) {
    const i64 b = 1 + rng() % 2, c = 1 + rng() % 3, n = 1 + rng() % 3;
    const i64 dt = 1 + rng() % 4, stride = 1 + rng() % 2, pad = rng() % 2;
    const i64 t_in = dt + rng() % 6, w_in = 1 + rng() % 3;
    ConvSpec spec{c, n, dt, 1, stride, pad, 0};
    Tensor<double> x = random_tensor<double>({b, c, t_in, w_in}, rng);
    Tensor<double> w = random_tensor<double>({n, c, dt, 1}, rng);
    Tensor<double> head = random_tensor<double>(lego::conv_forward(x, w, spec).shape(), rng);

    auto loss = [&]() { return weighted_sum(lego::conv_forward(x, w, spec), head); };
    Tensor<double> gx, gw;
    lego::conv_backward(head, x, w, spec, &gx, &gw);
    REQUIRE(fd_check(loss, x.data(), x.numel(), gx.buffer()) < kTol);
    REQUIRE(fd_check(loss, w.data(), w.numel(), gw.buffer()) < kTol);
  }
}

TEST_CASE("dense gradients match finite differences", "[gradcheck]") {
  std::mt19937 rng(102);
  for (int rep = 0; rep < 20; ++rep) {
    const i64 b = 1 + rng() % 4, f = 1 + rng() % 6, u = 1 + rng() % 5;
    Tensor<double> x = random_tensor<double>({b, f}, rng);
    Tensor<double> w = random_tensor<double>({f, u}, rng);
    Tensor<double> bias = random_tensor<double>({u}, rng);
    Tensor<double> head = random_tensor<double>({b, u}, rng);

    auto loss = [&]() { return weighted_sum(lego::dense_forward(x, w, bias), head); };
    Tensor<double> gx, gw, gb;
    lego::dense_backward(head, x, w, &gx, &gw, &gb);
    REQUIRE(fd_check(loss, x.data(), x.numel(), gx.buffer()) < kTol);
    REQUIRE(fd_check(loss, w.data(), w.numel(), gw.buffer()) < kTol);
    REQUIRE(fd_check(loss, bias.data(), bias.numel(), gb.buffer()) < kTol);
  }
}

TEST_CASE("relu gradient matches finite differences away from zero", "[gradcheck]") {
  std::mt19937 rng(103);
  for (int rep = 0; rep < 20; ++rep) {
    const i64 nelem = 8 + rng() % 16;
    Tensor<double> x({nelem});
    for (i64 i = 0; i < nelem; ++i) {
      // keep every element at least 0.05 away from the kink
      double v = 0.0;
      while (std::abs(v) < 0.05) {
        v = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
      }
      x[i] = v;
    }
    Tensor<double> head = random_tensor<double>({nelem}, rng);
    auto loss = [&]() { return weighted_sum(lego::relu(x), head); };
    Tensor<double> gx = lego::relu_backward(head, x);
    REQUIRE(fd_check(loss, x.data(), x.numel(), gx.buffer()) < kTol);
  }
}

TEST_CASE("maxpool routes gradients to the argmax positions", "[gradcheck]") {
  std::mt19937 rng(104);
  for (int rep = 0; rep < 20; ++rep) {
    const i64 b = 1 + rng() % 2, c = 1 + rng() % 3;
    const i64 extent = 2 + rng() % 2, stride = 1 + rng() % 2;
    const i64 t_in = extent + rng() % 8, w_in = 1 + rng() % 3;
    Tensor<double> x = random_tensor<double>({b, c, t_in, w_in}, rng);
    lego::MaxPoolCache cache;
    Tensor<double> y = lego::maxpool_forward(x, extent, stride, &cache);
    Tensor<double> head = random_tensor<double>(y.shape(), rng);

    auto loss = [&]() {
      return weighted_sum(lego::maxpool_forward(x, extent, stride, nullptr), head);
    };
    Tensor<double> gx = lego::maxpool_backward(head, x.shape(), cache);
    REQUIRE(fd_check(loss, x.data(), x.numel(), gx.buffer()) < kTol);
  }
}

TEST_CASE("batch norm gradients match finite differences", "[gradcheck]") {
  std::mt19937 rng(105);
  for (int rep = 0; rep < 20; ++rep) {
    const i64 b = 2 + rng() % 3, c = 1 + rng() % 3, t = 1 + rng() % 4, w = 1 + rng() % 2;
    Tensor<double> x = random_tensor<double>({b, c, t, w}, rng);
    Tensor<double> gamma = random_tensor<double>({c}, rng, 0.5, 1.5);
    Tensor<double> beta = random_tensor<double>({c}, rng);
    Tensor<double> head = random_tensor<double>({b, c, t, w}, rng);

    auto loss = [&]() {
      lego::BatchNormState<double> state(c);  // fresh state: output is a pure function
      return weighted_sum(lego::batchnorm_forward(x, gamma, beta, state, true), head);
    };
    lego::BatchNormState<double> state(c);
    lego::BatchNormCache<double> cache;
    lego::batchnorm_forward(x, gamma, beta, state, true, &cache);
    Tensor<double> gx, ggamma, gbeta;
    lego::batchnorm_backward(head, gamma, cache, &gx, &ggamma, &gbeta);
    REQUIRE(fd_check(loss, x.data(), x.numel(), gx.buffer()) < kTol);
    REQUIRE(fd_check(loss, gamma.data(), gamma.numel(), ggamma.buffer()) < kTol);
    REQUIRE(fd_check(loss, beta.data(), beta.numel(), gbeta.buffer()) < kTol);
  }
}

TEST_CASE("softmax cross entropy gradient matches finite differences", "[gradcheck]") {
  std::mt19937 rng(106);
  for (int rep = 0; rep < 20; ++rep) {
    const i64 b = 1 + rng() % 4, classes = 2 + rng() % 5;
    Tensor<double> logits = random_tensor<double>({b, classes}, rng, -2.0, 2.0);
    std::vector<int> targets;
    for (i64 i = 0; i < b; ++i) targets.push_back(static_cast<int>(rng() % classes));

    auto loss = [&]() { return lego::softmax_cross_entropy(logits, targets).loss; };
    lego::SoftmaxLoss<double> sm = lego::softmax_cross_entropy(logits, targets);
    REQUIRE(fd_check(loss, logits.data(), logits.numel(), sm.grad_logits.buffer()) < kTol);
  }
}

TEST_CASE("lego bank and input gradients match finite differences", "[gradcheck][lego]") {
  std::mt19937 rng(107);
  for (int rep = 0; rep < 20; ++rep) {
    const i64 o = 1 + rng() % 3;
    const i64 c = o * (1 + rng() % 3);
    const i64 n = 2 + rng() % 6;
    const double m = std::uniform_real_distribution<double>(0.3, 1.0)(rng);
    const i64 d = 1 + rng() % 3;
    const i64 b = 1 + rng() % 2, t_in = d + rng() % 5, w_in = 1 + rng() % 2;

    lego::LegoLayer<double> layer =
        lego::init_lego_layer<double>(n, c, d, o, m, static_cast<std::uint32_t>(rng()));
    Tensor<double> x = random_tensor<double>({b, c, t_in, w_in}, rng);
    lego::LegoCache<double> cache;
    Tensor<double> y = lego::lego_conv_stm(x, layer, &cache);
    Tensor<double> head = random_tensor<double>(y.shape(), rng);

    // mask frozen: the forward is an ordinary differentiable map of B and x
    auto loss = [&]() { return weighted_sum(lego::lego_conv_naive(x, layer), head); };
    Tensor<double> gx, gbank, gproxy;
    lego::lego_backward(head, x, layer, cache, &gx, &gbank, &gproxy);
    REQUIRE(fd_check(loss, layer.bank.data(), layer.bank.numel(), gbank.buffer()) < kTol);
    REQUIRE(fd_check(loss, x.data(), x.numel(), gx.buffer()) < kTol);
  }
}

TEST_CASE("similarity loss gradients match finite differences", "[gradcheck][local]") {
  std::mt19937 rng(108);
  for (int rep = 0; rep < 10; ++rep) {
    const i64 b = 2 + rng() % 3, c = 1 + rng() % 3, t = 2 + rng() % 3, w = 1 + rng() % 2;
    const i64 classes = 2 + rng() % 3;
    Tensor<double> x = random_tensor<double>({b, c, t, w}, rng);
    std::mt19937 head_rng(rng());
    lego::LocalHead<double> head = lego::make_local_head<double>(x.shape(), classes, head_rng);
    std::vector<int> targets;
    for (i64 i = 0; i < b; ++i) targets.push_back(static_cast<int>(rng() % classes));
    Tensor<double> onehot = lego::one_hot<double>(targets, classes);

    auto loss = [&]() { return lego::similarity_loss(x, head, onehot, false).loss; };
    head.sim_w.zero_grad();
    lego::SimilarityLossResult<double> result = lego::similarity_loss(x, head, onehot, true);
    REQUIRE(fd_check(loss, x.data(), x.numel(), result.grad_block.buffer(), 1e-6) < kTol);
    REQUIRE(fd_check(loss, head.sim_w.data(), head.sim_w.numel(), head.sim_w.grad, 1e-6) < kTol);
  }
}

TEST_CASE("prediction loss gradient matches finite differences", "[gradcheck][local]") {
  std::mt19937 rng(109);
  for (int rep = 0; rep < 10; ++rep) {
    const i64 b = 2 + rng() % 3, c = 1 + rng() % 3, t = 2 + rng() % 3, w = 1 + rng() % 2;
    const i64 classes = 2 + rng() % 3;
    Tensor<double> x = random_tensor<double>({b, c, t, w}, rng);
    std::mt19937 head_rng(rng());
    lego::LocalHead<double> head = lego::make_local_head<double>(x.shape(), classes, head_rng);
    std::vector<int> targets;
    for (i64 i = 0; i < b; ++i) targets.push_back(static_cast<int>(rng() % classes));

    auto loss = [&]() { return lego::prediction_loss(x, head, targets, false).loss; };
    lego::PredictionLossResult<double> result = lego::prediction_loss(x, head, targets, false);
    REQUIRE(fd_check(loss, x.data(), x.numel(), result.grad_block.buffer()) < kTol);
  }
}
