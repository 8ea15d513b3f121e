#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "properties.hpp"
#include "racelab/nn.hpp"

using namespace racelab;

TEST_CASE("analytic gradients agree with central differences") {
  for (const auto& g : props::gradient_checks(11)) {
    INFO(g.name);
    CHECK(g.rel_err <= 1e-4);
  }
}

TEST_CASE("forward of a hand-built net") {
  Mlp net({2, 2, 1});
  net.weight(0) << 1.0, -1.0, 0.5, 0.5;
  net.bias(0) << 0.0, -1.0;
  net.weight(1) << 2.0, 3.0;
  net.bias(1) << 0.25;
  Matrix x(2, 2);
  x << 1.0, 2.0, 0.0, 4.0;
  // Column 0: h = relu([1, -0.5]) = [1, 0] -> 2.25. Column 1: relu([-2, 2]) = [0, 2] -> 6.25.
  const Matrix y = net.forward(x);
  CHECK(y(0, 0) == doctest::Approx(2.25));
  CHECK(y(0, 1) == doctest::Approx(6.25));
}

TEST_CASE("wrong input size is rejected") {
  Mlp net({3, 4, 1});
  CHECK_THROWS_AS(net.forward(Matrix::Zero(2, 1)), DimensionError);
}

TEST_CASE("first Adam step moves each parameter by the learning rate") {
  double p = 1.0;
  double m = 0.0;
  double v = 0.0;
  AdamConfig cfg;
  Adam::step_scalar(p, 0.37, m, v, 1, cfg);
  CHECK(p == doctest::Approx(1.0 - cfg.learning_rate).epsilon(1e-6));
  Rng rng(1);
  Mlp net = Mlp::glorot({3, 4, 2}, rng);
  const auto before = net.flatten();
  MlpGrads g = net.zero_grads();
  for (auto& w : g.dW) w.setConstant(-2.0);
  for (auto& b : g.db) b.setConstant(5.0);
  Adam opt(net, cfg);
  opt.step(net, g);
  const auto after = net.flatten();
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(std::abs(std::abs(after[i] - before[i]) - cfg.learning_rate) < 1e-6);
  }
}

TEST_CASE("polyak averaging interpolates") {
  Rng rng(2);
  const Mlp a = Mlp::glorot({3, 5, 1}, rng);
  Mlp b = Mlp::glorot({3, 5, 1}, rng);
  const auto fa = a.flatten();
  const auto fb = b.flatten();
  b.polyak_from(a, 0.25);
  const auto fc = b.flatten();
  for (std::size_t i = 0; i < fa.size(); ++i) CHECK(fc[i] == doctest::Approx(0.25 * fa[i] + 0.75 * fb[i]));
}

TEST_CASE("squashed gaussian log-probability matches the change of variables") {
  const ActionBox box = ActionBox::symmetric(1);
  Matrix head(2, 1);
  head << 0.3, std::log(0.7);
  Matrix noise(1, 1);
  noise << 0.4;
  const SquashedSample s = sample_squashed(head, noise, box);
  const double u = 0.3 + 0.7 * 0.4;
  const double normal = -0.5 * 0.4 * 0.4 - std::log(0.7) - 0.5 * std::log(2.0 * M_PI);
  CHECK(s.action(0, 0) == doctest::Approx(std::tanh(u)));
  CHECK(s.log_prob(0) == doctest::Approx(normal - std::log(1.0 - std::tanh(u) * std::tanh(u) + kTanhEps)));
  CHECK(squashed_mean(head, box)(0, 0) == doctest::Approx(std::tanh(0.3)));
}

TEST_CASE("log std is clamped") {
  const ActionBox box = ActionBox::symmetric(1);
  Matrix head(2, 1);
  head << 0.0, 10.0;
  const SquashedSample s = sample_squashed(head, Matrix::Zero(1, 1), box);
  CHECK(s.log_std(0, 0) == kLogStdMax);
  CHECK_FALSE(s.log_std_active(0, 0));
}

TEST_CASE("checkpoint round trip and tamper detection") {
  Rng rng(3);
  const Mlp net = Mlp::glorot({4, 6, 2}, rng);
  const auto path = std::filesystem::temp_directory_path() / "racelab_ckpt.bin";
  save_checkpoint(net, path);
  CHECK(load_checkpoint(path) == net);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const char junk = 0x5a;
    f.write(&junk, 1);
  }
  CHECK_THROWS(load_checkpoint(path));
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".json");
}

TEST_CASE("parameter checksum sees single-bit changes") {
  Rng rng(4);
  Mlp net = Mlp::glorot({2, 3, 1}, rng);
  const auto h = parameter_checksum(net);
  net.weight(0)(0, 0) = std::nextafter(net.weight(0)(0, 0), 1.0);
  CHECK(parameter_checksum(net) != h);
  CHECK(hex64(0x1234).size() == 16);
}
