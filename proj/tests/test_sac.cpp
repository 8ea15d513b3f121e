#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "racelab/sac.hpp"

using namespace racelab;

namespace {

ReplayBuffer filled(int n, int obs_dim) {
  ReplayBuffer b(1000, obs_dim, 2);
  Rng rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < n; ++i) {
    std::vector<double> o(static_cast<std::size_t>(obs_dim));
    for (auto& x : o) x = u(rng);
    std::vector<double> o2 = o;
    for (auto& x : o2) x += 0.01;
    b.push({o, {u(rng), u(rng)}, u(rng), o2, false, 0});
  }
  return b;
}

SacConfig small() {
  SacConfig c;
  c.hidden = {16, 16};
  c.batch_size = 16;
  return c;
}

}  // namespace

TEST_CASE("defaults are the on-board hyperparameters") {
  const SacConfig c;
  CHECK(c.gamma == 0.96);
  CHECK(c.n_steps == 3);
  CHECK(c.batch_size == 256);
  CHECK(c.learning_rate == 0.003);
  CHECK(c.hidden == std::vector<int>{256, 256});
  CHECK(c.buffer_capacity == 1000000u);
  CHECK(c.hdra_N == 10);
}

TEST_CASE("the initial policy is near zero mean") {
  SacLearner l(5, 2, small(), 1);
  Rng rng(0);
  const Vector a = policy_action(l.actor(), std::vector<double>(5, 0.3), rng, true);
  CHECK(std::abs(a(0)) < 0.1);
  CHECK(std::abs(a(1)) < 0.1);
}

TEST_CASE("deterministic action is the squashed mean") {
  SacLearner l(5, 2, small(), 2);
  Rng rng(0);
  const std::vector<double> o{0.1, -0.2, 0.3, 0.0, 1.0};
  const Matrix head = l.actor().forward(Eigen::Map<const Vector>(o.data(), 5));
  const Vector a = policy_action(l.actor(), o, rng, true);
  CHECK(a(0) == doctest::Approx(std::tanh(head(0, 0))));
  CHECK(a(1) == doctest::Approx(std::tanh(head(1, 0))));
}

TEST_CASE("updates move every network and the temperature") {
  SacLearner l(4, 2, small(), 3);
  const ReplayBuffer b = filled(100, 4);
  const Mlp a0 = l.actor();
  const Mlp q0 = l.q1();
  const Mlp t0 = l.q1_target();
  const double la = l.log_alpha();
  UpdateStats st;
  REQUIRE(l.update_from(b, &st));
  CHECK_FALSE(l.actor() == a0);
  CHECK_FALSE(l.q1() == q0);
  CHECK_FALSE(l.q1_target() == t0);
  CHECK(l.log_alpha() != la);
  CHECK(l.updates() == 1);
  CHECK(std::isfinite(st.critic_loss));
}

TEST_CASE("target networks trail by tau") {
  SacLearner l(4, 2, small(), 4);
  const ReplayBuffer b = filled(100, 4);
  const auto t0 = l.q1_target().flatten();
  l.update_from(b);
  const auto q = l.q1().flatten();
  const auto t1 = l.q1_target().flatten();
  for (std::size_t i = 0; i < q.size(); i += 17) {
    CHECK(t1[i] == doctest::Approx((1 - 0.005) * t0[i] + 0.005 * q[i]));
  }
}

TEST_CASE("critics learn a constant return") {
  SacConfig c = small();
  c.n_steps = 1;
  c.auto_alpha = false;
  c.init_alpha = 1e-6;
  ReplayBuffer b(1000, 3, 2);
  for (int i = 0; i < 200; ++i) b.push_terminal({{0.1, 0.2, 0.3}, {0.0, 0.0}, 2.0, {0.1, 0.2, 0.3}, true, i}, 0, 10.0);
  SacLearner l(3, 2, c, 5);
  for (int i = 0; i < 600; ++i) l.update_from(b);
  Matrix x(5, 1);
  x << 0.1, 0.2, 0.3, 0.0, 0.0;
  CHECK(l.q1().forward(x)(0, 0) == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("same seed gives bit-identical learners") {
  const ReplayBuffer b = filled(100, 4);
  SacLearner a(4, 2, small(), 6);
  SacLearner c(4, 2, small(), 6);
  for (int i = 0; i < 20; ++i) {
    a.update_from(b);
    c.update_from(b);
  }
  CHECK(a.checksum() == c.checksum());
}

TEST_CASE("learner save and load round trip") {
  SacLearner a(4, 2, small(), 7);
  a.update_from(filled(50, 4));
  const auto dir = std::filesystem::temp_directory_path() / "racelab_learner";
  a.save(dir);
  SacLearner b(4, 2, small(), 8);
  b.load(dir);
  CHECK(b.checksum() == a.checksum());
  SacLearner wrong(5, 2, small(), 8);
  CHECK_THROWS_AS(wrong.load(dir), DimensionError);
  std::filesystem::remove_all(dir);
}
