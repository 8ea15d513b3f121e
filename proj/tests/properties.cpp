#include "properties.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>

#include "racelab/env.hpp"
#include "racelab/nn.hpp"
#include "racelab/replay.hpp"
#include "racelab/sac.hpp"
#include "racelab/track_library.hpp"

using namespace racelab;

namespace props {

namespace {

double max_abs_diff(const VehicleState& a, const VehicleState& b) {
  return std::max({std::abs(a.s - b.s), std::abs(a.n - b.n), std::abs(a.mu - b.mu), std::abs(a.v_x - b.v_x),
                   std::abs(a.v_y - b.v_y), std::abs(a.r - b.r)});
}

double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
  return std::sqrt(diff) / scale;
}

// Central differences of f over a flat parameter vector.
std::vector<double> numeric_grad(std::vector<double> x, const std::function<double(const std::vector<double>&)>& f,
                                 double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

std::vector<double> flat_grads(const Mlp& shape, const MlpGrads& g) {
  Mlp tmp = shape;
  for (std::size_t l = 0; l < tmp.layer_count(); ++l) {
    tmp.weight(l) = g.dW[l];
    tmp.bias(l) = g.db[l];
  }
  return tmp.flatten();
}

std::vector<double> to_vec(const Matrix& m) { return {m.data(), m.data() + m.size()}; }

Matrix uniform(int rows, int cols, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace

FrenetRoundTrip frenet_round_trip(const Track& track, int poses, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> us(0.0, track.total_length());
  std::uniform_real_distribution<double> uf(-0.9, 0.9);
  std::uniform_real_distribution<double> umu(-1.2, 1.2);
  FrenetRoundTrip r;
  r.poses = poses;
  for (int i = 0; i < poses; ++i) {
    const double s = us(rng);
    const double f = uf(rng);
    const double n = f > 0 ? f * track.w_left_at(s) : f * track.w_right_at(s);
    const FrenetPose p{s, n, umu(rng)};
    const GlobalPose g = frenet_to_global(track, p);
    const FrenetPose q = global_to_frenet(track, g.x, g.y, g.heading);
    r.max_s_err = std::max(r.max_s_err, std::abs(progress_delta(track, p.s, q.s)));
    r.max_n_err = std::max(r.max_n_err, std::abs(p.n - q.n));
    r.max_mu_err = std::max(r.max_mu_err, std::abs(wrap_angle(p.mu - q.mu)));
  }
  return r;
}

PacejkaCheck pacejka_check(const VehicleParams& params) {
  PacejkaCheck r;
  for (const PacejkaCoeffs* c : {&params.pacejka_front, &params.pacejka_rear}) {
    r.zero_slip_force = std::max(r.zero_slip_force, std::abs(lateral_tire_force(*c, params.mu_friction, 0.0)));
    for (int i = 1; i <= 400; ++i) {
      const double a = 1.5 * i / 400.0;
      const double odd = lateral_tire_force(*c, params.mu_friction, a) + lateral_tire_force(*c, params.mu_friction, -a);
      r.max_oddness_err = std::max(r.max_oddness_err, std::abs(odd));
    }
  }
  return r;
}

RichardsonCheck rk4_richardson(double h) {
  const Track track = make_circle_track(5.0, 2000, 0.7, 0.7);
  const VehicleParams params = default_vehicle_params();
  const VehicleState x0{0.3, 0.1, 0.05, 3.0, 0.1, 0.5, 0.1};
  const double T = 0.2;
  auto run = [&](double dt) {
    VehicleState x = x0;
    const int n = static_cast<int>(std::lround(T / dt));
    for (int i = 0; i < n; ++i) x = integrate_rk4(x, 1.0, 0.1, params, track, dt);
    return x;
  };
  const VehicleState ref = run(h / 64.0);
  RichardsonCheck r;
  r.err_h = max_abs_diff(run(h), ref);
  r.err_h2 = max_abs_diff(run(h / 2.0), ref);
  r.ratio = r.err_h / r.err_h2;
  return r;
}

NStepCheck nstep_bruteforce(int steps, int n, double gamma, std::uint64_t seed) {
  auto track = std::make_shared<Track>(make_c_like_track());
  VelocityProfileParams vp;
  vp.mu_friction = 0.6;
  track->set_velocity_profile(generate_velocity_profile(*track, vp));
  EnvConfig cfg;
  cfg.mode = RaceMode::e2e;
  RaceEnv env(track, default_vehicle_params(), cfg, std::nullopt);
  ReplayBuffer buffer(static_cast<std::size_t>(steps), env.observation_dim(), 2);
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  std::vector<double> rewards;
  std::vector<bool> terminals;
  std::vector<std::int64_t> episodes;
  std::vector<double> obs = env.reset(seed);
  NStepCheck r;
  while (static_cast<int>(rewards.size()) < steps) {
    if (env.in_recovery()) {
      if (auto o = env.recovery_tick()) obs = std::move(*o);
      continue;
    }
    const double a0 = u(rng);
    const double a1 = u(rng);
    const std::int64_t ep = env.episode();
    const StepResult s = env.step(a0, a1);
    buffer.push({obs, {a0, a1}, s.reward, s.observation, s.terminal, ep});
    rewards.push_back(s.reward);
    terminals.push_back(s.terminal);
    episodes.push_back(ep);
    if (s.terminal) ++r.terminals;
    obs = s.terminal && !env.in_recovery() ? env.observation() : s.observation;
  }
  r.steps = steps;
  for (int i = 0; i < steps; ++i) {
    double G = 0.0;
    int k = 0;
    bool done = false;
    for (int j = i; j < std::min(i + n, steps); ++j) {
      if (episodes[static_cast<std::size_t>(j)] != episodes[static_cast<std::size_t>(i)]) break;
      G += std::pow(gamma, k) * rewards[static_cast<std::size_t>(j)];
      ++k;
      if (terminals[static_cast<std::size_t>(j)]) {
        done = true;
        break;
      }
    }
    double bG = 0.0;
    int bk = 0;
    bool bdone = false;
    buffer.nstep(i, n, gamma, bG, bk, bdone);
    r.max_err = std::max(r.max_err, std::abs(G - bG));
    if (k != bk || done != bdone) ++r.flag_mismatches;
    ++r.windows;
  }
  return r;
}

HdraCheck hdra_event_log(int events, std::size_t capacity, int N, double p, std::uint64_t seed) {
  ReplayBuffer buffer(capacity, 1, 1);
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> log;
  std::vector<std::int64_t> eps;
  std::int64_t episode = 0;
  HdraCheck r;
  r.events = events;
  for (int e = 0; e < events; ++e) {
    const bool terminal = u(rng) < 0.08;
    const double reward = terminal ? -p : 0.05 + u(rng);
    const auto t = static_cast<std::int64_t>(log.size());
    log.push_back(reward);
    eps.push_back(episode);
    if (terminal) {
      buffer.push_terminal({{0.0}, {0.0}, reward, {0.0}, true, episode}, N, p);
      ++r.terminals;
      const std::int64_t oldest = std::max<std::int64_t>(0, t + 1 - static_cast<std::int64_t>(capacity));
      for (int m = 0; m < N; ++m) {
        const std::int64_t j = t - 1 - m;
        if (j < oldest) {
          if (j >= 0) ++r.overwritten_terminals;
          break;
        }
        if (eps[static_cast<std::size_t>(j)] != episode) break;
        log[static_cast<std::size_t>(j)] -= p - m * p / N;
      }
      ++episode;
    } else {
      buffer.push({{0.0}, {0.0}, reward, {0.0}, false, episode});
    }
  }
  for (std::int64_t i = buffer.oldest_index(); i < buffer.next_index(); ++i) {
    r.max_err = std::max(r.max_err, std::abs(buffer.reward(i) - log[static_cast<std::size_t>(i)]));
  }
  return r;
}

std::vector<GradCheck> gradient_checks(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCheck> out;

  {
    Mlp net = Mlp::glorot({5, 8, 8, 3}, rng);
    const Matrix x = uniform(5, 4, -1.0, 1.0, rng);
    const Matrix C = uniform(3, 4, -1.0, 1.0, rng);
    MlpCache cache;
    net.forward(x, cache);
    MlpGrads g = net.zero_grads();
    const Matrix dx = net.backward(cache, C, g);
    const auto num = numeric_grad(net.flatten(), [&](const std::vector<double>& w) {
      Mlp t = net;
      t.unflatten(w);
      return (t.forward(x).array() * C.array()).sum();
    });
    out.push_back({"mlp parameters", rel_err(flat_grads(net, g), num)});
    const auto num_x = numeric_grad(to_vec(x), [&](const std::vector<double>& v) {
      const Matrix xv = Eigen::Map<const Matrix>(v.data(), 5, 4);
      return (net.forward(xv).array() * C.array()).sum();
    });
    out.push_back({"mlp input", rel_err(to_vec(dx), num_x)});
  }

  {
    ActionBox box;
    box.low = Vector(2);
    box.high = Vector(2);
    box.low << -1.0, 0.5;
    box.high << 1.0, 2.0;
    const Matrix head = uniform(4, 6, -0.8, 0.8, rng);
    const Matrix noise = standard_normal(2, 6, rng);
    const Matrix ca = uniform(2, 6, -1.0, 1.0, rng);
    const RowVector cl = uniform(1, 6, -1.0, 1.0, rng);
    const SquashedSample s = sample_squashed(head, noise, box);
    const Matrix d = squashed_backward(s, box, ca, cl);
    const auto num = numeric_grad(to_vec(head), [&](const std::vector<double>& v) {
      const Matrix h = Eigen::Map<const Matrix>(v.data(), 4, 6);
      const SquashedSample t = sample_squashed(h, noise, box);
      return (t.action.array() * ca.array()).sum() + (t.log_prob.array() * cl.array()).sum();
    });
    out.push_back({"squashed gaussian", rel_err(to_vec(d), num)});
  }

  {
    SacConfig cfg;
    cfg.hidden = {8, 8};
    SacLearner learner(6, 2, cfg, seed);
    const int B = 5;
    NStepBatch b;
    b.obs = uniform(6, B, -1.0, 1.0, rng);
    b.action = uniform(2, B, -0.9, 0.9, rng);
    b.ret = uniform(1, B, -2.0, 2.0, rng);
    b.next_obs = uniform(6, B, -1.0, 1.0, rng);
    b.done = RowVector::Zero(B);
    b.done(1) = 1.0;
    b.gamma_k = RowVector::Constant(B, std::pow(cfg.gamma, 3));
    const Matrix next_noise = standard_normal(2, B, rng);
    const Matrix noise = standard_normal(2, B, rng);

    const CriticGradients cg = learner.critic_gradients(b, next_noise);
    const Mlp q1 = learner.q1();
    const auto num_q = numeric_grad(q1.flatten(), [&](const std::vector<double>& w) {
      learner.q1_mut().unflatten(w);
      const double l = learner.critic_gradients(b, next_noise).loss;
      learner.q1_mut() = q1;
      return l;
    });
    out.push_back({"critic loss", rel_err(flat_grads(q1, cg.q1), num_q)});

    const ActorGradients ag = learner.actor_gradients(b, noise);
    const Mlp actor = learner.actor();
    const auto num_a = numeric_grad(actor.flatten(), [&](const std::vector<double>& w) {
      learner.actor_mut().unflatten(w);
      const double l = learner.actor_gradients(b, noise).loss;
      learner.actor_mut() = actor;
      return l;
    });
    out.push_back({"actor loss", rel_err(flat_grads(actor, ag.actor), num_a)});

    const double mean_term = (ag.log_prob.array() + cfg.target_entropy).mean();
    const auto num_t = numeric_grad({learner.log_alpha()}, [&](const std::vector<double>& la) {
      return -std::exp(la[0]) * mean_term;
    });
    out.push_back({"temperature loss", rel_err({ag.d_log_alpha}, num_t)});
  }
  return out;
}

}  // namespace props
