#include "racelab/sac.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace racelab {

namespace {

std::vector<int> net_sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

}  // namespace

SacLearner::SacLearner(int obs_dim, int act_dim, SacConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)),
      obs_dim_(obs_dim),
      act_dim_(act_dim),
      box_(ActionBox::symmetric(act_dim)),
      log_alpha_(std::log(cfg_.init_alpha)),
      noise_rng_(seed ^ 0x9e3779b97f4a7c15ULL),
      sample_rng_(seed ^ 0xbf58476d1ce4e5b9ULL) {
  if (!(cfg_.gamma > 0.0 && cfg_.gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0, 1)");
  if (cfg_.n_steps < 1) throw std::invalid_argument("n_steps must be >= 1");
  if (cfg_.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(cfg_.init_alpha > 0.0)) throw std::invalid_argument("init_alpha must be > 0");
  Rng init(seed);
  actor_ = Mlp::glorot(net_sizes(obs_dim, cfg_.hidden, 2 * act_dim), init, 0.01);
  q1_ = Mlp::glorot(net_sizes(obs_dim + act_dim, cfg_.hidden, 1), init);
  q2_ = Mlp::glorot(net_sizes(obs_dim + act_dim, cfg_.hidden, 1), init);
  q1_t_ = q1_;
  q2_t_ = q2_;
  const AdamConfig adam{cfg_.learning_rate};
  actor_opt_ = Adam(actor_, adam);
  q1_opt_ = Adam(q1_, adam);
  q2_opt_ = Adam(q2_, adam);
}

double SacLearner::alpha() const { return std::exp(log_alpha_); }

Matrix SacLearner::critic_input(const Matrix& obs, const Matrix& action) const {
  Matrix x(obs_dim_ + act_dim_, obs.cols());
  x.topRows(obs_dim_) = obs;
  x.bottomRows(act_dim_) = action;
  return x;
}

CriticGradients SacLearner::critic_gradients(const NStepBatch& b, const Matrix& next_noise) const {
  const auto B = static_cast<double>(b.obs.cols());
  const SquashedSample next = sample_squashed(actor_.forward(b.next_obs), next_noise, box_);
  const Matrix xn = critic_input(b.next_obs, next.action);
  const RowVector qmin = q1_t_.forward(xn).cwiseMin(q2_t_.forward(xn));
  const RowVector soft = qmin - alpha() * next.log_prob;

  CriticGradients g;
  g.target = b.ret.array() + b.gamma_k.array() * (1.0 - b.done.array()) * soft.array();
  const Matrix x = critic_input(b.obs, b.action);
  MlpCache c1;
  MlpCache c2;
  const RowVector e1 = q1_.forward(x, c1) - g.target;
  const RowVector e2 = q2_.forward(x, c2) - g.target;
  g.loss = 0.5 * (e1.squaredNorm() + e2.squaredNorm()) / B;
  g.q1 = q1_.zero_grads();
  g.q2 = q2_.zero_grads();
  q1_.backward(c1, e1 / B, g.q1);
  q2_.backward(c2, e2 / B, g.q2);
  return g;
}

ActorGradients SacLearner::actor_gradients(const NStepBatch& b, const Matrix& noise) const {
  const auto B = static_cast<double>(b.obs.cols());
  MlpCache ca;
  const Matrix head = actor_.forward(b.obs, ca);
  const SquashedSample s = sample_squashed(head, noise, box_);
  const Matrix x = critic_input(b.obs, s.action);
  MlpCache c1;
  MlpCache c2;
  const RowVector v1 = q1_.forward(x, c1);
  const RowVector v2 = q2_.forward(x, c2);
  const double a = alpha();

  ActorGradients g;
  g.log_prob = s.log_prob;
  const RowVector qmin = v1.cwiseMin(v2);
  g.loss = (a * s.log_prob - qmin).sum() / B;

  // dL/dQ_i is -1/B on the samples where Q_i is the minimum.
  RowVector up1(b.obs.cols());
  RowVector up2(b.obs.cols());
  for (Eigen::Index j = 0; j < up1.size(); ++j) {
    const bool first = v1(j) <= v2(j);
    up1(j) = first ? -1.0 / B : 0.0;
    up2(j) = first ? 0.0 : -1.0 / B;
  }
  MlpGrads scratch1 = q1_.zero_grads();
  MlpGrads scratch2 = q2_.zero_grads();
  const Matrix dx1 = q1_.backward(c1, up1, scratch1);
  const Matrix dx2 = q2_.backward(c2, up2, scratch2);
  const Matrix d_action = dx1.bottomRows(act_dim_) + dx2.bottomRows(act_dim_);
  const RowVector d_logp = RowVector::Constant(b.obs.cols(), a / B);
  const Matrix d_head = squashed_backward(s, box_, d_action, d_logp);
  g.actor = actor_.zero_grads();
  actor_.backward(ca, d_head, g.actor);

  g.d_log_alpha = a * ((-s.log_prob.array() - cfg_.target_entropy).sum() / B);
  return g;
}

UpdateStats SacLearner::update(const NStepBatch& b) {
  const int B = static_cast<int>(b.obs.cols());
  UpdateStats st;
  const Matrix next_noise = standard_normal(act_dim_, B, noise_rng_);
  const CriticGradients cg = critic_gradients(b, next_noise);
  q1_opt_.step(q1_, cg.q1);
  q2_opt_.step(q2_, cg.q2);
  st.critic_loss = cg.loss;

  const Matrix noise = standard_normal(act_dim_, B, noise_rng_);
  const ActorGradients ag = actor_gradients(b, noise);
  actor_opt_.step(actor_, ag.actor);
  st.actor_loss = ag.loss;
  st.entropy = -ag.log_prob.mean();

  if (cfg_.auto_alpha) {
    Adam::step_scalar(log_alpha_, ag.d_log_alpha, alpha_m_, alpha_v_, updates_ + 1, AdamConfig{cfg_.learning_rate});
  }
  st.alpha = alpha();

  q1_t_.polyak_from(q1_, cfg_.tau_polyak);
  q2_t_.polyak_from(q2_, cfg_.tau_polyak);
  ++updates_;
  return st;
}

bool SacLearner::update_from(const ReplayBuffer& buffer, UpdateStats* stats) {
  if (buffer.size() < static_cast<std::size_t>(std::max(1, cfg_.learning_starts))) return false;
  const NStepBatch b = buffer.sample_nstep(cfg_.batch_size, cfg_.n_steps, cfg_.gamma, sample_rng_);
  const UpdateStats st = update(b);
  if (stats) *stats = st;
  return true;
}

std::uint64_t SacLearner::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const Mlp* net : {&actor_, &q1_, &q2_, &q1_t_, &q2_t_}) {
    h ^= parameter_checksum(*net);
    h *= 1099511628211ULL;
  }
  h ^= std::bit_cast<std::uint64_t>(log_alpha_);
  h *= 1099511628211ULL;
  return h;
}

void SacLearner::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  save_checkpoint(actor_, dir / "actor.bin");
  save_checkpoint(q1_, dir / "q1.bin");
  save_checkpoint(q2_, dir / "q2.bin");
  save_checkpoint(q1_t_, dir / "q1_target.bin");
  save_checkpoint(q2_t_, dir / "q2_target.bin");
  nlohmann::json meta;
  meta["obs_dim"] = obs_dim_;
  meta["act_dim"] = act_dim_;
  meta["log_alpha"] = log_alpha_;
  meta["updates"] = updates_;
  meta["hidden"] = cfg_.hidden;
  std::ofstream out(dir / "learner.json");
  out << meta.dump(2) << '\n';
}

void SacLearner::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "learner.json");
  if (!in) throw std::runtime_error("missing " + (dir / "learner.json").string());
  const auto meta = nlohmann::json::parse(in);
  if (meta.at("obs_dim").get<int>() != obs_dim_ || meta.at("act_dim").get<int>() != act_dim_) {
    throw DimensionError("checkpoint dimensions do not match the learner");
  }
  actor_ = load_checkpoint(dir / "actor.bin");
  q1_ = load_checkpoint(dir / "q1.bin");
  q2_ = load_checkpoint(dir / "q2.bin");
  q1_t_ = load_checkpoint(dir / "q1_target.bin");
  q2_t_ = load_checkpoint(dir / "q2_target.bin");
  log_alpha_ = meta.at("log_alpha").get<double>();
  updates_ = meta.at("updates").get<std::int64_t>();
  const AdamConfig adam{cfg_.learning_rate};
  actor_opt_ = Adam(actor_, adam);
  q1_opt_ = Adam(q1_, adam);
  q2_opt_ = Adam(q2_, adam);
}

Vector policy_action(const Mlp& actor, const std::vector<double>& obs, Rng& rng, bool deterministic) {
  const Matrix x = Eigen::Map<const Vector>(obs.data(), static_cast<Eigen::Index>(obs.size()));
  const Matrix head = actor.forward(x);
  const int A = actor.output_dim() / 2;
  const ActionBox box = ActionBox::symmetric(A);
  if (deterministic) return squashed_mean(head, box).col(0);
  return sample_squashed(head, standard_normal(A, 1, rng), box).action.col(0);
}

}  // namespace racelab
