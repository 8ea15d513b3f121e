#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "racelab/nn.hpp"
#include "racelab/replay.hpp"

namespace racelab {

struct SacConfig {
  double gamma{0.96};
  int n_steps{3};
  int batch_size{256};
  double learning_rate{0.003};
  double tau_polyak{0.005};
  double target_entropy{-2.0};
  int hdra_N{10};
  double penalty{10.0};
  std::vector<int> hidden{256, 256};
  double init_alpha{1.0};
  bool auto_alpha{true};
  // Updates are skipped until the buffer holds this many transitions.
  int learning_starts{1};
  std::size_t buffer_capacity{1000000};
};

struct UpdateStats {
  double critic_loss{};
  double actor_loss{};
  double alpha{};
  double entropy{};  // mean -log pi over the batch
};

struct CriticGradients {
  double loss{};
  MlpGrads q1;
  MlpGrads q2;
  RowVector target;
};

struct ActorGradients {
  double loss{};
  MlpGrads actor;
  double d_log_alpha{};
  RowVector log_prob;
};

class SacLearner {
 public:
  SacLearner(int obs_dim, int act_dim, SacConfig cfg, std::uint64_t seed);

  const SacConfig& config() const { return cfg_; }
  int obs_dim() const { return obs_dim_; }
  int act_dim() const { return act_dim_; }

  const Mlp& actor() const { return actor_; }
  const Mlp& q1() const { return q1_; }
  const Mlp& q2() const { return q2_; }
  const Mlp& q1_target() const { return q1_t_; }
  const Mlp& q2_target() const { return q2_t_; }
  Mlp& actor_mut() { return actor_; }
  Mlp& q1_mut() { return q1_; }
  Mlp& q2_mut() { return q2_; }

  double alpha() const;
  double log_alpha() const { return log_alpha_; }
  void set_log_alpha(double v) { log_alpha_ = v; }
  std::int64_t updates() const { return updates_; }

  // Losses and exact gradients for fixed policy noise (no parameter change).
  CriticGradients critic_gradients(const NStepBatch& batch, const Matrix& next_noise) const;
  ActorGradients actor_gradients(const NStepBatch& batch, const Matrix& noise) const;

  UpdateStats update(const NStepBatch& batch);
  // Samples a batch from the buffer with the learner's own generator.
  // Returns false when the buffer is still below learning_starts.
  bool update_from(const ReplayBuffer& buffer, UpdateStats* stats = nullptr);

  // Checksum over all trainable parameters and the temperature.
  std::uint64_t checksum() const;

  void save(const std::filesystem::path& dir) const;
  void load(const std::filesystem::path& dir);

 private:
  Matrix critic_input(const Matrix& obs, const Matrix& action) const;

  SacConfig cfg_;
  int obs_dim_;
  int act_dim_;
  ActionBox box_;
  Mlp actor_;
  Mlp q1_;
  Mlp q2_;
  Mlp q1_t_;
  Mlp q2_t_;
  Adam actor_opt_;
  Adam q1_opt_;
  Adam q2_opt_;
  double log_alpha_;
  double alpha_m_{0.0};
  double alpha_v_{0.0};
  std::int64_t updates_{0};
  Rng noise_rng_;
  Rng sample_rng_;
};

// Action from a policy snapshot: squashed sample in [-1, 1]^A, or the squashed
// mean when `deterministic`.
Vector policy_action(const Mlp& actor, const std::vector<double>& obs, Rng& rng, bool deterministic);

}  // namespace racelab
