#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <span>
#include <vector>

#include "racelab/nn.hpp"

namespace racelab {

struct Transition {
  std::vector<double> obs;
  std::vector<double> action;  // normalised, in [-1, 1]
  double reward{};
  std::vector<double> next_obs;
  bool terminal{false};
  std::int64_t episode_id{};
};

struct NStepBatch {
  Matrix obs;        // obs_dim x B
  Matrix action;     // act_dim x B
  RowVector ret;     // G
  Matrix next_obs;   // bootstrap observation
  RowVector done;    // 1 if the window ends on a terminal
  RowVector gamma_k;
  std::vector<std::int64_t> index;  // sampled logical index
  std::vector<int> k;               // window length
};

class InsufficientData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ring buffer of transitions. Logical indices count pushes from 0 and never
// wrap; slot = index % capacity. Storage grows lazily up to capacity.
// Public methods lock an internal mutex so one writer and one reader can share
// the buffer; HDRA edits happen under the same lock as the terminal push.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, int obs_dim, int act_dim);
  // Moves take the contents but not the lock; do not move a shared buffer.
  ReplayBuffer(ReplayBuffer&& other) noexcept;

  std::size_t capacity() const { return capacity_; }
  int obs_dim() const { return obs_dim_; }
  int act_dim() const { return act_dim_; }

  // Number of stored transitions (<= capacity).
  std::size_t size() const;
  // Total pushes so far; the next push gets this logical index.
  std::int64_t next_index() const;
  std::int64_t oldest_index() const;

  std::int64_t push(const Transition& t);

  // Pushes a terminal transition and, when `hdra_n > 0`, applies the penalty
  // redistribution to the slots before it, atomically.
  std::int64_t push_terminal(const Transition& t, int hdra_n, double penalty);

  // The pseudocode form: only when reward[index] == 0, subtract
  // (p - n p / N) from reward[index - n] for n = 0..N-1, stopping at the
  // episode start or at overwritten cells.
  void apply_hdra(std::int64_t index, int N, double p);

  // Pipeline form: the terminal slot already holds -p; the N slots before it
  // receive (p - n p / N), n = 0..N-1, starting with the slot right before.
  void apply_hdra_on_terminal(std::int64_t index, int N, double p);

  double reward(std::int64_t index) const;
  bool terminal(std::int64_t index) const;
  std::int64_t episode_id(std::int64_t index) const;
  Transition get(std::int64_t index) const;
  bool contains(std::int64_t index) const;

  // Logical indices of stored terminal transitions, oldest first.
  std::vector<std::int64_t> episode_ends() const;

  // n-step window starting at `index`: k = min(n, transitions up to and
  // including the episode's terminal or the newest stored one).
  void nstep(std::int64_t index, int n, double gamma, double& G, int& k, bool& done) const;

  // Uniform sample of start indices over the stored region.
  NStepBatch sample_nstep(int batch_size, int n, double gamma, Rng& rng) const;

  // Sequential little-endian records plus a JSON header (<path>.json).
  void dump(const std::filesystem::path& path) const;
  static ReplayBuffer restore(const std::filesystem::path& path);

 private:
  std::size_t slot(std::int64_t index) const { return static_cast<std::size_t>(index % static_cast<std::int64_t>(capacity_)); }
  bool contains_unlocked(std::int64_t index) const;
  std::int64_t push_unlocked(const Transition& t);
  void hdra_edit_unlocked(std::int64_t from, int N, double p, std::int64_t episode);

  std::size_t capacity_;
  int obs_dim_;
  int act_dim_;
  std::int64_t next_{0};
  std::vector<double> obs_;
  std::vector<double> next_obs_;
  std::vector<double> action_;
  std::vector<double> reward_;
  std::vector<char> terminal_;
  std::vector<std::int64_t> episode_;
  mutable std::mutex mu_;
};

}  // namespace racelab
