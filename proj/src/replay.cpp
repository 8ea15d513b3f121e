#include "racelab/replay.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace racelab {

ReplayBuffer::ReplayBuffer(std::size_t capacity, int obs_dim, int act_dim)
    : capacity_(capacity), obs_dim_(obs_dim), act_dim_(act_dim) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
  if (obs_dim <= 0 || act_dim <= 0) throw std::invalid_argument("replay dimensions must be positive");
}

ReplayBuffer::ReplayBuffer(ReplayBuffer&& o) noexcept
    : capacity_(o.capacity_),
      obs_dim_(o.obs_dim_),
      act_dim_(o.act_dim_),
      next_(o.next_),
      obs_(std::move(o.obs_)),
      next_obs_(std::move(o.next_obs_)),
      action_(std::move(o.action_)),
      reward_(std::move(o.reward_)),
      terminal_(std::move(o.terminal_)),
      episode_(std::move(o.episode_)) {}

std::size_t ReplayBuffer::size() const {
  std::lock_guard lock(mu_);
  return std::min<std::size_t>(static_cast<std::size_t>(next_), capacity_);
}

std::int64_t ReplayBuffer::next_index() const {
  std::lock_guard lock(mu_);
  return next_;
}

std::int64_t ReplayBuffer::oldest_index() const {
  std::lock_guard lock(mu_);
  return std::max<std::int64_t>(0, next_ - static_cast<std::int64_t>(capacity_));
}

bool ReplayBuffer::contains_unlocked(std::int64_t index) const {
  return index >= 0 && index < next_ && index >= next_ - static_cast<std::int64_t>(capacity_);
}

bool ReplayBuffer::contains(std::int64_t index) const {
  std::lock_guard lock(mu_);
  return contains_unlocked(index);
}

std::int64_t ReplayBuffer::push_unlocked(const Transition& t) {
  if (static_cast<int>(t.obs.size()) != obs_dim_ || static_cast<int>(t.next_obs.size()) != obs_dim_ ||
      static_cast<int>(t.action.size()) != act_dim_) {
    throw DimensionError("transition shape does not match the replay buffer");
  }
  const std::int64_t index = next_;
  const std::size_t s = slot(index);
  if (s == reward_.size()) {
    obs_.resize(obs_.size() + static_cast<std::size_t>(obs_dim_));
    next_obs_.resize(next_obs_.size() + static_cast<std::size_t>(obs_dim_));
    action_.resize(action_.size() + static_cast<std::size_t>(act_dim_));
    reward_.push_back(0.0);
    terminal_.push_back(0);
    episode_.push_back(0);
  }
  std::copy(t.obs.begin(), t.obs.end(), obs_.begin() + static_cast<std::ptrdiff_t>(s * obs_dim_));
  std::copy(t.next_obs.begin(), t.next_obs.end(), next_obs_.begin() + static_cast<std::ptrdiff_t>(s * obs_dim_));
  std::copy(t.action.begin(), t.action.end(), action_.begin() + static_cast<std::ptrdiff_t>(s * act_dim_));
  reward_[s] = t.reward;
  terminal_[s] = t.terminal ? 1 : 0;
  episode_[s] = t.episode_id;
  ++next_;
  return index;
}

std::int64_t ReplayBuffer::push(const Transition& t) {
  std::lock_guard lock(mu_);
  return push_unlocked(t);
}

std::int64_t ReplayBuffer::push_terminal(const Transition& t, int hdra_n, double penalty) {
  std::lock_guard lock(mu_);
  const std::int64_t index = push_unlocked(t);
  if (hdra_n > 0 && reward_[slot(index)] == -penalty) {
    hdra_edit_unlocked(index - 1, hdra_n, penalty, t.episode_id);
  }
  return index;
}

void ReplayBuffer::hdra_edit_unlocked(std::int64_t from, int N, double p, std::int64_t episode) {
  for (int n = 0; n < N; ++n) {
    const std::int64_t i = from - n;
    if (!contains_unlocked(i) || episode_[slot(i)] != episode) break;
    reward_[slot(i)] -= p - n * p / N;
  }
}

void ReplayBuffer::apply_hdra(std::int64_t index, int N, double p) {
  std::lock_guard lock(mu_);
  if (!contains_unlocked(index) || reward_[slot(index)] != 0.0) return;
  hdra_edit_unlocked(index, N, p, episode_[slot(index)]);
}

void ReplayBuffer::apply_hdra_on_terminal(std::int64_t index, int N, double p) {
  std::lock_guard lock(mu_);
  if (!contains_unlocked(index) || reward_[slot(index)] != -p) return;
  hdra_edit_unlocked(index - 1, N, p, episode_[slot(index)]);
}

double ReplayBuffer::reward(std::int64_t index) const {
  std::lock_guard lock(mu_);
  if (!contains_unlocked(index)) throw std::out_of_range("replay index not stored");
  return reward_[slot(index)];
}

bool ReplayBuffer::terminal(std::int64_t index) const {
  std::lock_guard lock(mu_);
  if (!contains_unlocked(index)) throw std::out_of_range("replay index not stored");
  return terminal_[slot(index)] != 0;
}

std::int64_t ReplayBuffer::episode_id(std::int64_t index) const {
  std::lock_guard lock(mu_);
  if (!contains_unlocked(index)) throw std::out_of_range("replay index not stored");
  return episode_[slot(index)];
}

Transition ReplayBuffer::get(std::int64_t index) const {
  std::lock_guard lock(mu_);
  if (!contains_unlocked(index)) throw std::out_of_range("replay index not stored");
  const std::size_t s = slot(index);
  Transition t;
  t.obs.assign(obs_.begin() + static_cast<std::ptrdiff_t>(s * obs_dim_),
               obs_.begin() + static_cast<std::ptrdiff_t>((s + 1) * obs_dim_));
  t.next_obs.assign(next_obs_.begin() + static_cast<std::ptrdiff_t>(s * obs_dim_),
                    next_obs_.begin() + static_cast<std::ptrdiff_t>((s + 1) * obs_dim_));
  t.action.assign(action_.begin() + static_cast<std::ptrdiff_t>(s * act_dim_),
                  action_.begin() + static_cast<std::ptrdiff_t>((s + 1) * act_dim_));
  t.reward = reward_[s];
  t.terminal = terminal_[s] != 0;
  t.episode_id = episode_[s];
  return t;
}

std::vector<std::int64_t> ReplayBuffer::episode_ends() const {
  std::lock_guard lock(mu_);
  std::vector<std::int64_t> out;
  for (std::int64_t i = std::max<std::int64_t>(0, next_ - static_cast<std::int64_t>(capacity_)); i < next_; ++i) {
    if (terminal_[slot(i)]) out.push_back(i);
  }
  return out;
}

void ReplayBuffer::nstep(std::int64_t index, int n, double gamma, double& G, int& k, bool& done) const {
  std::lock_guard lock(mu_);
  if (!contains_unlocked(index)) throw std::out_of_range("replay index not stored");
  const std::int64_t ep = episode_[slot(index)];
  G = 0.0;
  k = 0;
  done = false;
  double g = 1.0;
  for (int j = 0; j < n; ++j) {
    const std::int64_t i = index + j;
    if (i >= next_ || episode_[slot(i)] != ep) break;
    G += g * reward_[slot(i)];
    g *= gamma;
    ++k;
    if (terminal_[slot(i)]) {
      done = true;
      break;
    }
  }
}

NStepBatch ReplayBuffer::sample_nstep(int batch_size, int n, double gamma, Rng& rng) const {
  if (n < 1) throw std::invalid_argument("n_steps must be >= 1");
  std::lock_guard lock(mu_);
  const std::int64_t stored = std::min<std::int64_t>(next_, static_cast<std::int64_t>(capacity_));
  if (stored == 0) throw InsufficientData("replay buffer is empty");
  const std::int64_t oldest = next_ - stored;
  std::uniform_int_distribution<std::int64_t> pick(0, stored - 1);

  NStepBatch b;
  b.obs.resize(obs_dim_, batch_size);
  b.action.resize(act_dim_, batch_size);
  b.ret.resize(batch_size);
  b.next_obs.resize(obs_dim_, batch_size);
  b.done.resize(batch_size);
  b.gamma_k.resize(batch_size);
  b.index.resize(static_cast<std::size_t>(batch_size));
  b.k.resize(static_cast<std::size_t>(batch_size));
  for (int c = 0; c < batch_size; ++c) {
    const std::int64_t index = oldest + pick(rng);
    const std::size_t s0 = slot(index);
    const std::int64_t ep = episode_[s0];
    double G = 0.0;
    double g = 1.0;
    int k = 0;
    bool done = false;
    std::size_t last = s0;
    for (int j = 0; j < n; ++j) {
      const std::int64_t i = index + j;
      if (i >= next_ || episode_[slot(i)] != ep) break;
      last = slot(i);
      G += g * reward_[last];
      g *= gamma;
      ++k;
      if (terminal_[last]) {
        done = true;
        break;
      }
    }
    b.obs.col(c) = Eigen::Map<const Vector>(obs_.data() + s0 * obs_dim_, obs_dim_);
    b.action.col(c) = Eigen::Map<const Vector>(action_.data() + s0 * act_dim_, act_dim_);
    b.next_obs.col(c) = Eigen::Map<const Vector>(next_obs_.data() + last * obs_dim_, obs_dim_);
    b.ret(c) = G;
    b.done(c) = done ? 1.0 : 0.0;
    b.gamma_k(c) = g;
    b.index[static_cast<std::size_t>(c)] = index;
    b.k[static_cast<std::size_t>(c)] = k;
  }
  return b;
}

namespace {

void write_le(std::ofstream& out, const double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t w = std::bit_cast<std::uint64_t>(data[i]);
    if constexpr (std::endian::native == std::endian::big) w = __builtin_bswap64(w);
    out.write(reinterpret_cast<const char*>(&w), sizeof(w));
  }
}

void read_le(std::ifstream& in, double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t w = 0;
    in.read(reinterpret_cast<char*>(&w), sizeof(w));
    if constexpr (std::endian::native == std::endian::big) w = __builtin_bswap64(w);
    data[i] = std::bit_cast<double>(w);
  }
}

}  // namespace

void ReplayBuffer::dump(const std::filesystem::path& path) const {
  std::lock_guard lock(mu_);
  const std::int64_t stored = std::min<std::int64_t>(next_, static_cast<std::int64_t>(capacity_));
  const std::int64_t oldest = next_ - stored;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write replay dump " + path.string());
  std::vector<std::int64_t> ends;
  for (std::int64_t i = oldest; i < next_; ++i) {
    const std::size_t s = slot(i);
    write_le(out, obs_.data() + s * obs_dim_, static_cast<std::size_t>(obs_dim_));
    write_le(out, action_.data() + s * act_dim_, static_cast<std::size_t>(act_dim_));
    write_le(out, &reward_[s], 1);
    write_le(out, next_obs_.data() + s * obs_dim_, static_cast<std::size_t>(obs_dim_));
    const double term = terminal_[s] ? 1.0 : 0.0;
    const double epi = static_cast<double>(episode_[s]);
    write_le(out, &term, 1);
    write_le(out, &epi, 1);
    if (terminal_[s]) ends.push_back(i);
  }
  nlohmann::json h;
  h["capacity"] = capacity_;
  h["obs_dim"] = obs_dim_;
  h["act_dim"] = act_dim_;
  h["write_index"] = next_;
  h["oldest_index"] = oldest;
  h["episode_boundaries"] = ends;
  std::ofstream side(path.string() + ".json");
  side << h.dump(2) << '\n';
}

ReplayBuffer ReplayBuffer::restore(const std::filesystem::path& path) {
  std::ifstream side(path.string() + ".json");
  if (!side) throw std::runtime_error("missing replay header " + path.string() + ".json");
  const auto h = nlohmann::json::parse(side);
  ReplayBuffer buf(h.at("capacity").get<std::size_t>(), h.at("obs_dim").get<int>(), h.at("act_dim").get<int>());
  const auto oldest = h.at("oldest_index").get<std::int64_t>();
  const auto write_index = h.at("write_index").get<std::int64_t>();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open replay dump " + path.string());
  buf.next_ = oldest;
  // Replaying pushes from `oldest` reproduces the slot layout of the source.
  if (oldest > 0) {
    const std::size_t cap = buf.capacity_;
    buf.obs_.resize(cap * buf.obs_dim_);
    buf.next_obs_.resize(cap * buf.obs_dim_);
    buf.action_.resize(cap * buf.act_dim_);
    buf.reward_.resize(cap);
    buf.terminal_.resize(cap);
    buf.episode_.resize(cap);
  }
  Transition t;
  t.obs.resize(static_cast<std::size_t>(buf.obs_dim_));
  t.next_obs.resize(static_cast<std::size_t>(buf.obs_dim_));
  t.action.resize(static_cast<std::size_t>(buf.act_dim_));
  for (std::int64_t i = oldest; i < write_index; ++i) {
    double term = 0.0;
    double epi = 0.0;
    read_le(in, t.obs.data(), t.obs.size());
    read_le(in, t.action.data(), t.action.size());
    read_le(in, &t.reward, 1);
    read_le(in, t.next_obs.data(), t.next_obs.size());
    read_le(in, &term, 1);
    read_le(in, &epi, 1);
    if (!in) throw std::runtime_error("replay dump " + path.string() + " is truncated");
    t.terminal = term != 0.0;
    t.episode_id = static_cast<std::int64_t>(epi);
    buf.push_unlocked(t);
  }
  return buf;
}

}  // namespace racelab
