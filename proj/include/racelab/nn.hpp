#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace racelab {

// Batches are stored column-wise: one column per sample.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Rng = std::mt19937_64;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct MlpGrads {
  std::vector<Matrix> dW;
  std::vector<Vector> db;

  void set_zero();
};

struct MlpCache {
  // acts[0] is the input, acts[i] the post-ReLU output of hidden layer i.
  std::vector<Matrix> acts;
  // Pre-activations of the hidden layers, used for the ReLU mask.
  std::vector<Matrix> pre;
};

// Dense network with ReLU on hidden layers and a linear output layer.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<int> layer_sizes);

  // Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases; the last layer is
  // multiplied by `last_layer_scale`.
  static Mlp glorot(std::vector<int> layer_sizes, Rng& rng, double last_layer_scale = 1.0);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  std::size_t layer_count() const { return W_.size(); }

  Matrix& weight(std::size_t i) { return W_[i]; }
  const Matrix& weight(std::size_t i) const { return W_[i]; }
  Vector& bias(std::size_t i) { return b_[i]; }
  const Vector& bias(std::size_t i) const { return b_[i]; }

  Matrix forward(const Matrix& x) const;
  Matrix forward(const Matrix& x, MlpCache& cache) const;

  // Accumulates parameter gradients into `grads` and returns dL/dx.
  Matrix backward(const MlpCache& cache, const Matrix& upstream, MlpGrads& grads) const;

  MlpGrads zero_grads() const;

  std::size_t parameter_count() const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);

  // this <- tau * src + (1 - tau) * this
  void polyak_from(const Mlp& src, double tau);

  bool operator==(const Mlp& other) const;

 private:
  std::vector<int> sizes_;
  std::vector<Matrix> W_;
  std::vector<Vector> b_;
};

struct AdamConfig {
  double learning_rate{0.003};
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};
};

// Bias-corrected Adam over a set of parameter blocks.
class Adam {
 public:
  Adam() = default;
  Adam(const Mlp& net, AdamConfig cfg);

  void step(Mlp& net, const MlpGrads& grads);

  // Scalar variant, used for the entropy temperature.
  static void step_scalar(double& param, double grad, double& m, double& v, std::int64_t t,
                          const AdamConfig& cfg);

  std::int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  const MlpGrads& first_moment() const { return m_; }
  const MlpGrads& second_moment() const { return v_; }

 private:
  AdamConfig cfg_;
  MlpGrads m_;
  MlpGrads v_;
  std::int64_t t_{0};
};

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kTanhEps = 1e-6;

// Affine image of tanh: a = center + half_range * tanh(u), per action.
struct ActionBox {
  Vector low;
  Vector high;

  static ActionBox symmetric(int dim, double bound = 1.0);
  int dim() const { return static_cast<int>(low.size()); }
  Vector center() const { return 0.5 * (low + high); }
  Vector half_range() const { return 0.5 * (high - low); }
};

// Policy net output rows are [mean(0..A-1); log_std(0..A-1)].
struct SquashedSample {
  Matrix action;      // in the box
  RowVector log_prob;
  Matrix u;           // pre-squash
  Matrix tanh_u;
  Matrix mean;
  Matrix log_std;     // after clamping
  Matrix std;
  Matrix noise;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> log_std_active;  // inside the clamp
};

SquashedSample sample_squashed(const Matrix& head_out, const Matrix& noise, const ActionBox& box);

// Deterministic action: squashed mean.
Matrix squashed_mean(const Matrix& head_out, const ActionBox& box);

// Gradient of a loss with respect to the head output, given dL/daction and
// dL/dlog_prob (per sample).
Matrix squashed_backward(const SquashedSample& sample, const ActionBox& box, const Matrix& d_action,
                         const RowVector& d_log_prob);

Matrix standard_normal(int rows, int cols, Rng& rng);

// FNV-1a over the raw parameter bytes.
std::uint64_t parameter_checksum(const Mlp& net);
std::string hex64(std::uint64_t v);

// Flat little-endian float64 parameter file with a JSON sidecar (<path>.json)
// holding the layer sizes and a content hash.
void save_checkpoint(const Mlp& net, const std::filesystem::path& path);
Mlp load_checkpoint(const std::filesystem::path& path);

}  // namespace racelab
