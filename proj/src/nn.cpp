#include "racelab/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

namespace racelab {

void MlpGrads::set_zero() {
  for (auto& w : dW) w.setZero();
  for (auto& b : db) b.setZero();
}

Mlp::Mlp(std::vector<int> layer_sizes) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw DimensionError("an MLP needs at least an input and an output layer");
  for (int s : sizes_) {
    if (s <= 0) throw DimensionError("layer sizes must be positive");
  }
  for (std::size_t i = 0; i + 1 < sizes_.size(); ++i) {
    W_.push_back(Matrix::Zero(sizes_[i + 1], sizes_[i]));
    b_.push_back(Vector::Zero(sizes_[i + 1]));
  }
}

Mlp Mlp::glorot(std::vector<int> layer_sizes, Rng& rng, double last_layer_scale) {
  Mlp net(std::move(layer_sizes));
  for (std::size_t l = 0; l < net.W_.size(); ++l) {
    const double limit = std::sqrt(6.0 / (net.W_[l].rows() + net.W_[l].cols()));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index j = 0; j < net.W_[l].cols(); ++j) {
      for (Eigen::Index i = 0; i < net.W_[l].rows(); ++i) net.W_[l](i, j) = dist(rng);
    }
  }
  net.W_.back() *= last_layer_scale;
  return net;
}

Matrix Mlp::forward(const Matrix& x) const {
  if (x.rows() != input_dim()) {
    throw DimensionError("MLP input has " + std::to_string(x.rows()) + " rows, expected " +
                         std::to_string(input_dim()));
  }
  Matrix h = x;
  for (std::size_t l = 0; l < W_.size(); ++l) {
    Matrix z = W_[l] * h;
    z.colwise() += b_[l];
    if (l + 1 < W_.size()) {
      h = z.cwiseMax(0.0);
    } else {
      h = std::move(z);
    }
  }
  return h;
}

Matrix Mlp::forward(const Matrix& x, MlpCache& cache) const {
  if (x.rows() != input_dim()) {
    throw DimensionError("MLP input has " + std::to_string(x.rows()) + " rows, expected " +
                         std::to_string(input_dim()));
  }
  cache.acts.assign(1, x);
  cache.pre.clear();
  for (std::size_t l = 0; l < W_.size(); ++l) {
    Matrix z = W_[l] * cache.acts.back();
    z.colwise() += b_[l];
    if (l + 1 < W_.size()) {
      cache.acts.push_back(z.cwiseMax(0.0));
      cache.pre.push_back(std::move(z));
    } else {
      return z;
    }
  }
  return {};
}

Matrix Mlp::backward(const MlpCache& cache, const Matrix& upstream, MlpGrads& grads) const {
  if (upstream.rows() != output_dim() || cache.acts.size() != W_.size()) {
    throw DimensionError("MLP backward: gradient or cache shape mismatch");
  }
  Matrix g = upstream;
  for (std::size_t l = W_.size(); l-- > 0;) {
    grads.dW[l].noalias() += g * cache.acts[l].transpose();
    grads.db[l] += g.rowwise().sum();
    Matrix gin = W_[l].transpose() * g;
    if (l > 0) gin = (cache.pre[l - 1].array() > 0.0).select(gin, 0.0);
    g = std::move(gin);
  }
  return g;
}

MlpGrads Mlp::zero_grads() const {
  MlpGrads g;
  for (std::size_t l = 0; l < W_.size(); ++l) {
    g.dW.push_back(Matrix::Zero(W_[l].rows(), W_[l].cols()));
    g.db.push_back(Vector::Zero(b_[l].size()));
  }
  return g;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < W_.size(); ++l) n += W_[l].size() + b_[l].size();
  return n;
}

std::vector<double> Mlp::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (std::size_t l = 0; l < W_.size(); ++l) {
    out.insert(out.end(), W_[l].data(), W_[l].data() + W_[l].size());
    out.insert(out.end(), b_[l].data(), b_[l].data() + b_[l].size());
  }
  return out;
}

void Mlp::unflatten(std::span<const double> flat) {
  if (flat.size() != parameter_count()) {
    throw DimensionError("parameter vector has " + std::to_string(flat.size()) + " entries, expected " +
                         std::to_string(parameter_count()));
  }
  std::size_t k = 0;
  for (std::size_t l = 0; l < W_.size(); ++l) {
    std::memcpy(W_[l].data(), flat.data() + k, sizeof(double) * W_[l].size());
    k += W_[l].size();
    std::memcpy(b_[l].data(), flat.data() + k, sizeof(double) * b_[l].size());
    k += b_[l].size();
  }
}

void Mlp::polyak_from(const Mlp& src, double tau) {
  for (std::size_t l = 0; l < W_.size(); ++l) {
    W_[l] = tau * src.W_[l] + (1.0 - tau) * W_[l];
    b_[l] = tau * src.b_[l] + (1.0 - tau) * b_[l];
  }
}

bool Mlp::operator==(const Mlp& other) const {
  if (sizes_ != other.sizes_) return false;
  for (std::size_t l = 0; l < W_.size(); ++l) {
    if (W_[l] != other.W_[l] || b_[l] != other.b_[l]) return false;
  }
  return true;
}

Adam::Adam(const Mlp& net, AdamConfig cfg) : cfg_(cfg), m_(net.zero_grads()), v_(net.zero_grads()) {}

void Adam::step(Mlp& net, const MlpGrads& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    param.array() -= cfg_.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.eps);
  };
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    update(net.weight(l), grads.dW[l], m_.dW[l], v_.dW[l]);
    update(net.bias(l), grads.db[l], m_.db[l], v_.db[l]);
  }
}

void Adam::step_scalar(double& param, double grad, double& m, double& v, std::int64_t t,
                       const AdamConfig& cfg) {
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad;
  const double mh = m / (1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
  const double vh = v / (1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
  param -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.eps);
}

ActionBox ActionBox::symmetric(int dim, double bound) {
  return {Vector::Constant(dim, -bound), Vector::Constant(dim, bound)};
}

SquashedSample sample_squashed(const Matrix& head_out, const Matrix& noise, const ActionBox& box) {
  const int A = box.dim();
  if (head_out.rows() != 2 * A || noise.rows() != A || noise.cols() != head_out.cols()) {
    throw DimensionError("policy head: output/noise shape mismatch");
  }
  SquashedSample s;
  s.mean = head_out.topRows(A);
  const Matrix raw_log_std = head_out.bottomRows(A);
  s.log_std = raw_log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  s.log_std_active = (raw_log_std.array() >= kLogStdMin) && (raw_log_std.array() <= kLogStdMax);
  s.std = s.log_std.array().exp();
  s.noise = noise;
  s.u = s.mean + s.std.cwiseProduct(noise);
  s.tanh_u = s.u.array().tanh();

  const Vector c = box.center();
  const Vector h = box.half_range();
  s.action = (s.tanh_u.array().colwise() * h.array()).colwise() + c.array();

  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  const double log_scale = h.array().log().sum();
  Matrix per = -0.5 * noise.array().square() - s.log_std.array() - half_log_2pi -
               (1.0 - s.tanh_u.array().square() + kTanhEps).log();
  s.log_prob = per.colwise().sum().array() - log_scale;
  return s;
}

Matrix squashed_mean(const Matrix& head_out, const ActionBox& box) {
  const int A = box.dim();
  if (head_out.rows() != 2 * A) throw DimensionError("policy head: output shape mismatch");
  const Matrix t = head_out.topRows(A).array().tanh();
  return (t.array().colwise() * box.half_range().array()).colwise() + box.center().array();
}

Matrix squashed_backward(const SquashedSample& s, const ActionBox& box, const Matrix& d_action,
                         const RowVector& d_log_prob) {
  const int A = box.dim();
  const auto one_minus_t2 = (1.0 - s.tanh_u.array().square()).eval();
  const Matrix d_logp_rep = d_log_prob.replicate(A, 1);
  // d/du of -log(1 - tanh(u)^2 + eps)
  const auto corr = (2.0 * s.tanh_u.array() * one_minus_t2 / (one_minus_t2 + kTanhEps)).eval();
  const Matrix du = (d_action.array().colwise() * box.half_range().array()) * one_minus_t2 +
                    d_logp_rep.array() * corr;

  Matrix out(2 * A, s.u.cols());
  out.topRows(A) = du;
  const Matrix dls = du.array() * s.std.array() * s.noise.array() - d_logp_rep.array();
  out.bottomRows(A) = s.log_std_active.select(dls, 0.0);
  return out;
}

Matrix standard_normal(int rows, int cols, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = nd(rng);
  }
  return m;
}

namespace {

std::uint64_t fnv1a(const unsigned char* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return __builtin_bswap64(v);
}

}  // namespace

std::uint64_t parameter_checksum(const Mlp& net) {
  const auto flat = net.flatten();
  return fnv1a(reinterpret_cast<const unsigned char*>(flat.data()), flat.size() * sizeof(double));
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

void save_checkpoint(const Mlp& net, const std::filesystem::path& path) {
  const auto flat = net.flatten();
  std::vector<std::uint64_t> words(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) words[i] = to_le(std::bit_cast<std::uint64_t>(flat[i]));
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(words.data()),
              static_cast<std::streamsize>(words.size() * sizeof(std::uint64_t)));
  }
  const std::uint64_t hash =
      fnv1a(reinterpret_cast<const unsigned char*>(words.data()), words.size() * sizeof(std::uint64_t));
  nlohmann::json meta;
  meta["layer_sizes"] = net.layer_sizes();
  meta["parameter_count"] = net.parameter_count();
  meta["dtype"] = "float64-le";
  meta["fnv1a64"] = hex64(hash);
  std::ofstream side(path.string() + ".json");
  if (!side) throw std::runtime_error("cannot write checkpoint sidecar for " + path.string());
  side << meta.dump(2) << '\n';
}

Mlp load_checkpoint(const std::filesystem::path& path) {
  std::ifstream side(path.string() + ".json");
  if (!side) throw std::runtime_error("missing checkpoint sidecar " + path.string() + ".json");
  const auto meta = nlohmann::json::parse(side);
  Mlp net(meta.at("layer_sizes").get<std::vector<int>>());

  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::vector<std::uint64_t> words(net.parameter_count());
  in.read(reinterpret_cast<char*>(words.data()),
          static_cast<std::streamsize>(words.size() * sizeof(std::uint64_t)));
  if (in.gcount() != static_cast<std::streamsize>(words.size() * sizeof(std::uint64_t)) ||
      in.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error("checkpoint " + path.string() + " has the wrong size for its layer sizes");
  }
  const std::uint64_t hash =
      fnv1a(reinterpret_cast<const unsigned char*>(words.data()), words.size() * sizeof(std::uint64_t));
  if (hex64(hash) != meta.at("fnv1a64").get<std::string>()) {
    throw std::runtime_error("checkpoint " + path.string() + " does not match its recorded hash");
  }
  std::vector<double> flat(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) flat[i] = std::bit_cast<double>(to_le(words[i]));
  net.unflatten(flat);
  return net;
}

}  // namespace racelab
