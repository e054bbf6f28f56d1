#include "rsw/mlp.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "rsw/error.hpp"

namespace rsw {

Mlp::Mlp(int in_dim, int hidden_dim, int out_dim, Rng& rng)
    : in_(in_dim), hidden_(hidden_dim), out_(out_dim) {
  if (in_dim < 1 || hidden_dim < 1 || out_dim < 1)
    throw ConfigError("mlp: dimensions must be positive");
  w_.assign(static_cast<size_t>(b3()) + out_, 0.0);
  // Glorot-uniform weights, zero biases.
  auto init = [&](int offset, int rows, int cols) {
    const double a = std::sqrt(6.0 / (rows + cols));
    for (int i = 0; i < rows * cols; ++i) w_[offset + i] = rng.uniform(-a, a);
  };
  init(w1(), hidden_, in_);
  init(w2(), hidden_, hidden_);
  init(w3(), out_, hidden_);
}

void Mlp::forward(std::span<const double> x, Cache& cache) const {
  cache.input.assign(x.begin(), x.end());
  cache.h1.assign(hidden_, 0.0);
  cache.h2.assign(hidden_, 0.0);
  cache.out.assign(out_, 0.0);
  for (int j = 0; j < hidden_; ++j) {
    double a = w_[b1() + j];
    const double* row = &w_[w1() + j * in_];
    for (int i = 0; i < in_; ++i) a += row[i] * x[i];
    cache.h1[j] = std::tanh(a);
  }
  for (int j = 0; j < hidden_; ++j) {
    double a = w_[b2() + j];
    const double* row = &w_[w2() + j * hidden_];
    for (int i = 0; i < hidden_; ++i) a += row[i] * cache.h1[i];
    cache.h2[j] = std::tanh(a);
  }
  for (int o = 0; o < out_; ++o) {
    double a = w_[b3() + o];
    const double* row = &w_[w3() + o * hidden_];
    for (int i = 0; i < hidden_; ++i) a += row[i] * cache.h2[i];
    cache.out[o] = a;
  }
}

std::vector<double> Mlp::forward(std::span<const double> x) const {
  Cache cache;
  forward(x, cache);
  return cache.out;
}

void Mlp::backward(const Cache& cache, std::span<const double> dout,
                   std::span<double> grad) const {
  std::vector<double> dh2(hidden_, 0.0), dh1(hidden_, 0.0);
  for (int o = 0; o < out_; ++o) {
    const double g = dout[o];
    if (g == 0.0) continue;
    grad[b3() + o] += g;
    double* grow = &grad[w3() + o * hidden_];
    const double* wrow = &w_[w3() + o * hidden_];
    for (int i = 0; i < hidden_; ++i) {
      grow[i] += g * cache.h2[i];
      dh2[i] += g * wrow[i];
    }
  }
  for (int j = 0; j < hidden_; ++j) {
    const double da = dh2[j] * (1.0 - cache.h2[j] * cache.h2[j]);
    if (da == 0.0) continue;
    grad[b2() + j] += da;
    double* grow = &grad[w2() + j * hidden_];
    const double* wrow = &w_[w2() + j * hidden_];
    for (int i = 0; i < hidden_; ++i) {
      grow[i] += da * cache.h1[i];
      dh1[i] += da * wrow[i];
    }
  }
  for (int j = 0; j < hidden_; ++j) {
    const double da = dh1[j] * (1.0 - cache.h1[j] * cache.h1[j]);
    if (da == 0.0) continue;
    grad[b1() + j] += da;
    double* grow = &grad[w1() + j * in_];
    for (int i = 0; i < in_; ++i) grow[i] += da * cache.input[i];
  }
}

nlohmann::json Mlp::to_json() const {
  return nlohmann::json{
      {"in_dim", in_}, {"hidden_dim", hidden_}, {"out_dim", out_}, {"weights", w_}};
}

Mlp Mlp::from_json(const nlohmann::json& j) {
  Mlp m;
  m.in_ = j.at("in_dim").get<int>();
  m.hidden_ = j.at("hidden_dim").get<int>();
  m.out_ = j.at("out_dim").get<int>();
  m.w_ = j.at("weights").get<std::vector<double>>();
  const size_t expect = static_cast<size_t>(m.hidden_ * m.in_ + m.hidden_ +
                                            m.hidden_ * m.hidden_ + m.hidden_ +
                                            m.out_ * m.hidden_ + m.out_);
  if (m.w_.size() != expect)
    throw DataError("mlp: weight count does not match shape metadata");
  return m;
}

void Adam::step(std::span<double> w, std::span<const double> g) {
  if (w.size() != m_.size() || g.size() != m_.size())
    throw ContractViolation("adam: size mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (size_t i = 0; i < w.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g[i] * g[i];
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
  }
}

double clip_grad_norm(std::span<double> g, double max_norm) {
  double sq = 0.0;
  for (double v : g) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (double& v : g) v *= scale;
  }
  return norm;
}

}  // namespace rsw
