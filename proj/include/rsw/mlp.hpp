#pragma once

#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rsw/rng.hpp"

namespace rsw {

// Two-hidden-layer tanh MLP over a flat parameter vector, with hand-written
// reverse-mode accumulation. Gradients flow through backward() into a caller
// owned buffer so minibatch losses can sum contributions.
class Mlp {
 public:
  Mlp() = default;
  Mlp(int in_dim, int hidden_dim, int out_dim, Rng& rng);

  struct Cache {
    std::vector<double> input;
    std::vector<double> h1, h2;  // tanh activations
    std::vector<double> out;
  };

  void forward(std::span<const double> x, Cache& cache) const;
  std::vector<double> forward(std::span<const double> x) const;

  // Accumulates d(loss)/d(params) into grad given d(loss)/d(out).
  // grad must have params().size() entries.
  void backward(const Cache& cache, std::span<const double> dout,
                std::span<double> grad) const;

  std::vector<double>& params() { return w_; }
  const std::vector<double>& params() const { return w_; }
  int in_dim() const { return in_; }
  int hidden_dim() const { return hidden_; }
  int out_dim() const { return out_; }

  nlohmann::json to_json() const;
  static Mlp from_json(const nlohmann::json& j);

 private:
  // layout: W1[h][in], b1[h], W2[h][h], b2[h], W3[out][h], b3[out]
  int w1() const { return 0; }
  int b1() const { return hidden_ * in_; }
  int w2() const { return b1() + hidden_; }
  int b2() const { return w2() + hidden_ * hidden_; }
  int w3() const { return b2() + hidden_; }
  int b3() const { return w3() + out_ * hidden_; }

  int in_ = 0, hidden_ = 0, out_ = 0;
  std::vector<double> w_;
};

// Adaptive-moment gradient descent over a flat parameter vector.
class Adam {
 public:
  Adam() = default;
  explicit Adam(size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> w, std::span<const double> g);
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::vector<double> m_, v_;
  long t_ = 0;
};

// Scales g in place so its L2 norm is at most max_norm. Returns the pre-clip norm.
double clip_grad_norm(std::span<double> g, double max_norm);

}  // namespace rsw
