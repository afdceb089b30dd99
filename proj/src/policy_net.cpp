#include "davil/policy_net.hpp"

#include <cmath>
#include <stdexcept>

namespace davil {

Mlp::Mlp(const std::vector<int>& sizes, bool tanh_output, std::mt19937_64& rng, double out_gain)
    : tanh_output_(tanh_output) {
  if (sizes.size() < 2) throw std::invalid_argument("an MLP needs at least one layer");
  for (size_t i = 0; i + 1 < sizes.size(); ++i) {
    const int in = sizes[i], out = sizes[i + 1];
    if (in < 1 || out < 1) throw std::invalid_argument("layer sizes must be positive");
    const double a = std::sqrt(6.0 / (in + out)) * (i + 2 == sizes.size() ? out_gain : 1.0);
    std::uniform_real_distribution<double> u(-a, a);
    DenseLayer l;
    l.W.resize(out, in);
    for (int c = 0; c < in; ++c)
      for (int r = 0; r < out; ++r) l.W(r, c) = u(rng);
    l.b = VecX::Zero(out);
    layers_.push_back(std::move(l));
  }
}

int Mlp::num_params() const { return count_params(layers_); }

std::vector<DenseLayer> Mlp::zero_grads() const {
  std::vector<DenseLayer> g(layers_.size());
  for (size_t i = 0; i < layers_.size(); ++i) {
    g[i].W = MatX::Zero(layers_[i].W.rows(), layers_[i].W.cols());
    g[i].b = VecX::Zero(layers_[i].b.size());
  }
  return g;
}

MatX Mlp::forward(const MatX& X, MlpTape* tape) const {
  if (X.rows() != in_dim()) throw std::invalid_argument("MLP input has the wrong width");
  if (tape) {
    tape->acts.clear();
    tape->acts.push_back(X);
  }
  MatX a = X;
  for (size_t i = 0; i < layers_.size(); ++i) {
    MatX z = layers_[i].W * a;
    z.colwise() += layers_[i].b;
    const bool act = i + 1 < layers_.size() || tanh_output_;
    a = act ? MatX(z.array().tanh()) : z;
    if (tape) tape->acts.push_back(a);
  }
  return a;
}

MatX Mlp::backward(const MlpTape& tape, const MatX& dY, std::vector<DenseLayer>& grads) const {
  if (tape.acts.size() != layers_.size() + 1) throw std::invalid_argument("tape does not match the network");
  MatX d = dY;
  for (size_t k = layers_.size(); k-- > 0;) {
    const bool act = k + 1 < layers_.size() || tanh_output_;
    if (act) d.array() *= 1.0 - tape.acts[k + 1].array().square();
    grads[k].W.noalias() += d * tape.acts[k].transpose();
    grads[k].b += d.rowwise().sum();
    d = layers_[k].W.transpose() * d;
  }
  return d;
}

int count_params(const std::vector<DenseLayer>& layers) {
  int n = 0;
  for (const auto& l : layers) n += static_cast<int>(l.W.size() + l.b.size());
  return n;
}

void pack(const std::vector<DenseLayer>& layers, VecX& out, int& offset) {
  for (const auto& l : layers) {
    out.segment(offset, l.W.size()) = l.W.reshaped();
    offset += static_cast<int>(l.W.size());
    out.segment(offset, l.b.size()) = l.b;
    offset += static_cast<int>(l.b.size());
  }
}

void unpack(const VecX& in, int& offset, std::vector<DenseLayer>& layers) {
  for (auto& l : layers) {
    l.W.reshaped() = in.segment(offset, l.W.size());
    offset += static_cast<int>(l.W.size());
    l.b = in.segment(offset, l.b.size());
    offset += static_cast<int>(l.b.size());
  }
}

Adam::Adam(int n, double lr_, double beta1, double beta2, double eps)
    : lr(lr_), b1_(beta1), b2_(beta2), eps_(eps), m_(VecX::Zero(n)), v_(VecX::Zero(n)) {}

void Adam::step(VecX& params, const VecX& grad) {
  if (grad.size() != m_.size() || params.size() != m_.size()) throw std::invalid_argument("Adam size mismatch");
  ++t_;
  m_ = b1_ * m_ + (1.0 - b1_) * grad;
  v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
  params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

}  // namespace davil
