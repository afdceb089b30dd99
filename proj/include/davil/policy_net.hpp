#pragma once

#include <random>
#include <vector>

#include "davil/rigid_body.hpp"

namespace davil {

struct DenseLayer {
  MatX W;  // out x in
  VecX b;
};

/// Activations kept for the backward pass; one entry per layer input plus the final output.
struct MlpTape {
  std::vector<MatX> acts;
};

/// Fully connected network with tanh between layers. Samples are columns.
class Mlp {
 public:
  Mlp() = default;
  /// sizes = {in, h1, ..., out}; tanh_output applies tanh after the last layer too.
  /// Xavier-uniform weights; the last layer is multiplied by out_gain. Zero biases.
  Mlp(const std::vector<int>& sizes, bool tanh_output, std::mt19937_64& rng, double out_gain = 1.0);

  int in_dim() const { return static_cast<int>(layers_.front().W.cols()); }
  int out_dim() const { return static_cast<int>(layers_.back().W.rows()); }
  int depth() const { return static_cast<int>(layers_.size()); }
  int num_params() const;

  MatX forward(const MatX& X, MlpTape* tape = nullptr) const;
  /// Accumulates parameter gradients into grads (same shapes as layers()) and returns dL/dX.
  MatX backward(const MlpTape& tape, const MatX& dY, std::vector<DenseLayer>& grads) const;

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  bool tanh_output() const { return tanh_output_; }
  std::vector<DenseLayer> zero_grads() const;

 private:
  std::vector<DenseLayer> layers_;
  bool tanh_output_ = false;
};

/// Pack / unpack a list of layers into one flat vector (W column-major, then b, layer by layer).
int count_params(const std::vector<DenseLayer>& layers);
void pack(const std::vector<DenseLayer>& layers, VecX& out, int& offset);
void unpack(const VecX& in, int& offset, std::vector<DenseLayer>& layers);

/// Plain Adam on a flat parameter vector.
class Adam {
 public:
  Adam() = default;
  Adam(int n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(VecX& params, const VecX& grad);
  double lr = 3e-4;
  int t() const { return t_; }

 private:
  double b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
  VecX m_, v_;
  int t_ = 0;
};

}  // namespace davil
