#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "safesign/rng.hpp"
#include "safesign/tensor.hpp"

namespace safesign::nn {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  // Adam state, lazily sized on first step.
  Tensor m, v;

  Param(std::string n, Tensor init) : name(std::move(n)), value(std::move(init)) {
    grad = Tensor(value.shape());
  }
  void zero_grad() { grad.set_zero(); }
};

using ParamPtr = std::shared_ptr<Param>;

// Layers operate on batched activations (N,C,H,W) for spatial layers and (N,D)
// for dense ones. forward caches whatever backward needs; backward accumulates
// into param grads and returns the input gradient.

class Conv2d {
 public:
  Conv2d(std::string name, int in_ch, int out_ch, int kernel, Rng& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gout);
  void collect(std::vector<ParamPtr>& out) const;

  const ParamPtr& weight() const { return w_; }
  const ParamPtr& bias() const { return b_; }

 private:
  int in_ch_, out_ch_, k_, pad_;
  ParamPtr w_;  // (out_ch, in_ch*k*k)
  ParamPtr b_;  // (out_ch)
  Tensor x_;    // cached input
};

// 2x2 stride-2 up-convolution; doubles the spatial size.
class ConvTranspose2x2 {
 public:
  ConvTranspose2x2(std::string name, int in_ch, int out_ch, Rng& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gout);
  void collect(std::vector<ParamPtr>& out) const;

 private:
  int in_ch_, out_ch_;
  ParamPtr w_;  // (in_ch, out_ch*4)
  ParamPtr b_;  // (out_ch)
  Tensor x_;
};

class BatchNorm2d {
 public:
  BatchNorm2d(std::string name, int channels);

  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& gout);
  void collect(std::vector<ParamPtr>& out) const;

  Tensor& running_mean() { return run_mean_; }
  Tensor& running_var() { return run_var_; }
  const Tensor& running_mean() const { return run_mean_; }
  const Tensor& running_var() const { return run_var_; }

 private:
  int ch_;
  double momentum_ = 0.1;
  double eps_ = 1e-5;
  ParamPtr gamma_, beta_;
  Tensor run_mean_, run_var_;
  // caches
  Tensor xhat_;
  std::vector<double> inv_std_;
  long per_ch_ = 0;
};

class ReLU {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gout) const;

 private:
  Tensor x_;
};

class Tanh {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gout) const;

 private:
  Tensor y_;
};

class Sigmoid {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gout) const;

 private:
  Tensor y_;
};

class MaxPool2x2 {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gout) const;

 private:
  std::vector<int> in_shape_;
  std::vector<int> argmax_;  // flat input index per output element
};

class Linear {
 public:
  Linear(std::string name, int in_dim, int out_dim, Rng& rng);

  Tensor forward(const Tensor& x);  // (N,in) -> (N,out)
  Tensor backward(const Tensor& gout);
  void collect(std::vector<ParamPtr>& out) const;

  const ParamPtr& weight() const { return w_; }
  const ParamPtr& bias() const { return b_; }

 private:
  int in_, out_;
  ParamPtr w_;  // (in, out)
  ParamPtr b_;  // (out)
  Tensor x_;
};

// Inverted dropout; active only when train=true and rng is set.
class Dropout {
 public:
  explicit Dropout(double p) : p_(p) {}

  Tensor forward(const Tensor& x, bool train, Rng* rng);
  Tensor backward(const Tensor& gout) const;

 private:
  double p_;
  bool active_ = false;
  Tensor mask_;
};

// conv3x3 -> BatchNorm -> ReLU, the encoder/decoder unit of the noise generator.
class ConvBnRelu {
 public:
  ConvBnRelu(std::string name, int in_ch, int out_ch, Rng& rng)
      : name_(std::move(name)), conv_(name_ + ".conv", in_ch, out_ch, 3, rng), bn_(name_ + ".bn", out_ch) {}

  Tensor forward(const Tensor& x, bool train) {
    return relu_.forward(bn_.forward(conv_.forward(x), train));
  }
  Tensor backward(const Tensor& gout) {
    return conv_.backward(bn_.backward(relu_.backward(gout)));
  }
  void collect(std::vector<ParamPtr>& out) const {
    conv_.collect(out);
    bn_.collect(out);
  }

  const std::string& name() const { return name_; }
  BatchNorm2d& bn() { return bn_; }
  const BatchNorm2d& bn() const { return bn_; }

 private:
  std::string name_;
  Conv2d conv_;
  BatchNorm2d bn_;
  ReLU relu_;
};

// conv3x3 -> ReLU -> BatchNorm, the per-view extraction unit of the repair net.
class ConvReluBn {
 public:
  ConvReluBn(std::string name, int in_ch, int out_ch, Rng& rng)
      : name_(std::move(name)), conv_(name_ + ".conv", in_ch, out_ch, 3, rng), bn_(name_ + ".bn", out_ch) {}

  Tensor forward(const Tensor& x, bool train) {
    return bn_.forward(relu_.forward(conv_.forward(x)), train);
  }
  Tensor backward(const Tensor& gout) {
    return conv_.backward(relu_.backward(bn_.backward(gout)));
  }
  void collect(std::vector<ParamPtr>& out) const {
    conv_.collect(out);
    bn_.collect(out);
  }

  const std::string& name() const { return name_; }
  BatchNorm2d& bn() { return bn_; }
  const BatchNorm2d& bn() const { return bn_; }

 private:
  std::string name_;
  Conv2d conv_;
  ReLU relu_;
  BatchNorm2d bn_;
};

// Channel concat and its inverse split, for skip connections.
Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& g, int ch_a, Tensor* ga, Tensor* gb);

// Mean cross-entropy over the batch with fused softmax.
// Returns loss; writes dlogits (dL/dlogits) and optionally the probabilities.
double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             Tensor* dlogits, Tensor* probs = nullptr);

struct Adam {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;

  void step(const std::vector<ParamPtr>& params);
};

void zero_grads(const std::vector<ParamPtr>& params);

// FNV-1a over the raw bytes of all parameter values, in collection order.
uint64_t hash_params(const std::vector<ParamPtr>& params);

// Initializers.
Tensor he_normal(std::vector<int> shape, long fan_in, Rng& rng);
Tensor xavier_uniform(std::vector<int> shape, long fan_in, long fan_out, Rng& rng);

}  // namespace safesign::nn
