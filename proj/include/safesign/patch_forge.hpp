#pragma once

#include <string>
#include <utility>
#include <vector>

#include "safesign/checkpoint.hpp"
#include "safesign/image.hpp"
#include "safesign/mask_lab.hpp"
#include "safesign/nn.hpp"
#include "safesign/sign_data.hpp"
#include "safesign/tsr_classifier.hpp"

namespace safesign::patch_forge {

struct GeneratorConfig {
  // Output channels of the four pooled encoder stages.
  std::vector<int> stage_widths{64, 32, 64, 8};
  int patterns = 4;  // P condition slots, one one-hot input plane each
  uint64_t init_seed = 2;
};

struct PerturbationNoise {
  Tensor values;  // signed (3,64,64), bounded to (-1,1) by the tanh head
  int condition_id = 0;
};

// U-Net noise generator: eight conv+BN+ReLU encoder units with pooling after
// every second unit, a symmetric up-convolutional decoder with skip
// connections, and a tanh head emitting signed noise the size of the input.
// Pattern identity enters as P extra one-hot input planes.
class Generator {
 public:
  explicit Generator(GeneratorConfig cfg);

  const GeneratorConfig& config() const { return cfg_; }
  int patterns() const { return cfg_.patterns; }

  // images (N,3,64,64), one condition id per row.
  Tensor forward_batch(const Tensor& images, const std::vector<int>& conditions, bool train);
  // Backprop after forward_batch; accumulates param grads, returns dL/dimages
  // (condition-plane gradients are dropped).
  Tensor backward(const Tensor& dnoise);

  std::vector<nn::ParamPtr> params() const;
  uint64_t param_hash() const { return nn::hash_params(params()); }

  Checkpoint to_checkpoint() const;
  static Generator from_checkpoint(const Checkpoint& ck);

 private:
  GeneratorConfig cfg_;
  Rng init_rng_;

  std::vector<nn::ConvBnRelu> enc_;   // 8 units
  std::vector<nn::MaxPool2x2> pool_;  // 4
  std::vector<nn::ConvTranspose2x2> up_;  // 4
  std::vector<nn::ConvBnRelu> dec_;   // 8 units
  nn::Conv2d head_;
  nn::Tanh tanh_;
};

// Single-image convenience wrapper (inference mode).
PerturbationNoise unet_forward(Generator& g, const SignImage& x, int condition_id);

// clamp(x + noise (.) mask, 0, 1); pixels with mask 0 are bit-identical to x.
SignImage contaminate(const SignImage& x, const Tensor& noise, const mask_lab::BinaryMask& mask);

struct GeneratorLoss {
  double l2 = 0.0;  // fooling term: mean cross-entropy on contaminated images
  double l3 = 0.0;  // diversity term: mean pairwise MAE across the P patterns
  double alpha = 0.5, beta = 0.5;
  double total() const { return alpha * l2 + beta * l3; }
};

// Evaluates the composite objective on a batch. Each (sample, slot) pair
// draws its mask from `masks` (uniform via mask_rng when given, round-robin
// otherwise). When accumulate_grads is set, d(total)/d(generator params) is
// accumulated, ready for an ascent step.
GeneratorLoss generator_loss(tsr_classifier::Classifier& c,
                             const std::vector<std::pair<SignImage, int>>& batch, Generator& g,
                             const std::vector<mask_lab::BinaryMask>& masks, double alpha,
                             double beta, bool accumulate_grads = false, Rng* mask_rng = nullptr,
                             bool train_mode = false);

struct GenTrainConfig {
  double alpha = 0.5;
  double beta = 0.5;
  // Optimizer steps with the diversity term held at zero. The diversity
  // ceiling is reachable long before the fooling term moves, and a saturated
  // tanh head then starves the whole objective of gradient; letting the
  // fooling pattern form first avoids that stall.
  long beta_warmup_steps = 0;
  double lr = 1e-4;
  int batch = 32;
  int epochs = 1;
  long max_steps = 0;
  uint64_t seed = 2;
};

struct GenTrainLog {
  std::vector<double> per_epoch_total, per_epoch_l2, per_epoch_l3;
};

// Gradient ascent on alpha*l2 + beta*l3 against the frozen classifier.
GenTrainLog train_generator(Generator& g, tsr_classifier::Classifier& c,
                            const sign_data::Dataset& d,
                            const std::vector<mask_lab::BinaryMask>& masks,
                            const GenTrainConfig& cfg);

}  // namespace safesign::patch_forge
