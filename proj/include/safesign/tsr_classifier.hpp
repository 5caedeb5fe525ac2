#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "safesign/checkpoint.hpp"
#include "safesign/image.hpp"
#include "safesign/nn.hpp"
#include "safesign/sign_data.hpp"

namespace safesign::tsr_classifier {

struct ClassifierConfig {
  int classes = 10;
  std::vector<int> conv_channels{8, 16, 16};  // three conv+pool stages
  int fc_hidden = 64;
  double dropout = 0.5;
  uint64_t init_seed = 1;
};

struct TrainConfig {
  double lr = 1e-4;
  int batch = 32;
  int epochs = 10;
  long max_steps = 0;  // optional cap on optimizer steps, 0 = none
  uint64_t seed = 1;
};

// Small convolutional surrogate recognizer: three conv/pool stages and a
// two-layer fully connected head with dropout.
class Classifier {
 public:
  explicit Classifier(ClassifierConfig cfg);

  int classes() const { return cfg_.classes; }
  const ClassifierConfig& config() const { return cfg_; }

  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }
  uint64_t param_hash() const { return nn::hash_params(params()); }

  const std::vector<std::string>& class_names() const { return class_names_; }
  void set_class_names(std::vector<std::string> names) { class_names_ = std::move(names); }

  //

  Tensor forward_logits(const Tensor& images, bool train, Rng* dropout_rng = nullptr);
  // Backprop after forward_logits; accumulates param grads, returns dL/dinput.
  Tensor backward_to_input(const Tensor& dlogits);

  std::pair<int, std::vector<double>> predict(const SignImage& x);

  // Pre-activation probes of every conv stage and fully connected layer.
  std::vector<std::pair<std::string, Tensor>> feature_profile(const SignImage& x);

  std::vector<nn::ParamPtr> params() const;

  Checkpoint to_checkpoint() const;
  static Classifier from_checkpoint(const Checkpoint& ck);

  // Test hook: zeroes the final layer so logits are uniform.
  void zero_final_layer();

  // Guarded mutation path used only by train_classifier.
  void require_mutable() const;

 private:
  ClassifierConfig cfg_;
  std::vector<std::string> class_names_;
  bool frozen_ = false;

  Rng init_rng_;  // consumed during layer construction only
  nn::Conv2d conv1_, conv2_, conv3_;
  nn::ReLU r1_, r2_, r3_, r4_;
  nn::MaxPool2x2 p1_, p2_, p3_;
  nn::Linear fc1_, fc2_;
  nn::Dropout drop_;
  std::vector<int> conv_out_shape_;
};

struct Metrics {
  Tensor confusion;  // (M,M), rows = truth, columns = prediction
  double accuracy = 0.0;
  std::vector<double> per_class_precision;
  std::vector<bool> precision_defined;  // false when the class was never predicted
};

Metrics metrics_from_confusion(const Tensor& confusion);
Metrics evaluate(Classifier& c, const std::vector<std::pair<SignImage, int>>& samples);

Classifier train_classifier(const sign_data::Dataset& d, const ClassifierConfig& arch,
                            const TrainConfig& tc, std::vector<double>* loss_curve = nullptr);

// Per-layer cosine similarity of the two feature profiles; nullopt flags a
// zero-norm feature vector.
std::vector<std::optional<double>> feature_similarity(Classifier& c, const SignImage& a,
                                                      const SignImage& b);

// d(cross-entropy)/d(input image) for a single sample, dropout disabled.
Tensor input_gradient(Classifier& c, const SignImage& x, int label);

}  // namespace safesign::tsr_classifier
