#pragma once

#include <memory>
#include <string>
#include <vector>

#include "safesign/checkpoint.hpp"
#include "safesign/image.hpp"
#include "safesign/mask_lab.hpp"
#include "safesign/nn.hpp"
#include "safesign/patch_forge.hpp"
#include "safesign/sign_data.hpp"
#include "safesign/tsr_classifier.hpp"

namespace safesign::reconstructor {

enum class HeadMerge { Sum, Mean };

struct ReconConfig {
  int min_views = 2;
  int max_views = 10;
  int extractor_hidden = 12;
  int attn_dim = 8;
  // One extractor/SE/projection set applied to every view (permutation
  // equivariant, view-count agnostic). When false, every view gets its own
  // weights and the view count is pinned to fixed_views.
  bool shared_weights = true;
  int fixed_views = 6;
  bool attention = true;  // false = uniform mean fusion over projected views
  HeadMerge merge = HeadMerge::Sum;
  double fidelity_weight = 0.1;  // 0 = classifier-only objective
  uint64_t init_seed = 3;
};

struct MultiViewInput {
  std::vector<SignImage> views;  // R views of one sign instance
  int label = 0;
  SignImage base;  // clean canonical image, the fidelity target
  std::string view_group;
};

// Per-view squeeze-excitation over 3-channel feature maps: global average
// pool, FC 3->16->16->3 (ReLU, ReLU, sigmoid), channel-wise recalibration.
class SqueezeExcite {
 public:
  SqueezeExcite(const std::string& name, Rng& rng);

  Tensor forward(const Tensor& x, bool train);  // (N,3,H,W)
  Tensor backward(const Tensor& gout);
  void collect(std::vector<nn::ParamPtr>& out) const;

  // Last computed channel weights, (N,3); for invariant checks.
  const Tensor& last_weights() const { return weights_; }
  // Test hook: recalibrate with all-ones weights.
  void set_unit_excitation(bool on) { unit_excitation_ = on; }

 private:
  nn::Linear fc1_, fc2_, fc3_;
  nn::ReLU r1_, r2_;
  nn::Sigmoid sig_;
  bool unit_excitation_ = false;
  Tensor x_, weights_;
};

// Global average pool of one (C,H,W) feature map, exact for constant channels.
std::vector<double> squeeze_descriptor(const Tensor& features);

// Attention-fused multi-view repair network: per-view conv extractors,
// SE channel recalibration, cross-view scaled dot-product attention with one
// head per query view merged by pixel-wise addition, and a 1x1 conv + sigmoid
// output head.
class Reconstructor {
 public:
  explicit Reconstructor(ReconConfig cfg);

  const ReconConfig& config() const { return cfg_; }

  // Batched training forward: `view_counts[i]` views per group, views stacked
  // in one (sum(view_counts),3,64,64) tensor. Returns (B,3,64,64).
  Tensor forward_groups(const Tensor& views, const std::vector<int>& view_counts, bool train);
  Tensor backward_groups(const Tensor& dout);

  SignImage repair(const MultiViewInput& mv);

  // SE recalibration of one (3,H,W) feature map (inference mode).
  Tensor se_recalibrate(const Tensor& features, bool unit_excitation = false);

  // Cross-view fusion of pre-extracted per-view feature maps (R,3,H,W).
  // Optionally writes the attention weights, shaped (R,R,H*W).
  SignImage fuse_views(const Tensor& per_view_features, Tensor* attn_weights = nullptr);

  std::vector<nn::ParamPtr> params() const;
  uint64_t param_hash() const { return nn::hash_params(params()); }

  Checkpoint to_checkpoint() const;
  static Reconstructor from_checkpoint(const Checkpoint& ck);

 private:
  struct AttnCache;

  Tensor extract(const Tensor& views, const std::vector<int>& view_counts, bool train);
  Tensor extract_backward(const Tensor& g);
  Tensor attend_group(const Tensor& feats, int r, AttnCache* cache, Tensor* attn_weights,
                      bool use_per_view, int base_view) const;
  void attend_group_backward(const Tensor& dmerged, AttnCache& cache, Tensor& dfeats,
                             bool use_per_view, int base_view);

  ReconConfig cfg_;
  Rng init_rng_;

  // shared (size 1) or per-view (size fixed_views)
  std::vector<nn::ConvReluBn> ext1_, ext2_, ext3_;
  std::vector<SqueezeExcite> se_;
  std::vector<nn::ParamPtr> wq_, wk_, wv_;  // (3, attn_dim), no bias

  nn::Conv2d head_;
  nn::Sigmoid out_sig_;

  // training caches
  std::vector<int> view_counts_;
  std::vector<std::shared_ptr<AttnCache>> attn_caches_;
  Tensor feats_cache_;
};

struct ReconTrainConfig {
  int views = 6;                      // R at evaluation time
  std::vector<int> train_view_counts;  // sampled per item; defaults to {views}
  double lr = 1e-4;
  int group_batch = 8;
  int epochs = 1;
  long max_steps = 0;
  double clean_fraction = 0.5;  // 1:1 clean/contaminated mix
  uint64_t seed = 3;
};

struct ViewJitter {
  double rotation_deg = 6.0;
  double translate_px = 2.0;
  double scale_lo = 0.94, scale_hi = 1.06;
  double brightness_lo = 0.9, brightness_hi = 1.1;
  double saturation_lo = 0.85, saturation_hi = 1.15;
  double contrast_lo = 0.9, contrast_hi = 1.1;
};

// R distinct seeded affine+photometric views of one base image.
std::vector<SignImage> synthesize_views(const SignImage& base, int count, const ViewJitter& jitter,
                                        Rng& rng);

// Contaminates each view independently with generator noise under a random
// mask/condition.
std::vector<SignImage> contaminate_views(const std::vector<SignImage>& views,
                                         patch_forge::Generator& g,
                                         const std::vector<mask_lab::BinaryMask>& masks, Rng& rng);

struct ReconTrainLog {
  std::vector<double> per_epoch_loss;
};

// Minimizes classifier cross-entropy on repaired outputs plus the optional
// pixel-fidelity term, on a 1:1 mix of clean and generator-contaminated
// multi-view inputs. The light-attack suites never appear here.
ReconTrainLog train_reconstructor(Reconstructor& s, tsr_classifier::Classifier& c,
                                  const sign_data::Dataset& clean, patch_forge::Generator& threat,
                                  const std::vector<mask_lab::BinaryMask>& masks,
                                  const ReconTrainConfig& cfg, const ViewJitter& jitter = {});

}  // namespace safesign::reconstructor
