#include "safesign/patch_forge.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace safesign::patch_forge {

Generator::Generator(GeneratorConfig cfg)
    : cfg_(std::move(cfg)),
      init_rng_(mix_seed(cfg_.init_seed, 0x6e57a7e)),
      head_("head", cfg_.stage_widths.at(0), kSignChannels, 1, init_rng_) {
  if (cfg_.stage_widths.size() != 4)
    throw std::invalid_argument("Generator: expects 4 encoder stage widths");
  if (cfg_.patterns < 1) throw std::invalid_argument("Generator: needs at least one pattern slot");
  const int w0 = cfg_.stage_widths[0], w1 = cfg_.stage_widths[1], w2 = cfg_.stage_widths[2],
            w3 = cfg_.stage_widths[3];
  const int in_ch = kSignChannels + cfg_.patterns;

  enc_.reserve(8);
  enc_.emplace_back("enc1", in_ch, w0, init_rng_);
  enc_.emplace_back("enc2", w0, w0, init_rng_);
  enc_.emplace_back("enc3", w0, w1, init_rng_);
  enc_.emplace_back("enc4", w1, w1, init_rng_);
  enc_.emplace_back("enc5", w1, w2, init_rng_);
  enc_.emplace_back("enc6", w2, w2, init_rng_);
  enc_.emplace_back("enc7", w2, w3, init_rng_);
  enc_.emplace_back("enc8", w3, w3, init_rng_);
  pool_.resize(4);

  up_.reserve(4);
  up_.emplace_back("up1", w3, w3, init_rng_);
  up_.emplace_back("up2", w2, w2, init_rng_);
  up_.emplace_back("up3", w1, w1, init_rng_);
  up_.emplace_back("up4", w0, w0, init_rng_);

  // start the tanh head near its linear region; amplitude then grows with
  // training instead of saturating before the spatial pattern settles
  head_.weight()->value *= 0.05;

  dec_.reserve(8);
  dec_.emplace_back("dec1", 2 * w3, w2, init_rng_);
  dec_.emplace_back("dec2", w2, w2, init_rng_);
  dec_.emplace_back("dec3", 2 * w2, w1, init_rng_);
  dec_.emplace_back("dec4", w1, w1, init_rng_);
  dec_.emplace_back("dec5", 2 * w1, w0, init_rng_);
  dec_.emplace_back("dec6", w0, w0, init_rng_);
  dec_.emplace_back("dec7", 2 * w0, w0, init_rng_);
  dec_.emplace_back("dec8", w0, w0, init_rng_);
}

Tensor Generator::forward_batch(const Tensor& images, const std::vector<int>& conditions,
                                bool train) {
  if (images.rank() != 4 || images.dim(1) != kSignChannels || images.dim(2) != kSignSize ||
      images.dim(3) != kSignSize)
    throw std::invalid_argument("Generator: input must be (N,3,64,64)");
  const int n = images.dim(0);
  if (static_cast<int>(conditions.size()) != n)
    throw std::invalid_argument("Generator: one condition id per image required");
  const int p = cfg_.patterns;
  for (int c : conditions)
    if (c < 0 || c >= p) throw std::invalid_argument("Generator: condition id out of range");

  // input image plus one-hot condition planes
  Tensor z({n, kSignChannels + p, kSignSize, kSignSize});
  const long hw = static_cast<long>(kSignSize) * kSignSize;
  for (int i = 0; i < n; ++i) {
    std::copy(&images(i, 0, 0, 0), &images(i, 0, 0, 0) + kSignChannels * hw, &z(i, 0, 0, 0));
    double* plane = &z(i, kSignChannels + conditions[static_cast<size_t>(i)], 0, 0);
    std::fill(plane, plane + hw, 1.0);
  }

  Tensor s1 = enc_[1].forward(enc_[0].forward(z, train), train);
  Tensor b = pool_[0].forward(s1);
  Tensor s2 = enc_[3].forward(enc_[2].forward(b, train), train);
  b = pool_[1].forward(s2);
  Tensor s3 = enc_[5].forward(enc_[4].forward(b, train), train);
  b = pool_[2].forward(s3);
  Tensor s4 = enc_[7].forward(enc_[6].forward(b, train), train);
  b = pool_[3].forward(s4);

  Tensor a = nn::concat_channels(up_[0].forward(b), s4);
  a = dec_[1].forward(dec_[0].forward(a, train), train);
  a = nn::concat_channels(up_[1].forward(a), s3);
  a = dec_[3].forward(dec_[2].forward(a, train), train);
  a = nn::concat_channels(up_[2].forward(a), s2);
  a = dec_[5].forward(dec_[4].forward(a, train), train);
  a = nn::concat_channels(up_[3].forward(a), s1);
  a = dec_[7].forward(dec_[6].forward(a, train), train);
  return tanh_.forward(head_.forward(a));
}

Tensor Generator::backward(const Tensor& dnoise) {
  const int w0 = cfg_.stage_widths[0], w1 = cfg_.stage_widths[1], w2 = cfg_.stage_widths[2],
            w3 = cfg_.stage_widths[3];
  Tensor g = head_.backward(tanh_.backward(dnoise));
  g = dec_[6].backward(dec_[7].backward(g));
  Tensor gu, gs1, gs2, gs3, gs4;
  nn::split_channels(g, w0, &gu, &gs1);
  g = up_[3].backward(gu);
  g = dec_[4].backward(dec_[5].backward(g));
  nn::split_channels(g, w1, &gu, &gs2);
  g = up_[2].backward(gu);
  g = dec_[2].backward(dec_[3].backward(g));
  nn::split_channels(g, w2, &gu, &gs3);
  g = up_[1].backward(gu);
  g = dec_[0].backward(dec_[1].backward(g));
  nn::split_channels(g, w3, &gu, &gs4);
  g = up_[0].backward(gu);

  g = pool_[3].backward(g);
  g += gs4;
  g = enc_[6].backward(enc_[7].backward(g));
  g = pool_[2].backward(g);
  g += gs3;
  g = enc_[4].backward(enc_[5].backward(g));
  g = pool_[1].backward(g);
  g += gs2;
  g = enc_[2].backward(enc_[3].backward(g));
  g = pool_[0].backward(g);
  g += gs1;
  g = enc_[0].backward(enc_[1].backward(g));

  // strip the condition-plane gradients
  Tensor dx, dcond;
  nn::split_channels(g, kSignChannels, &dx, &dcond);
  return dx;
}

std::vector<nn::ParamPtr> Generator::params() const {
  std::vector<nn::ParamPtr> out;
  for (const auto& u : enc_) u.collect(out);
  for (const auto& u : up_) u.collect(out);
  for (const auto& u : dec_) u.collect(out);
  head_.collect(out);
  return out;
}

Checkpoint Generator::to_checkpoint() const {
  Checkpoint ck;
  ck.header["kind"] = "generator";
  ck.header["stage_widths"] = cfg_.stage_widths;
  ck.header["patterns"] = cfg_.patterns;
  ck.header["init_seed"] = cfg_.init_seed;
  for (const nn::ParamPtr& p : params()) ck.add(p->name, p->value);
  auto add_stats = [&ck](const nn::ConvBnRelu& u) {
    ck.add(u.name() + ".bn.run_mean", u.bn().running_mean());
    ck.add(u.name() + ".bn.run_var", u.bn().running_var());
  };
  for (const auto& u : enc_) add_stats(u);
  for (const auto& u : dec_) add_stats(u);
  return ck;
}

Generator Generator::from_checkpoint(const Checkpoint& ck) {
  if (ck.header.at("kind").get<std::string>() != "generator")
    throw std::runtime_error("checkpoint is not a generator");
  GeneratorConfig cfg;
  cfg.stage_widths = ck.header.at("stage_widths").get<std::vector<int>>();
  cfg.patterns = ck.header.at("patterns").get<int>();
  cfg.init_seed = ck.header.at("init_seed").get<uint64_t>();
  Generator g(cfg);
  for (const nn::ParamPtr& p : g.params()) {
    const Tensor& stored = ck.blob(p->name);
    if (!stored.same_shape(p->value))
      throw std::runtime_error("checkpoint: shape mismatch for " + p->name);
    p->value = stored;
  }
  auto load_stats = [&ck](nn::ConvBnRelu& u) {
    u.bn().running_mean() = ck.blob(u.name() + ".bn.run_mean");
    u.bn().running_var() = ck.blob(u.name() + ".bn.run_var");
  };
  for (auto& u : g.enc_) load_stats(u);
  for (auto& u : g.dec_) load_stats(u);
  return g;
}

PerturbationNoise unet_forward(Generator& g, const SignImage& x, int condition_id) {
  require_canonical(x, "unet_forward");
  if (condition_id < 0 || condition_id >= g.patterns())
    throw std::invalid_argument("unet_forward: condition id out of range");
  Tensor batch({1, kSignChannels, kSignSize, kSignSize});
  std::copy(x.data(), x.data() + x.size(), batch.data());
  Tensor noise = g.forward_batch(batch, {condition_id}, /*train=*/false);
  return PerturbationNoise{noise.reshaped({kSignChannels, kSignSize, kSignSize}), condition_id};
}

SignImage contaminate(const SignImage& x, const Tensor& noise, const mask_lab::BinaryMask& mask) {
  require_canonical(x, "contaminate");
  if (!noise.same_shape(x)) throw std::invalid_argument("contaminate: noise shape mismatch");
  if (mask.bits.rank() != 2 || mask.bits.dim(0) != kSignSize || mask.bits.dim(1) != kSignSize)
    throw std::invalid_argument("contaminate: mask shape mismatch");
  SignImage out = x;
  for (int c = 0; c < kSignChannels; ++c)
    for (int y = 0; y < kSignSize; ++y)
      for (int xx = 0; xx < kSignSize; ++xx)
        if (mask.bits(y, xx) > 0.5)
          out(c, y, xx) = std::clamp(x(c, y, xx) + noise(c, y, xx), 0.0, 1.0);
  return out;
}

namespace {

// Pre-clamp values are cached so the clamp subgradient can gate the backward pass.
struct ContaminatedBatch {
  Tensor images;  // clamped adversarial images
  Tensor pre;     // x + noise*mask before clamping
};

ContaminatedBatch contaminate_rows(const Tensor& x_rows, const Tensor& noise,
                                   const std::vector<const mask_lab::BinaryMask*>& masks) {
  ContaminatedBatch out;
  out.images = x_rows;
  out.pre = x_rows;
  const int n = x_rows.dim(0);
  for (int i = 0; i < n; ++i) {
    const Tensor& bits = masks[static_cast<size_t>(i)]->bits;
    for (int c = 0; c < kSignChannels; ++c)
      for (int y = 0; y < kSignSize; ++y)
        for (int xx = 0; xx < kSignSize; ++xx)
          if (bits(y, xx) > 0.5) {
            const double v = x_rows(i, c, y, xx) + noise(i, c, y, xx);
            out.pre(i, c, y, xx) = v;
            out.images(i, c, y, xx) = std::clamp(v, 0.0, 1.0);
          }
  }
  return out;
}

}  // namespace

GeneratorLoss generator_loss(tsr_classifier::Classifier& c,
                             const std::vector<std::pair<SignImage, int>>& batch, Generator& g,
                             const std::vector<mask_lab::BinaryMask>& masks, double alpha,
                             double beta, bool accumulate_grads, Rng* mask_rng, bool train_mode) {
  if (!c.frozen())
    throw std::logic_error("generator_loss: classifier must be frozen");
  if (batch.empty()) throw std::invalid_argument("generator_loss: empty batch");
  if (masks.empty()) throw std::invalid_argument("generator_loss: no masks");
  const int p = g.patterns();
  if (beta > 0.0 && p < 2)
    throw std::invalid_argument("generator_loss: diversity term needs at least 2 pattern slots");

  const int n = static_cast<int>(batch.size());
  const int rows = n * p;
  const long hw = static_cast<long>(kSignSize) * kSignSize;
  const long d = static_cast<long>(kSignChannels) * hw;

  // every sample is replicated once per condition slot
  Tensor x_rows({rows, kSignChannels, kSignSize, kSignSize});
  std::vector<int> conds(static_cast<size_t>(rows));
  std::vector<int> labels(static_cast<size_t>(rows));
  std::vector<const mask_lab::BinaryMask*> row_masks(static_cast<size_t>(rows));
  for (int i = 0; i < n; ++i) {
    require_canonical(batch[static_cast<size_t>(i)].first, "generator_loss");
    for (int s = 0; s < p; ++s) {
      const int r = i * p + s;
      const SignImage& img = batch[static_cast<size_t>(i)].first;
      std::copy(img.data(), img.data() + img.size(), &x_rows(r, 0, 0, 0));
      conds[static_cast<size_t>(r)] = s;
      labels[static_cast<size_t>(r)] = batch[static_cast<size_t>(i)].second;
      const size_t mi = mask_rng != nullptr
                            ? static_cast<size_t>(mask_rng->uniform_int(static_cast<int>(masks.size())))
                            : static_cast<size_t>(r) % masks.size();
      row_masks[static_cast<size_t>(r)] = &masks[mi];
    }
  }

  Tensor noise = g.forward_batch(x_rows, conds, train_mode);
  ContaminatedBatch adv = contaminate_rows(x_rows, noise, row_masks);

  GeneratorLoss loss;
  loss.alpha = alpha;
  loss.beta = beta;

  nn::zero_grads(c.params());
  Tensor dlogits;
  Tensor logits = c.forward_logits(adv.images, /*train=*/false);
  loss.l2 = nn::softmax_cross_entropy(logits, labels, &dlogits);

  // diversity: mean over samples of mean pairwise MAE across the P slots
  Tensor dnoise(noise.shape());
  if (p >= 2) {
    const double pair_count = static_cast<double>(p) * (p - 1) / 2.0;
    double total_div = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int p1 = 0; p1 < p; ++p1) {
        for (int p2 = p1 + 1; p2 < p; ++p2) {
          const double* a = &noise(i * p + p1, 0, 0, 0);
          const double* b = &noise(i * p + p2, 0, 0, 0);
          double mae = 0.0;
          for (long k = 0; k < d; ++k) mae += std::abs(a[k] - b[k]);
          total_div += mae / static_cast<double>(d);
        }
      }
    }
    loss.l3 = total_div / (pair_count * n);
    if (accumulate_grads && beta != 0.0) {
      const double scale = beta / (pair_count * n * static_cast<double>(d));
      for (int i = 0; i < n; ++i) {
        for (int p1 = 0; p1 < p; ++p1) {
          for (int p2 = p1 + 1; p2 < p; ++p2) {
            const double* a = &noise(i * p + p1, 0, 0, 0);
            const double* b = &noise(i * p + p2, 0, 0, 0);
            double* da = &dnoise(i * p + p1, 0, 0, 0);
            double* db = &dnoise(i * p + p2, 0, 0, 0);
            for (long k = 0; k < d; ++k) {
              const double s = a[k] > b[k] ? scale : (a[k] < b[k] ? -scale : 0.0);
              da[k] += s;
              db[k] -= s;
            }
          }
        }
      }
    }
  }

  if (accumulate_grads) {
    // d(alpha*l2)/d(noise): through the classifier input, the clamp gate and the mask
    Tensor dadv = c.backward_to_input(dlogits);
    nn::zero_grads(c.params());  // the frozen classifier never consumes its grads
    for (int r = 0; r < rows; ++r) {
      const Tensor& bits = row_masks[static_cast<size_t>(r)]->bits;
      for (int ch = 0; ch < kSignChannels; ++ch)
        for (int y = 0; y < kSignSize; ++y)
          for (int xx = 0; xx < kSignSize; ++xx) {
            if (bits(y, xx) <= 0.5) continue;
            const double pre = adv.pre(r, ch, y, xx);
            if (pre > 0.0 && pre < 1.0) dnoise(r, ch, y, xx) += alpha * dadv(r, ch, y, xx);
          }
    }
    g.backward(dnoise);
  }
  return loss;
}

GenTrainLog train_generator(Generator& g, tsr_classifier::Classifier& c,
                            const sign_data::Dataset& d,
                            const std::vector<mask_lab::BinaryMask>& masks,
                            const GenTrainConfig& cfg) {
  if (!c.frozen())
    throw std::logic_error("train_generator: refusing to train against an unfrozen classifier");
  if (d.train.empty()) throw std::invalid_argument("train_generator: empty train split");
  const uint64_t class_hash_before = c.param_hash();

  auto params = g.params();
  nn::Adam opt;
  opt.lr = cfg.lr;
  Rng order_rng(mix_seed(cfg.seed, 0x9e04de4));
  Rng mask_rng(mix_seed(cfg.seed, 0x3a5c));

  std::vector<size_t> idx(d.train.size());
  std::iota(idx.begin(), idx.end(), 0);
  GenTrainLog log;
  long steps = 0;
  bool done = false;
  for (int epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    order_rng.shuffle(idx);
    double et = 0.0, e2 = 0.0, e3 = 0.0;
    long nb = 0;
    for (size_t start = 0; start < idx.size() && !done; start += static_cast<size_t>(cfg.batch)) {
      const int bn = static_cast<int>(std::min<size_t>(cfg.batch, idx.size() - start));
      std::vector<std::pair<SignImage, int>> batch;
      batch.reserve(static_cast<size_t>(bn));
      for (int i = 0; i < bn; ++i) {
        const auto& s = d.train[idx[start + static_cast<size_t>(i)]];
        batch.emplace_back(s.image, s.label);
      }
      nn::zero_grads(params);
      const double beta = steps < cfg.beta_warmup_steps ? 0.0 : cfg.beta;
      GeneratorLoss l = generator_loss(c, batch, g, masks, cfg.alpha, beta,
                                       /*accumulate_grads=*/true, &mask_rng, /*train_mode=*/true);
      // ascend the objective: descend its negation
      for (const nn::ParamPtr& p : params)
        for (long k = 0; k < p->grad.size(); ++k) p->grad[k] = -p->grad[k];
      opt.step(params);
      et += l.total();
      e2 += l.l2;
      e3 += l.l3;
      ++nb;
      ++steps;
      if (cfg.max_steps > 0 && steps >= cfg.max_steps) done = true;
    }
    if (nb > 0) {
      log.per_epoch_total.push_back(et / static_cast<double>(nb));
      log.per_epoch_l2.push_back(e2 / static_cast<double>(nb));
      log.per_epoch_l3.push_back(e3 / static_cast<double>(nb));
    }
  }
  if (c.param_hash() != class_hash_before)
    throw std::logic_error("train_generator: frozen classifier parameters changed");
  return log;
}

}  // namespace safesign::patch_forge
