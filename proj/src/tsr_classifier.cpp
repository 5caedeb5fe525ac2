#include "safesign/tsr_classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace safesign::tsr_classifier {

Classifier::Classifier(ClassifierConfig cfg)
    : cfg_(std::move(cfg)),
      init_rng_(mix_seed(cfg_.init_seed, 0xC1A551F1E5ull)),
      conv1_("conv1", kSignChannels, cfg_.conv_channels.at(0), 3, init_rng_),
      conv2_("conv2", cfg_.conv_channels.at(0), cfg_.conv_channels.at(1), 3, init_rng_),
      conv3_("conv3", cfg_.conv_channels.at(1), cfg_.conv_channels.at(2), 3, init_rng_),
      fc1_("fc1", cfg_.conv_channels.at(2) * 8 * 8, cfg_.fc_hidden, init_rng_),
      fc2_("fc2", cfg_.fc_hidden, cfg_.classes, init_rng_),
      drop_(cfg_.dropout) {
  if (cfg_.classes < 2) throw std::invalid_argument("Classifier: needs at least 2 classes");
  if (cfg_.conv_channels.size() != 3)
    throw std::invalid_argument("Classifier: expects exactly 3 conv stages");
}

Tensor Classifier::forward_logits(const Tensor& images, bool train, Rng* dropout_rng) {
  if (images.rank() != 4 || images.dim(1) != kSignChannels || images.dim(2) != kSignSize ||
      images.dim(3) != kSignSize)
    throw std::invalid_argument("Classifier: input must be (N,3,64,64)");
  Tensor h = p1_.forward(r1_.forward(conv1_.forward(images)));
  h = p2_.forward(r2_.forward(conv2_.forward(h)));
  h = p3_.forward(r3_.forward(conv3_.forward(h)));
  conv_out_shape_ = h.shape();
  const int n = h.dim(0);
  h = h.reshaped({n, static_cast<int>(h.size() / n)});
  h = drop_.forward(r4_.forward(fc1_.forward(h)), train, dropout_rng);
  return fc2_.forward(h);
}

Tensor Classifier::backward_to_input(const Tensor& dlogits) {
  Tensor g = fc2_.backward(dlogits);
  g = fc1_.backward(r4_.backward(drop_.backward(g)));
  g = g.reshaped(conv_out_shape_);
  g = conv3_.backward(r3_.backward(p3_.backward(g)));
  g = conv2_.backward(r2_.backward(p2_.backward(g)));
  return conv1_.backward(r1_.backward(p1_.backward(g)));
}

std::pair<int, std::vector<double>> Classifier::predict(const SignImage& x) {
  require_canonical(x, "Classifier::predict");
  Tensor batch({1, kSignChannels, kSignSize, kSignSize});
  std::copy(x.data(), x.data() + x.size(), batch.data());
  Tensor logits = forward_logits(batch, /*train=*/false);
  const int m = cfg_.classes;
  std::vector<double> probs(static_cast<size_t>(m));
  double mx = logits(0, 0);
  for (int k = 1; k < m; ++k) mx = std::max(mx, logits(0, k));
  double s = 0.0;
  for (int k = 0; k < m; ++k) {
    probs[static_cast<size_t>(k)] = std::exp(logits(0, k) - mx);
    s += probs[static_cast<size_t>(k)];
  }
  int best = 0;
  for (int k = 0; k < m; ++k) {
    probs[static_cast<size_t>(k)] /= s;
    if (probs[static_cast<size_t>(k)] > probs[static_cast<size_t>(best)]) best = k;
  }
  return {best, probs};
}

std::vector<std::pair<std::string, Tensor>> Classifier::feature_profile(const SignImage& x) {
  if (x.rank() != 3 || x.dim(0) != kSignChannels || x.dim(1) != kSignSize || x.dim(2) != kSignSize)
    throw std::invalid_argument("Classifier::feature_profile: expects a 3x64x64 tensor");
  Tensor batch({1, kSignChannels, kSignSize, kSignSize});
  std::copy(x.data(), x.data() + x.size(), batch.data());

  std::vector<std::pair<std::string, Tensor>> probes;
  Tensor pre1 = conv1_.forward(batch);
  probes.emplace_back("conv1", pre1);
  Tensor h = p1_.forward(r1_.forward(pre1));
  Tensor pre2 = conv2_.forward(h);
  probes.emplace_back("conv2", pre2);
  h = p2_.forward(r2_.forward(pre2));
  Tensor pre3 = conv3_.forward(h);
  probes.emplace_back("conv3", pre3);
  h = p3_.forward(r3_.forward(pre3));
  const int n = h.dim(0);
  h = h.reshaped({n, static_cast<int>(h.size() / n)});
  Tensor pre4 = fc1_.forward(h);
  probes.emplace_back("fc1", pre4);
  Tensor logits = fc2_.forward(r4_.forward(pre4));
  probes.emplace_back("fc2", logits);
  return probes;
}

std::vector<nn::ParamPtr> Classifier::params() const {
  std::vector<nn::ParamPtr> out;
  conv1_.collect(out);
  conv2_.collect(out);
  conv3_.collect(out);
  fc1_.collect(out);
  fc2_.collect(out);
  return out;
}

Checkpoint Classifier::to_checkpoint() const {
  Checkpoint ck;
  ck.header["kind"] = "classifier";
  ck.header["classes"] = cfg_.classes;
  ck.header["conv_channels"] = cfg_.conv_channels;
  ck.header["fc_hidden"] = cfg_.fc_hidden;
  ck.header["dropout"] = cfg_.dropout;
  ck.header["init_seed"] = cfg_.init_seed;
  ck.header["frozen"] = frozen_;
  ck.header["class_names"] = class_names_;
  for (const nn::ParamPtr& p : params()) ck.add(p->name, p->value);
  return ck;
}

Classifier Classifier::from_checkpoint(const Checkpoint& ck) {
  if (ck.header.at("kind").get<std::string>() != "classifier")
    throw std::runtime_error("checkpoint is not a classifier");
  ClassifierConfig cfg;
  cfg.classes = ck.header.at("classes").get<int>();
  cfg.conv_channels = ck.header.at("conv_channels").get<std::vector<int>>();
  cfg.fc_hidden = ck.header.at("fc_hidden").get<int>();
  cfg.dropout = ck.header.at("dropout").get<double>();
  cfg.init_seed = ck.header.at("init_seed").get<uint64_t>();
  Classifier c(cfg);
  for (const nn::ParamPtr& p : c.params()) {
    const Tensor& stored = ck.blob(p->name);
    if (!stored.same_shape(p->value))
      throw std::runtime_error("checkpoint: shape mismatch for " + p->name);
    p->value = stored;
  }
  c.class_names_ = ck.header.value("class_names", std::vector<std::string>{});
  if (ck.header.value("frozen", false)) c.freeze();
  return c;
}

void Classifier::zero_final_layer() {
  require_mutable();
  fc2_.weight()->value.set_zero();
  fc2_.bias()->value.set_zero();
}

void Classifier::require_mutable() const {
  if (frozen_) throw std::logic_error("Classifier is frozen; parameters are immutable");
}

Metrics metrics_from_confusion(const Tensor& confusion) {
  const int m = confusion.dim(0);
  Metrics out;
  out.confusion = confusion;
  double total = 0.0, diag = 0.0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) total += confusion(i, j);
  for (int i = 0; i < m; ++i) diag += confusion(i, i);
  out.accuracy = total > 0 ? diag / total : 0.0;
  out.per_class_precision.assign(static_cast<size_t>(m), 0.0);
  out.precision_defined.assign(static_cast<size_t>(m), false);
  for (int c = 0; c < m; ++c) {
    double col = 0.0;
    for (int i = 0; i < m; ++i) col += confusion(i, c);
    if (col > 0) {
      out.per_class_precision[static_cast<size_t>(c)] = confusion(c, c) / col;
      out.precision_defined[static_cast<size_t>(c)] = true;
    }
  }
  return out;
}

Metrics evaluate(Classifier& c, const std::vector<std::pair<SignImage, int>>& samples) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty sample list");
  const int m = c.classes();
  Tensor confusion({m, m});
  const int batch = 64;
  for (size_t start = 0; start < samples.size(); start += batch) {
    const int n = static_cast<int>(std::min<size_t>(batch, samples.size() - start));
    Tensor images({n, kSignChannels, kSignSize, kSignSize});
    for (int i = 0; i < n; ++i) {
      const SignImage& img = samples[start + static_cast<size_t>(i)].first;
      require_canonical(img, "evaluate");
      std::copy(img.data(), img.data() + img.size(), &images(i, 0, 0, 0));
    }
    Tensor logits = c.forward_logits(images, /*train=*/false);
    for (int i = 0; i < n; ++i) {
      int best = 0;
      for (int k = 1; k < m; ++k)
        if (logits(i, k) > logits(i, best)) best = k;
      const int truth = samples[start + static_cast<size_t>(i)].second;
      if (truth < 0 || truth >= m) throw std::invalid_argument("evaluate: label out of range");
      confusion(truth, best) += 1.0;
    }
  }
  return metrics_from_confusion(confusion);
}

Classifier train_classifier(const sign_data::Dataset& d, const ClassifierConfig& arch,
                            const TrainConfig& tc, std::vector<double>* loss_curve) {
  sign_data::validate_dataset(d);
  if (d.classes() < 2)
    throw std::invalid_argument("train_classifier: degenerate dataset, needs at least 2 classes");
  if (d.train.empty()) throw std::invalid_argument("train_classifier: empty train split");

  ClassifierConfig cfg = arch;
  cfg.classes = d.classes();
  Classifier c(cfg);
  c.set_class_names(d.class_names);
  auto params = c.params();
  nn::Adam opt;
  opt.lr = tc.lr;
  Rng order_rng(mix_seed(tc.seed, 0x0bde7));
  Rng drop_rng(mix_seed(tc.seed, 0xd707));

  std::vector<size_t> idx(d.train.size());
  std::iota(idx.begin(), idx.end(), 0);
  long steps = 0;
  bool done = false;
  for (int epoch = 0; epoch < tc.epochs && !done; ++epoch) {
    order_rng.shuffle(idx);
    double epoch_loss = 0.0;
    long epoch_batches = 0;
    for (size_t start = 0; start < idx.size() && !done; start += static_cast<size_t>(tc.batch)) {
      const int n = static_cast<int>(std::min<size_t>(tc.batch, idx.size() - start));
      Tensor images({n, kSignChannels, kSignSize, kSignSize});
      std::vector<int> labels(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) {
        const auto& s = d.train[idx[start + static_cast<size_t>(i)]];
        std::copy(s.image.data(), s.image.data() + s.image.size(), &images(i, 0, 0, 0));
        labels[static_cast<size_t>(i)] = s.label;
      }
      nn::zero_grads(params);
      Tensor logits = c.forward_logits(images, /*train=*/true, &drop_rng);
      Tensor dlogits;
      epoch_loss += nn::softmax_cross_entropy(logits, labels, &dlogits);
      ++epoch_batches;
      c.backward_to_input(dlogits);
      opt.step(params);
      ++steps;
      if (tc.max_steps > 0 && steps >= tc.max_steps) done = true;
    }
    if (loss_curve != nullptr && epoch_batches > 0)
      loss_curve->push_back(epoch_loss / static_cast<double>(epoch_batches));
  }
  c.freeze();
  return c;
}

std::vector<std::optional<double>> feature_similarity(Classifier& c, const SignImage& a,
                                                      const SignImage& b) {
  auto pa = c.feature_profile(a);
  auto pb = c.feature_profile(b);
  std::vector<std::optional<double>> out;
  for (size_t l = 0; l < pa.size(); ++l) {
    const Tensor& ta = pa[l].second;
    const Tensor& tb = pb[l].second;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (long i = 0; i < ta.size(); ++i) {
      dot += ta[i] * tb[i];
      na += ta[i] * ta[i];
      nb += tb[i] * tb[i];
    }
    if (na == 0.0 || nb == 0.0) {
      out.emplace_back(std::nullopt);  // undefined for zero-norm features
    } else {
      out.emplace_back(dot / (std::sqrt(na) * std::sqrt(nb)));
    }
  }
  return out;
}

Tensor input_gradient(Classifier& c, const SignImage& x, int label) {
  require_canonical(x, "input_gradient");
  Tensor batch({1, kSignChannels, kSignSize, kSignSize});
  std::copy(x.data(), x.data() + x.size(), batch.data());
  nn::zero_grads(c.params());
  Tensor logits = c.forward_logits(batch, /*train=*/false);
  Tensor dlogits;
  nn::softmax_cross_entropy(logits, {label}, &dlogits);
  Tensor dx = c.backward_to_input(dlogits);
  return dx.reshaped({kSignChannels, kSignSize, kSignSize});
}

}  // namespace safesign::tsr_classifier
