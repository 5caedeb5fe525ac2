#include "safesign/reconstructor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace safesign::reconstructor {

namespace {

constexpr long kHw = static_cast<long>(kSignSize) * kSignSize;
constexpr long kPix = static_cast<long>(kSignChannels) * kHw;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

// ---------------------------------------------------------------------------
// SqueezeExcite

SqueezeExcite::SqueezeExcite(const std::string& name, Rng& rng)
    : fc1_(name + ".fc1", kSignChannels, 16, rng),
      fc2_(name + ".fc2", 16, 16, rng),
      fc3_(name + ".fc3", 16, kSignChannels, rng) {}

std::vector<double> squeeze_descriptor(const Tensor& features) {
  require(features.rank() == 3, "squeeze_descriptor: expects (C,H,W)");
  const int c = features.dim(0);
  const long hw = static_cast<long>(features.dim(1)) * features.dim(2);
  std::vector<double> out(static_cast<size_t>(c));
  for (int i = 0; i < c; ++i)
    out[static_cast<size_t>(i)] = pairwise_sum(&features(i, 0, 0), hw) / static_cast<double>(hw);
  return out;
}

Tensor SqueezeExcite::forward(const Tensor& x, bool train) {
  require(x.rank() == 4 && x.dim(1) == kSignChannels, "SqueezeExcite: expects (N,3,H,W)");
  x_ = x;
  const int n = x.dim(0);
  const long hw = static_cast<long>(x.dim(2)) * x.dim(3);

  if (unit_excitation_) {
    weights_ = Tensor::full({n, kSignChannels}, 1.0);
    return x;
  }

  Tensor s({n, kSignChannels});
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < kSignChannels; ++c)
      s(i, c) = pairwise_sum(&x(i, c, 0, 0), hw) / static_cast<double>(hw);

  Tensor h = r1_.forward(fc1_.forward(s));
  h = r2_.forward(fc2_.forward(h));
  weights_ = sig_.forward(fc3_.forward(h));

  Tensor y(x.shape());
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < kSignChannels; ++c) {
      const double w = weights_(i, c);
      const double* src = &x(i, c, 0, 0);
      double* dst = &y(i, c, 0, 0);
      for (long k = 0; k < hw; ++k) dst[k] = src[k] * w;
    }
  (void)train;
  return y;
}

Tensor SqueezeExcite::backward(const Tensor& gout) {
  const int n = x_.dim(0);
  const long hw = static_cast<long>(x_.dim(2)) * x_.dim(3);
  if (unit_excitation_) return gout;

  Tensor dx(x_.shape());
  Tensor dw({n, kSignChannels});
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < kSignChannels; ++c) {
      const double w = weights_(i, c);
      const double* g = &gout(i, c, 0, 0);
      const double* src = &x_(i, c, 0, 0);
      double* d = &dx(i, c, 0, 0);
      double acc = 0.0;
      for (long k = 0; k < hw; ++k) {
        d[k] = g[k] * w;
        acc += g[k] * src[k];
      }
      dw(i, c) = acc;
    }

  Tensor ds = fc1_.backward(r1_.backward(fc2_.backward(r2_.backward(fc3_.backward(sig_.backward(dw))))));
  const double inv_hw = 1.0 / static_cast<double>(hw);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < kSignChannels; ++c) {
      const double add = ds(i, c) * inv_hw;
      double* d = &dx(i, c, 0, 0);
      for (long k = 0; k < hw; ++k) d[k] += add;
    }
  return dx;
}

void SqueezeExcite::collect(std::vector<nn::ParamPtr>& out) const {
  fc1_.collect(out);
  fc2_.collect(out);
  fc3_.collect(out);
}

// ---------------------------------------------------------------------------
// Reconstructor

struct Reconstructor::AttnCache {
  int r = 0;
  bool attention = true;
  Tensor feats;    // (r,3,HW)
  Tensor q, k, v;  // (r,d,HW)
  Tensor a;        // (r,r,HW)
};

Reconstructor::Reconstructor(ReconConfig cfg)
    : cfg_(std::move(cfg)),
      init_rng_(mix_seed(cfg_.init_seed, 0x4ec0415)),
      head_("head", cfg_.attn_dim, kSignChannels, 1, init_rng_) {
  require(cfg_.min_views >= 2 && cfg_.max_views >= cfg_.min_views && cfg_.max_views <= 10,
          "Reconstructor: supported view range is [2,10]");
  const int copies = cfg_.shared_weights ? 1 : cfg_.fixed_views;
  require(copies >= 1, "Reconstructor: fixed_views must be >= 1 for per-view weights");
  const int h = cfg_.extractor_hidden;
  for (int i = 0; i < copies; ++i) {
    const std::string tag = cfg_.shared_weights ? std::string() : "." + std::to_string(i);
    ext1_.emplace_back("ext1" + tag, kSignChannels, h, init_rng_);
    ext2_.emplace_back("ext2" + tag, h, h, init_rng_);
    ext3_.emplace_back("ext3" + tag, h, kSignChannels, init_rng_);
    se_.emplace_back("se" + tag, init_rng_);
    wq_.push_back(std::make_shared<nn::Param>(
        "wq" + tag, nn::xavier_uniform({kSignChannels, cfg_.attn_dim}, kSignChannels, cfg_.attn_dim, init_rng_)));
    wk_.push_back(std::make_shared<nn::Param>(
        "wk" + tag, nn::xavier_uniform({kSignChannels, cfg_.attn_dim}, kSignChannels, cfg_.attn_dim, init_rng_)));
    wv_.push_back(std::make_shared<nn::Param>(
        "wv" + tag, nn::xavier_uniform({kSignChannels, cfg_.attn_dim}, kSignChannels, cfg_.attn_dim, init_rng_)));
  }
}

Tensor Reconstructor::extract(const Tensor& views, const std::vector<int>& view_counts, bool train) {
  if (cfg_.shared_weights) {
    Tensor h = ext1_[0].forward(views, train);
    h = ext2_[0].forward(h, train);
    h = ext3_[0].forward(h, train);
    return se_[0].forward(h, train);
  }
  // untied weights: route view v of every group through its own extractor
  const int b = static_cast<int>(view_counts.size());
  const int r = cfg_.fixed_views;
  for (int count : view_counts)
    require(count == r, "Reconstructor: per-view weights need exactly fixed_views views");
  Tensor out(views.shape());
  for (int v = 0; v < r; ++v) {
    Tensor col({b, kSignChannels, kSignSize, kSignSize});
    for (int g = 0; g < b; ++g)
      std::copy(&views(g * r + v, 0, 0, 0), &views(g * r + v, 0, 0, 0) + kPix, &col(g, 0, 0, 0));
    Tensor h = ext1_[static_cast<size_t>(v)].forward(col, train);
    h = ext2_[static_cast<size_t>(v)].forward(h, train);
    h = ext3_[static_cast<size_t>(v)].forward(h, train);
    h = se_[static_cast<size_t>(v)].forward(h, train);
    for (int g = 0; g < b; ++g)
      std::copy(&h(g, 0, 0, 0), &h(g, 0, 0, 0) + kPix, &out(g * r + v, 0, 0, 0));
  }
  return out;
}

Tensor Reconstructor::extract_backward(const Tensor& g) {
  if (cfg_.shared_weights) {
    Tensor d = se_[0].backward(g);
    d = ext3_[0].backward(d);
    d = ext2_[0].backward(d);
    return ext1_[0].backward(d);
  }
  const int r = cfg_.fixed_views;
  const int b = g.dim(0) / r;
  Tensor out(g.shape());
  for (int v = 0; v < r; ++v) {
    Tensor col({b, kSignChannels, kSignSize, kSignSize});
    for (int gi = 0; gi < b; ++gi)
      std::copy(&g(gi * r + v, 0, 0, 0), &g(gi * r + v, 0, 0, 0) + kPix, &col(gi, 0, 0, 0));
    Tensor d = se_[static_cast<size_t>(v)].backward(col);
    d = ext3_[static_cast<size_t>(v)].backward(d);
    d = ext2_[static_cast<size_t>(v)].backward(d);
    d = ext1_[static_cast<size_t>(v)].backward(d);
    for (int gi = 0; gi < b; ++gi)
      std::copy(&d(gi, 0, 0, 0), &d(gi, 0, 0, 0) + kPix, &out(gi * r + v, 0, 0, 0));
  }
  return out;
}

Tensor Reconstructor::attend_group(const Tensor& feats, int r, AttnCache* cache,
                                   Tensor* attn_weights, bool use_per_view, int base_view) const {
  const int d = cfg_.attn_dim;
  Tensor q({r, d, static_cast<int>(kHw)});
  Tensor k({r, d, static_cast<int>(kHw)});
  Tensor v({r, d, static_cast<int>(kHw)});
  for (int s = 0; s < r; ++s) {
    const int wi = use_per_view ? base_view + s : 0;
    ConstMatMap f(&feats(s, 0, 0), kSignChannels, kHw);
    MatMap(&q(s, 0, 0), d, kHw).noalias() =
        wq_[static_cast<size_t>(wi)]->value.as_matrix(kSignChannels, d).transpose() * f;
    MatMap(&k(s, 0, 0), d, kHw).noalias() =
        wk_[static_cast<size_t>(wi)]->value.as_matrix(kSignChannels, d).transpose() * f;
    MatMap(&v(s, 0, 0), d, kHw).noalias() =
        wv_[static_cast<size_t>(wi)]->value.as_matrix(kSignChannels, d).transpose() * f;
  }

  Tensor merged({d, static_cast<int>(kHw)});
  Tensor a;
  if (cfg_.attention) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    a = Tensor({r, r, static_cast<int>(kHw)});
    std::vector<double> scores(static_cast<size_t>(r));
    for (long pos = 0; pos < kHw; ++pos) {
      for (int rq = 0; rq < r; ++rq) {
        double mx = -1e300;
        for (int rk = 0; rk < r; ++rk) {
          double dot = 0.0;
          for (int dd = 0; dd < d; ++dd)
            dot += q(rq, dd, static_cast<int>(pos)) * k(rk, dd, static_cast<int>(pos));
          scores[static_cast<size_t>(rk)] = dot * inv_sqrt_d;
          mx = std::max(mx, scores[static_cast<size_t>(rk)]);
        }
        double z = 0.0;
        for (int rk = 0; rk < r; ++rk) {
          scores[static_cast<size_t>(rk)] = std::exp(scores[static_cast<size_t>(rk)] - mx);
          z += scores[static_cast<size_t>(rk)];
        }
        for (int rk = 0; rk < r; ++rk)
          a(rq, rk, static_cast<int>(pos)) = scores[static_cast<size_t>(rk)] / z;
      }
      // heads merged by pixel-wise addition across query views
      const double head_scale = cfg_.merge == HeadMerge::Mean ? 1.0 / r : 1.0;
      for (int dd = 0; dd < d; ++dd) {
        double acc = 0.0;
        for (int rq = 0; rq < r; ++rq)
          for (int rk = 0; rk < r; ++rk)
            acc += a(rq, rk, static_cast<int>(pos)) * v(rk, dd, static_cast<int>(pos));
        merged(dd, static_cast<int>(pos)) = acc * head_scale;
      }
    }
  } else {
    // fusion baseline: plain per-position mean of the projected views
    for (int dd = 0; dd < d; ++dd)
      for (long pos = 0; pos < kHw; ++pos) {
        double acc = 0.0;
        for (int s = 0; s < r; ++s) acc += v(s, dd, static_cast<int>(pos));
        merged(dd, static_cast<int>(pos)) = acc / r;
      }
  }

  if (attn_weights != nullptr) {
    if (cfg_.attention) *attn_weights = a;
    else *attn_weights = Tensor::full({r, r, static_cast<int>(kHw)}, 1.0 / r);
  }
  if (cache != nullptr) {
    cache->r = r;
    cache->attention = cfg_.attention;
    cache->feats = feats;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->a = std::move(a);
  }
  return merged;
}

void Reconstructor::attend_group_backward(const Tensor& dmerged, AttnCache& cache, Tensor& dfeats,
                                          bool use_per_view, int base_view) {
  const int r = cache.r;
  const int d = cfg_.attn_dim;
  Tensor dq({r, d, static_cast<int>(kHw)});
  Tensor dk({r, d, static_cast<int>(kHw)});
  Tensor dv({r, d, static_cast<int>(kHw)});

  if (cache.attention) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double head_scale = cfg_.merge == HeadMerge::Mean ? 1.0 / r : 1.0;
    std::vector<double> da(static_cast<size_t>(r));
    for (long pos = 0; pos < kHw; ++pos) {
      const int p = static_cast<int>(pos);
      for (int rq = 0; rq < r; ++rq) {
        // dO_rq = dmerged * head_scale
        double dot = 0.0;
        for (int rk = 0; rk < r; ++rk) {
          double acc = 0.0;
          for (int dd = 0; dd < d; ++dd) acc += dmerged(dd, p) * head_scale * cache.v(rk, dd, p);
          da[static_cast<size_t>(rk)] = acc;
          dot += cache.a(rq, rk, p) * acc;
        }
        for (int rk = 0; rk < r; ++rk) {
          const double ds = cache.a(rq, rk, p) * (da[static_cast<size_t>(rk)] - dot);
          const double dsv = ds * inv_sqrt_d;
          for (int dd = 0; dd < d; ++dd) {
            dq(rq, dd, p) += dsv * cache.k(rk, dd, p);
            dk(rk, dd, p) += dsv * cache.q(rq, dd, p);
            dv(rk, dd, p) += cache.a(rq, rk, p) * dmerged(dd, p) * head_scale;
          }
        }
      }
    }
  } else {
    for (int s = 0; s < r; ++s)
      for (int dd = 0; dd < d; ++dd)
        for (long pos = 0; pos < kHw; ++pos)
          dv(s, dd, static_cast<int>(pos)) = dmerged(dd, static_cast<int>(pos)) / r;
  }

  for (int s = 0; s < r; ++s) {
    const int wi = use_per_view ? base_view + s : 0;
    ConstMatMap f(&cache.feats(s, 0, 0), kSignChannels, kHw);
    ConstMatMap dqm(&dq(s, 0, 0), d, kHw);
    ConstMatMap dkm(&dk(s, 0, 0), d, kHw);
    ConstMatMap dvm(&dv(s, 0, 0), d, kHw);
    wq_[static_cast<size_t>(wi)]->grad.as_matrix(kSignChannels, d).noalias() += f * dqm.transpose();
    wk_[static_cast<size_t>(wi)]->grad.as_matrix(kSignChannels, d).noalias() += f * dkm.transpose();
    wv_[static_cast<size_t>(wi)]->grad.as_matrix(kSignChannels, d).noalias() += f * dvm.transpose();
    MatMap df(&dfeats(s, 0, 0), kSignChannels, kHw);
    df.noalias() += wq_[static_cast<size_t>(wi)]->value.as_matrix(kSignChannels, d) * dqm;
    df.noalias() += wk_[static_cast<size_t>(wi)]->value.as_matrix(kSignChannels, d) * dkm;
    df.noalias() += wv_[static_cast<size_t>(wi)]->value.as_matrix(kSignChannels, d) * dvm;
  }
}

Tensor Reconstructor::forward_groups(const Tensor& views, const std::vector<int>& view_counts,
                                     bool train) {
  require(views.rank() == 4 && views.dim(1) == kSignChannels && views.dim(2) == kSignSize &&
              views.dim(3) == kSignSize,
          "Reconstructor: views must be (T,3,64,64)");
  const int b = static_cast<int>(view_counts.size());
  long total = 0;
  for (int c : view_counts) {
    require(c >= cfg_.min_views && c <= cfg_.max_views,
            "Reconstructor: view count outside the supported range");
    total += c;
  }
  require(total == views.dim(0), "Reconstructor: view rows do not match view_counts");

  feats_cache_ = extract(views, view_counts, train);
  view_counts_ = view_counts;
  attn_caches_.clear();

  Tensor merged_batch({b, cfg_.attn_dim, kSignSize, kSignSize});
  long offset = 0;
  for (int g = 0; g < b; ++g) {
    const int r = view_counts[static_cast<size_t>(g)];
    Tensor feats({r, kSignChannels, static_cast<int>(kHw)});
    std::copy(&feats_cache_(static_cast<int>(offset), 0, 0, 0),
              &feats_cache_(static_cast<int>(offset), 0, 0, 0) + static_cast<long>(r) * kPix,
              feats.data());
    auto cache = std::make_shared<AttnCache>();
    Tensor merged = attend_group(feats, r, cache.get(), nullptr, !cfg_.shared_weights, 0);
    std::copy(merged.data(), merged.data() + merged.size(), &merged_batch(g, 0, 0, 0));
    attn_caches_.push_back(std::move(cache));
    offset += r;
  }
  return out_sig_.forward(head_.forward(merged_batch));
}

Tensor Reconstructor::backward_groups(const Tensor& dout) {
  Tensor dmerged_batch = head_.backward(out_sig_.backward(dout));
  const int b = static_cast<int>(view_counts_.size());
  Tensor dfeats_rows(feats_cache_.shape());
  long offset = 0;
  for (int g = 0; g < b; ++g) {
    const int r = view_counts_[static_cast<size_t>(g)];
    Tensor dmerged({cfg_.attn_dim, static_cast<int>(kHw)});
    std::copy(&dmerged_batch(g, 0, 0, 0), &dmerged_batch(g, 0, 0, 0) + dmerged.size(), dmerged.data());
    Tensor dfeats({r, kSignChannels, static_cast<int>(kHw)});
    attend_group_backward(dmerged, *attn_caches_[static_cast<size_t>(g)], dfeats,
                          !cfg_.shared_weights, 0);
    std::copy(dfeats.data(), dfeats.data() + dfeats.size(),
              &dfeats_rows(static_cast<int>(offset), 0, 0, 0));
    offset += r;
  }
  return extract_backward(dfeats_rows);
}

SignImage Reconstructor::repair(const MultiViewInput& mv) {
  const int r = static_cast<int>(mv.views.size());
  require(r >= cfg_.min_views && r <= cfg_.max_views,
          "repair: view count outside the configured range");
  if (!cfg_.shared_weights)
    require(r == cfg_.fixed_views, "repair: per-view weights require exactly fixed_views views");
  Tensor stacked({r, kSignChannels, kSignSize, kSignSize});
  for (int i = 0; i < r; ++i) {
    require_canonical(mv.views[static_cast<size_t>(i)], "repair");
    std::copy(mv.views[static_cast<size_t>(i)].data(),
              mv.views[static_cast<size_t>(i)].data() + kPix, &stacked(i, 0, 0, 0));
  }
  Tensor out = forward_groups(stacked, {r}, /*train=*/false);
  return out.reshaped({kSignChannels, kSignSize, kSignSize});
}

Tensor Reconstructor::se_recalibrate(const Tensor& features, bool unit_excitation) {
  require(features.rank() == 3 && features.dim(0) == kSignChannels,
          "se_recalibrate: expects a (3,H,W) feature map");
  Tensor batch({1, kSignChannels, features.dim(1), features.dim(2)});
  std::copy(features.data(), features.data() + features.size(), batch.data());
  se_[0].set_unit_excitation(unit_excitation);
  Tensor y = se_[0].forward(batch, /*train=*/false);
  se_[0].set_unit_excitation(false);
  return y.reshaped(features.shape());
}

SignImage Reconstructor::fuse_views(const Tensor& per_view_features, Tensor* attn_weights) {
  require(per_view_features.rank() == 4 && per_view_features.dim(1) == kSignChannels &&
              per_view_features.dim(2) == kSignSize && per_view_features.dim(3) == kSignSize,
          "fuse_views: expects (R,3,64,64)");
  const int r = per_view_features.dim(0);
  if (r < 2)
    throw std::invalid_argument("fuse_views: attention over a single view is degenerate (R >= 2)");
  if (!cfg_.shared_weights)
    require(r == cfg_.fixed_views, "fuse_views: per-view weights require exactly fixed_views views");
  Tensor feats = per_view_features.reshaped({r, kSignChannels, static_cast<int>(kHw)});
  Tensor merged = attend_group(feats, r, nullptr, attn_weights, !cfg_.shared_weights, 0);
  Tensor mb({1, cfg_.attn_dim, kSignSize, kSignSize});
  std::copy(merged.data(), merged.data() + merged.size(), mb.data());
  Tensor out = out_sig_.forward(head_.forward(mb));
  return out.reshaped({kSignChannels, kSignSize, kSignSize});
}

std::vector<nn::ParamPtr> Reconstructor::params() const {
  std::vector<nn::ParamPtr> out;
  for (size_t i = 0; i < ext1_.size(); ++i) {
    ext1_[i].collect(out);
    ext2_[i].collect(out);
    ext3_[i].collect(out);
    se_[i].collect(out);
    out.push_back(wq_[i]);
    out.push_back(wk_[i]);
    out.push_back(wv_[i]);
  }
  head_.collect(out);
  return out;
}

Checkpoint Reconstructor::to_checkpoint() const {
  Checkpoint ck;
  ck.header["kind"] = "reconstructor";
  ck.header["min_views"] = cfg_.min_views;
  ck.header["max_views"] = cfg_.max_views;
  ck.header["extractor_hidden"] = cfg_.extractor_hidden;
  ck.header["attn_dim"] = cfg_.attn_dim;
  ck.header["shared_weights"] = cfg_.shared_weights;
  ck.header["fixed_views"] = cfg_.fixed_views;
  ck.header["attention"] = cfg_.attention;
  ck.header["merge"] = cfg_.merge == HeadMerge::Sum ? "sum" : "mean";
  ck.header["fidelity_weight"] = cfg_.fidelity_weight;
  ck.header["init_seed"] = cfg_.init_seed;
  for (const nn::ParamPtr& p : params()) ck.add(p->name, p->value);
  for (size_t i = 0; i < ext1_.size(); ++i) {
    for (const nn::ConvReluBn* u : {&ext1_[i], &ext2_[i], &ext3_[i]}) {
      ck.add(u->name() + ".bn.run_mean", u->bn().running_mean());
      ck.add(u->name() + ".bn.run_var", u->bn().running_var());
    }
  }
  return ck;
}

Reconstructor Reconstructor::from_checkpoint(const Checkpoint& ck) {
  if (ck.header.at("kind").get<std::string>() != "reconstructor")
    throw std::runtime_error("checkpoint is not a reconstructor");
  ReconConfig cfg;
  cfg.min_views = ck.header.at("min_views").get<int>();
  cfg.max_views = ck.header.at("max_views").get<int>();
  cfg.extractor_hidden = ck.header.at("extractor_hidden").get<int>();
  cfg.attn_dim = ck.header.at("attn_dim").get<int>();
  cfg.shared_weights = ck.header.at("shared_weights").get<bool>();
  cfg.fixed_views = ck.header.at("fixed_views").get<int>();
  cfg.attention = ck.header.at("attention").get<bool>();
  cfg.merge = ck.header.at("merge").get<std::string>() == "sum" ? HeadMerge::Sum : HeadMerge::Mean;
  cfg.fidelity_weight = ck.header.at("fidelity_weight").get<double>();
  cfg.init_seed = ck.header.at("init_seed").get<uint64_t>();
  Reconstructor s(cfg);
  for (const nn::ParamPtr& p : s.params()) {
    const Tensor& stored = ck.blob(p->name);
    if (!stored.same_shape(p->value))
      throw std::runtime_error("checkpoint: shape mismatch for " + p->name);
    p->value = stored;
  }
  for (size_t i = 0; i < s.ext1_.size(); ++i) {
    for (nn::ConvReluBn* u : {&s.ext1_[i], &s.ext2_[i], &s.ext3_[i]}) {
      u->bn().running_mean() = ck.blob(u->name() + ".bn.run_mean");
      u->bn().running_var() = ck.blob(u->name() + ".bn.run_var");
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Multi-view synthesis and training

std::vector<SignImage> synthesize_views(const SignImage& base, int count, const ViewJitter& jitter,
                                        Rng& rng) {
  require_canonical(base, "synthesize_views");
  std::vector<SignImage> views;
  views.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    using namespace sign_data;
    AffineParams rot = affine_rotation_deg(rng.uniform(-jitter.rotation_deg, jitter.rotation_deg));
    AffineParams sc = affine_scale(rng.uniform(jitter.scale_lo, jitter.scale_hi),
                                   rng.uniform(jitter.scale_lo, jitter.scale_hi));
    AffineParams tr = affine_translation(rng.uniform(-jitter.translate_px, jitter.translate_px),
                                         rng.uniform(-jitter.translate_px, jitter.translate_px));
    SignImage v = affine_transform(base, affine_compose(tr, affine_compose(rot, sc)));
    PhotometricParams ph;
    ph.brightness = rng.uniform(jitter.brightness_lo, jitter.brightness_hi);
    ph.saturation = rng.uniform(jitter.saturation_lo, jitter.saturation_hi);
    ph.contrast = rng.uniform(jitter.contrast_lo, jitter.contrast_hi);
    views.push_back(photometric_adjust(v, ph));
  }
  return views;
}

std::vector<SignImage> contaminate_views(const std::vector<SignImage>& views,
                                         patch_forge::Generator& g,
                                         const std::vector<mask_lab::BinaryMask>& masks, Rng& rng) {
  require(!masks.empty(), "contaminate_views: no masks");
  const int r = static_cast<int>(views.size());
  Tensor batch({r, kSignChannels, kSignSize, kSignSize});
  std::vector<int> conds(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    std::copy(views[static_cast<size_t>(i)].data(), views[static_cast<size_t>(i)].data() + kPix,
              &batch(i, 0, 0, 0));
    conds[static_cast<size_t>(i)] = rng.uniform_int(g.patterns());
  }
  Tensor noise = g.forward_batch(batch, conds, /*train=*/false);
  std::vector<SignImage> out;
  out.reserve(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    const auto& mask = masks[static_cast<size_t>(rng.uniform_int(static_cast<int>(masks.size())))];
    Tensor n = Tensor({kSignChannels, kSignSize, kSignSize});
    std::copy(&noise(i, 0, 0, 0), &noise(i, 0, 0, 0) + kPix, n.data());
    out.push_back(patch_forge::contaminate(views[static_cast<size_t>(i)], n, mask));
  }
  return out;
}

ReconTrainLog train_reconstructor(Reconstructor& s, tsr_classifier::Classifier& c,
                                  const sign_data::Dataset& clean, patch_forge::Generator& threat,
                                  const std::vector<mask_lab::BinaryMask>& masks,
                                  const ReconTrainConfig& cfg, const ViewJitter& jitter) {
  if (!c.frozen())
    throw std::logic_error("train_reconstructor: refusing to train against an unfrozen classifier");
  require(!clean.train.empty(), "train_reconstructor: empty train split");
  const uint64_t class_hash_before = c.param_hash();

  std::vector<int> counts = cfg.train_view_counts;
  if (counts.empty()) counts = {cfg.views};
  int max_views = cfg.views;
  for (int v : counts) max_views = std::max(max_views, v);

  // Pre-rendered corpus: max_views clean views plus a contaminated copy of each.
  const size_t n = clean.train.size();
  std::vector<std::vector<SignImage>> clean_views(n), contam_views(n);
  for (size_t i = 0; i < n; ++i) {
    Rng vr(mix_seed(cfg.seed, 0x51e3 + 2 * i));
    Rng cr(mix_seed(cfg.seed, 0x51e4 + 2 * i));
    clean_views[i] = synthesize_views(clean.train[i].image, max_views, jitter, vr);
    contam_views[i] = contaminate_views(clean_views[i], threat, masks, cr);
  }

  struct Item {
    size_t group;
    bool contaminated;
  };
  std::vector<Item> items;
  for (size_t i = 0; i < n; ++i) {
    items.push_back({i, false});
    items.push_back({i, true});
  }

  auto params = s.params();
  nn::Adam opt;
  opt.lr = cfg.lr;
  Rng order_rng(mix_seed(cfg.seed, 0x07de7));
  Rng pick_rng(mix_seed(cfg.seed, 0x619c));

  ReconTrainLog log;
  long steps = 0;
  bool done = false;
  for (int epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    order_rng.shuffle(items);
    double epoch_loss = 0.0;
    long nb = 0;
    for (size_t start = 0; start < items.size() && !done; start += static_cast<size_t>(cfg.group_batch)) {
      const int b = static_cast<int>(std::min<size_t>(cfg.group_batch, items.size() - start));
      std::vector<int> view_counts(static_cast<size_t>(b));
      long rows = 0;
      for (int gi = 0; gi < b; ++gi) {
        view_counts[static_cast<size_t>(gi)] =
            counts[static_cast<size_t>(pick_rng.uniform_int(static_cast<int>(counts.size())))];
        rows += view_counts[static_cast<size_t>(gi)];
      }
      Tensor views({static_cast<int>(rows), kSignChannels, kSignSize, kSignSize});
      std::vector<int> labels(static_cast<size_t>(b));
      std::vector<const SignImage*> bases(static_cast<size_t>(b));
      long row = 0;
      for (int gi = 0; gi < b; ++gi) {
        const Item& it = items[start + static_cast<size_t>(gi)];
        const auto& pool = it.contaminated ? contam_views[it.group] : clean_views[it.group];
        const int r = view_counts[static_cast<size_t>(gi)];
        // a fresh subset of the pre-rendered views per visit
        std::vector<int> order(pool.size());
        std::iota(order.begin(), order.end(), 0);
        pick_rng.shuffle(order);
        for (int vi = 0; vi < r; ++vi) {
          const SignImage& img = pool[static_cast<size_t>(order[static_cast<size_t>(vi)])];
          std::copy(img.data(), img.data() + kPix, &views(static_cast<int>(row++), 0, 0, 0));
        }
        labels[static_cast<size_t>(gi)] = clean.train[it.group].label;
        bases[static_cast<size_t>(gi)] = &clean.train[it.group].image;
      }

      nn::zero_grads(params);
      Tensor out = s.forward_groups(views, view_counts, /*train=*/true);

      nn::zero_grads(c.params());
      Tensor logits = c.forward_logits(out, /*train=*/false);
      Tensor dlogits;
      double loss = nn::softmax_cross_entropy(logits, labels, &dlogits);
      Tensor dout = c.backward_to_input(dlogits);
      nn::zero_grads(c.params());

      if (s.config().fidelity_weight > 0.0) {
        const double w = s.config().fidelity_weight / (static_cast<double>(b) * kPix);
        double fid = 0.0;
        for (int gi = 0; gi < b; ++gi) {
          const SignImage& base = *bases[static_cast<size_t>(gi)];
          for (long k = 0; k < kPix; ++k) {
            const double diff = out[static_cast<long>(gi) * kPix + k] - base[k];
            fid += std::abs(diff);
            dout[static_cast<long>(gi) * kPix + k] += w * (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0));
          }
        }
        loss += s.config().fidelity_weight * fid / (static_cast<double>(b) * kPix);
      }

      s.backward_groups(dout);
      opt.step(params);
      epoch_loss += loss;
      ++nb;
      ++steps;
      if (cfg.max_steps > 0 && steps >= cfg.max_steps) done = true;
    }
    if (nb > 0) log.per_epoch_loss.push_back(epoch_loss / static_cast<double>(nb));
  }
  if (c.param_hash() != class_hash_before)
    throw std::logic_error("train_reconstructor: frozen classifier parameters changed");
  return log;
}

}  // namespace safesign::reconstructor
