#include "safesign/nn.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace safesign::nn {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Gathers one sample of (C,H,W) into an im2col matrix (H*W, C*k*k), zero-padded.
void im2col(const Tensor& x, int n, int k, int pad, MatrixRM& cols) {
  const int C = x.dim(1), H = x.dim(2), W = x.dim(3);
  cols.setZero(static_cast<long>(H) * W, static_cast<long>(C) * k * k);
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const long col = (static_cast<long>(c) * k + ki) * k + kj;
        for (int i = 0; i < H; ++i) {
          const int si = i + ki - pad;
          if (si < 0 || si >= H) continue;
          for (int j = 0; j < W; ++j) {
            const int sj = j + kj - pad;
            if (sj < 0 || sj >= W) continue;
            cols(static_cast<long>(i) * W + j, col) = x(n, c, si, sj);
          }
        }
      }
    }
  }
}

// Scatter-add of an im2col-shaped gradient back onto one sample of dx.
void col2im_add(const MatrixRM& dcols, int n, int k, int pad, Tensor& dx) {
  const int C = dx.dim(1), H = dx.dim(2), W = dx.dim(3);
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const long col = (static_cast<long>(c) * k + ki) * k + kj;
        for (int i = 0; i < H; ++i) {
          const int si = i + ki - pad;
          if (si < 0 || si >= H) continue;
          for (int j = 0; j < W; ++j) {
            const int sj = j + kj - pad;
            if (sj < 0 || sj >= W) continue;
            dx(n, c, si, sj) += dcols(static_cast<long>(i) * W + j, col);
          }
        }
      }
    }
  }
}

}  // namespace

Tensor he_normal(std::vector<int> shape, long fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (long i = 0; i < t.size(); ++i) t[i] = std * rng.normal();
  return t;
}

Tensor xavier_uniform(std::vector<int> shape, long fan_in, long fan_out, Rng& rng) {
  Tensor t(std::move(shape));
  const double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (long i = 0; i < t.size(); ++i) t[i] = rng.uniform(-lim, lim);
  return t;
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int kernel, Rng& rng)
    : in_ch_(in_ch), out_ch_(out_ch), k_(kernel), pad_(kernel / 2) {
  const long fan_in = static_cast<long>(in_ch) * kernel * kernel;
  w_ = std::make_shared<Param>(name + ".w", he_normal({out_ch, in_ch * kernel * kernel}, fan_in, rng));
  b_ = std::make_shared<Param>(name + ".b", Tensor{out_ch});
}

Tensor Conv2d::forward(const Tensor& x) {
  require(x.rank() == 4 && x.dim(1) == in_ch_, "Conv2d: bad input shape");
  x_ = x;
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  Tensor out({N, out_ch_, H, W});
  ConstMatMap wm = w_->value.cmat(out_ch_, static_cast<long>(in_ch_) * k_ * k_);
  MatrixRM cols, om;
  for (int n = 0; n < N; ++n) {
    im2col(x, n, k_, pad_, cols);
    om.noalias() = cols * wm.transpose();  // (H*W, out_ch)
    for (int co = 0; co < out_ch_; ++co) {
      const double bias = b_->value[co];
      double* dst = &out(n, co, 0, 0);
      for (long r = 0; r < om.rows(); ++r) dst[r] = om(r, co) + bias;
    }
  }
  return out;
}

Tensor Conv2d::backward(const Tensor& gout) {
  const int N = x_.dim(0), H = x_.dim(2), W = x_.dim(3);
  require(gout.rank() == 4 && gout.dim(1) == out_ch_, "Conv2d: bad grad shape");
  Tensor dx(x_.shape());
  const long ckk = static_cast<long>(in_ch_) * k_ * k_;
  ConstMatMap wm = w_->value.cmat(out_ch_, ckk);
  MatMap dwm = w_->grad.as_matrix(out_ch_, ckk);
  MatrixRM cols, gm(static_cast<long>(H) * W, out_ch_), dcols;
  for (int n = 0; n < N; ++n) {
    im2col(x_, n, k_, pad_, cols);
    for (int co = 0; co < out_ch_; ++co) {
      const double* src = &gout(n, co, 0, 0);
      double acc = 0.0;
      for (long r = 0; r < gm.rows(); ++r) {
        gm(r, co) = src[r];
        acc += src[r];
      }
      b_->grad[co] += acc;
    }
    dwm.noalias() += gm.transpose() * cols;
    dcols.noalias() = gm * wm;
    col2im_add(dcols, n, k_, pad_, dx);
  }
  return dx;
}

void Conv2d::collect(std::vector<ParamPtr>& out) const {
  out.push_back(w_);
  out.push_back(b_);
}

// ---------------------------------------------------------------------------
// ConvTranspose2x2

ConvTranspose2x2::ConvTranspose2x2(std::string name, int in_ch, int out_ch, Rng& rng)
    : in_ch_(in_ch), out_ch_(out_ch) {
  w_ = std::make_shared<Param>(name + ".w", he_normal({in_ch, out_ch * 4}, in_ch, rng));
  b_ = std::make_shared<Param>(name + ".b", Tensor{out_ch});
}

Tensor ConvTranspose2x2::forward(const Tensor& x) {
  require(x.rank() == 4 && x.dim(1) == in_ch_, "ConvTranspose2x2: bad input shape");
  x_ = x;
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  Tensor out({N, out_ch_, 2 * H, 2 * W});
  ConstMatMap wm = w_->value.cmat(in_ch_, static_cast<long>(out_ch_) * 4);
  MatrixRM xm(static_cast<long>(H) * W, in_ch_), ym;
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < in_ch_; ++c) {
      const double* src = &x(n, c, 0, 0);
      for (long r = 0; r < xm.rows(); ++r) xm(r, c) = src[r];
    }
    ym.noalias() = xm * wm;  // (H*W, out_ch*4)
    for (int co = 0; co < out_ch_; ++co) {
      const double bias = b_->value[co];
      for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
          const long r = static_cast<long>(i) * W + j;
          out(n, co, 2 * i, 2 * j) = ym(r, co * 4 + 0) + bias;
          out(n, co, 2 * i, 2 * j + 1) = ym(r, co * 4 + 1) + bias;
          out(n, co, 2 * i + 1, 2 * j) = ym(r, co * 4 + 2) + bias;
          out(n, co, 2 * i + 1, 2 * j + 1) = ym(r, co * 4 + 3) + bias;
        }
      }
    }
  }
  return out;
}

Tensor ConvTranspose2x2::backward(const Tensor& gout) {
  const int N = x_.dim(0), H = x_.dim(2), W = x_.dim(3);
  Tensor dx(x_.shape());
  ConstMatMap wm = w_->value.cmat(in_ch_, static_cast<long>(out_ch_) * 4);
  MatMap dwm = w_->grad.as_matrix(in_ch_, static_cast<long>(out_ch_) * 4);
  MatrixRM xm(static_cast<long>(H) * W, in_ch_), gm(static_cast<long>(H) * W, static_cast<long>(out_ch_) * 4), dxm;
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < in_ch_; ++c) {
      const double* src = &x_(n, c, 0, 0);
      for (long r = 0; r < xm.rows(); ++r) xm(r, c) = src[r];
    }
    for (int co = 0; co < out_ch_; ++co) {
      double acc = 0.0;
      for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
          const long r = static_cast<long>(i) * W + j;
          gm(r, co * 4 + 0) = gout(n, co, 2 * i, 2 * j);
          gm(r, co * 4 + 1) = gout(n, co, 2 * i, 2 * j + 1);
          gm(r, co * 4 + 2) = gout(n, co, 2 * i + 1, 2 * j);
          gm(r, co * 4 + 3) = gout(n, co, 2 * i + 1, 2 * j + 1);
          acc += gm(r, co * 4) + gm(r, co * 4 + 1) + gm(r, co * 4 + 2) + gm(r, co * 4 + 3);
        }
      }
      b_->grad[co] += acc;
    }
    dwm.noalias() += xm.transpose() * gm;
    dxm.noalias() = gm * wm.transpose();  // (H*W, in_ch)
    for (int c = 0; c < in_ch_; ++c) {
      double* dst = &dx(n, c, 0, 0);
      for (long r = 0; r < dxm.rows(); ++r) dst[r] += dxm(r, c);
    }
  }
  return dx;
}

void ConvTranspose2x2::collect(std::vector<ParamPtr>& out) const {
  out.push_back(w_);
  out.push_back(b_);
}

// ---------------------------------------------------------------------------
// BatchNorm2d

BatchNorm2d::BatchNorm2d(std::string name, int channels) : ch_(channels) {
  gamma_ = std::make_shared<Param>(name + ".gamma", Tensor::full({channels}, 1.0));
  beta_ = std::make_shared<Param>(name + ".beta", Tensor{channels});
  run_mean_ = Tensor{channels};
  run_var_ = Tensor::full({channels}, 1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool train) {
  require(x.rank() == 4 && x.dim(1) == ch_, "BatchNorm2d: bad input shape");
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const long hw = static_cast<long>(H) * W;
  per_ch_ = static_cast<long>(N) * hw;
  Tensor out(x.shape());
  if (train) {
    xhat_ = Tensor(x.shape());
    inv_std_.assign(ch_, 0.0);
    for (int c = 0; c < ch_; ++c) {
      double sum = 0.0, sq = 0.0;
      for (int n = 0; n < N; ++n) {
        const double* p = &x(n, c, 0, 0);
        for (long i = 0; i < hw; ++i) {
          sum += p[i];
          sq += p[i] * p[i];
        }
      }
      const double mean = sum / static_cast<double>(per_ch_);
      const double var = std::max(0.0, sq / static_cast<double>(per_ch_) - mean * mean);
      const double istd = 1.0 / std::sqrt(var + eps_);
      inv_std_[c] = istd;
      run_mean_[c] = (1.0 - momentum_) * run_mean_[c] + momentum_ * mean;
      run_var_[c] = (1.0 - momentum_) * run_var_[c] + momentum_ * var;
      const double g = gamma_->value[c], b = beta_->value[c];
      for (int n = 0; n < N; ++n) {
        const double* p = &x(n, c, 0, 0);
        double* xh = &xhat_(n, c, 0, 0);
        double* o = &out(n, c, 0, 0);
        for (long i = 0; i < hw; ++i) {
          xh[i] = (p[i] - mean) * istd;
          o[i] = g * xh[i] + b;
        }
      }
    }
  } else {
    for (int c = 0; c < ch_; ++c) {
      const double istd = 1.0 / std::sqrt(run_var_[c] + eps_);
      const double mean = run_mean_[c];
      const double g = gamma_->value[c], b = beta_->value[c];
      for (int n = 0; n < N; ++n) {
        const double* p = &x(n, c, 0, 0);
        double* o = &out(n, c, 0, 0);
        for (long i = 0; i < hw; ++i) o[i] = g * (p[i] - mean) * istd + b;
      }
    }
  }
  return out;
}

Tensor BatchNorm2d::backward(const Tensor& gout) {
  require(!xhat_.empty(), "BatchNorm2d: backward before training-mode forward");
  const int N = gout.dim(0), H = gout.dim(2), W = gout.dim(3);
  const long hw = static_cast<long>(H) * W;
  const double m = static_cast<double>(per_ch_);
  Tensor dx(gout.shape());
  for (int c = 0; c < ch_; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (int n = 0; n < N; ++n) {
      const double* g = &gout(n, c, 0, 0);
      const double* xh = &xhat_(n, c, 0, 0);
      for (long i = 0; i < hw; ++i) {
        sum_g += g[i];
        sum_gx += g[i] * xh[i];
      }
    }
    beta_->grad[c] += sum_g;
    gamma_->grad[c] += sum_gx;
    const double gam = gamma_->value[c];
    const double istd = inv_std_[c];
    for (int n = 0; n < N; ++n) {
      const double* g = &gout(n, c, 0, 0);
      const double* xh = &xhat_(n, c, 0, 0);
      double* d = &dx(n, c, 0, 0);
      for (long i = 0; i < hw; ++i) {
        d[i] = gam * istd / m * (m * g[i] - sum_g - xh[i] * sum_gx);
      }
    }
  }
  return dx;
}

void BatchNorm2d::collect(std::vector<ParamPtr>& out) const {
  out.push_back(gamma_);
  out.push_back(beta_);
}

// ---------------------------------------------------------------------------
// Activations

Tensor ReLU::forward(const Tensor& x) {
  x_ = x;
  Tensor y(x.shape());
  for (long i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor ReLU::backward(const Tensor& gout) const {
  Tensor dx(gout.shape());
  for (long i = 0; i < gout.size(); ++i) dx[i] = x_[i] > 0.0 ? gout[i] : 0.0;
  return dx;
}

Tensor Tanh::forward(const Tensor& x) {
  y_ = Tensor(x.shape());
  for (long i = 0; i < x.size(); ++i) y_[i] = std::tanh(x[i]);
  return y_;
}

Tensor Tanh::backward(const Tensor& gout) const {
  Tensor dx(gout.shape());
  for (long i = 0; i < gout.size(); ++i) dx[i] = gout[i] * (1.0 - y_[i] * y_[i]);
  return dx;
}

Tensor Sigmoid::forward(const Tensor& x) {
  y_ = Tensor(x.shape());
  for (long i = 0; i < x.size(); ++i) y_[i] = 1.0 / (1.0 + std::exp(-x[i]));
  return y_;
}

Tensor Sigmoid::backward(const Tensor& gout) const {
  Tensor dx(gout.shape());
  for (long i = 0; i < gout.size(); ++i) dx[i] = gout[i] * y_[i] * (1.0 - y_[i]);
  return dx;
}

// ---------------------------------------------------------------------------
// MaxPool2x2

Tensor MaxPool2x2::forward(const Tensor& x) {
  require(x.rank() == 4 && x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0, "MaxPool2x2: odd spatial size");
  in_shape_ = x.shape();
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out({N, C, H / 2, W / 2});
  argmax_.assign(static_cast<size_t>(out.size()), 0);
  long o = 0;
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      for (int i = 0; i < H; i += 2) {
        for (int j = 0; j < W; j += 2) {
          // first maximum wins, keeping the routing deterministic
          double best = x(n, c, i, j);
          long besti = ((static_cast<long>(n) * C + c) * H + i) * W + j;
          const int di[3] = {0, 1, 1};
          const int dj[3] = {1, 0, 1};
          for (int t = 0; t < 3; ++t) {
            const double v = x(n, c, i + di[t], j + dj[t]);
            if (v > best) {
              best = v;
              besti = ((static_cast<long>(n) * C + c) * H + i + di[t]) * W + j + dj[t];
            }
          }
          out[o] = best;
          argmax_[static_cast<size_t>(o)] = static_cast<int>(besti);
          ++o;
        }
      }
    }
  }
  return out;
}

Tensor MaxPool2x2::backward(const Tensor& gout) const {
  Tensor dx(in_shape_);
  for (long o = 0; o < gout.size(); ++o) dx[argmax_[static_cast<size_t>(o)]] += gout[o];
  return dx;
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(std::string name, int in_dim, int out_dim, Rng& rng) : in_(in_dim), out_(out_dim) {
  w_ = std::make_shared<Param>(name + ".w", he_normal({in_dim, out_dim}, in_dim, rng));
  b_ = std::make_shared<Param>(name + ".b", Tensor{out_dim});
}

Tensor Linear::forward(const Tensor& x) {
  require(x.rank() == 2 && x.dim(1) == in_, "Linear: bad input shape");
  x_ = x;
  const int N = x.dim(0);
  Tensor out({N, out_});
  out.as_matrix(N, out_).noalias() = x.as_matrix(N, in_) * w_->value.as_matrix(in_, out_);
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < out_; ++k) out(n, k) += b_->value[k];
  return out;
}

Tensor Linear::backward(const Tensor& gout) {
  const int N = x_.dim(0);
  Tensor dx(x_.shape());
  w_->grad.as_matrix(in_, out_).noalias() += x_.as_matrix(N, in_).transpose() * gout.as_matrix(N, out_);
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < out_; ++k) b_->grad[k] += gout(n, k);
  dx.as_matrix(N, in_).noalias() = gout.as_matrix(N, out_) * w_->value.as_matrix(in_, out_).transpose();
  return dx;
}

void Linear::collect(std::vector<ParamPtr>& out) const {
  out.push_back(w_);
  out.push_back(b_);
}

// ---------------------------------------------------------------------------
// Dropout

Tensor Dropout::forward(const Tensor& x, bool train, Rng* rng) {
  active_ = train && p_ > 0.0 && rng != nullptr;
  if (!active_) return x;
  const double keep = 1.0 - p_;
  mask_ = Tensor(x.shape());
  Tensor y(x.shape());
  for (long i = 0; i < x.size(); ++i) {
    mask_[i] = rng->uniform() < keep ? 1.0 / keep : 0.0;
    y[i] = x[i] * mask_[i];
  }
  return y;
}

Tensor Dropout::backward(const Tensor& gout) const {
  if (!active_) return gout;
  Tensor dx(gout.shape());
  for (long i = 0; i < gout.size(); ++i) dx[i] = gout[i] * mask_[i];
  return dx;
}

// ---------------------------------------------------------------------------
// Concat / split

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.rank() == 4 && b.rank() == 4 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) &&
              a.dim(3) == b.dim(3),
          "concat_channels: incompatible shapes");
  const int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
  Tensor out({N, Ca + Cb, H, W});
  const long hw = static_cast<long>(H) * W;
  for (int n = 0; n < N; ++n) {
    std::memcpy(&out(n, 0, 0, 0), &a(n, 0, 0, 0), sizeof(double) * static_cast<size_t>(Ca * hw));
    std::memcpy(&out(n, Ca, 0, 0), &b(n, 0, 0, 0), sizeof(double) * static_cast<size_t>(Cb * hw));
  }
  return out;
}

void split_channels(const Tensor& g, int ch_a, Tensor* ga, Tensor* gb) {
  const int N = g.dim(0), C = g.dim(1), H = g.dim(2), W = g.dim(3);
  const int ch_b = C - ch_a;
  *ga = Tensor({N, ch_a, H, W});
  *gb = Tensor({N, ch_b, H, W});
  const long hw = static_cast<long>(H) * W;
  for (int n = 0; n < N; ++n) {
    std::memcpy(&(*ga)(n, 0, 0, 0), &g(n, 0, 0, 0), sizeof(double) * static_cast<size_t>(ch_a * hw));
    std::memcpy(&(*gb)(n, 0, 0, 0), &g(n, ch_a, 0, 0), sizeof(double) * static_cast<size_t>(ch_b * hw));
  }
}

// ---------------------------------------------------------------------------
// Loss / optimizer / hashing

double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             Tensor* dlogits, Tensor* probs) {
  const int N = logits.dim(0), M = logits.dim(1);
  require(static_cast<int>(labels.size()) == N, "softmax_cross_entropy: label count");
  if (dlogits != nullptr) *dlogits = Tensor(logits.shape());
  if (probs != nullptr) *probs = Tensor(logits.shape());
  double loss = 0.0;
  std::vector<double> p(static_cast<size_t>(M));
  for (int n = 0; n < N; ++n) {
    require(labels[n] >= 0 && labels[n] < M, "softmax_cross_entropy: label out of range");
    double mx = logits(n, 0);
    for (int k = 1; k < M; ++k) mx = std::max(mx, logits(n, k));
    double s = 0.0;
    for (int k = 0; k < M; ++k) {
      p[static_cast<size_t>(k)] = std::exp(logits(n, k) - mx);
      s += p[static_cast<size_t>(k)];
    }
    loss += -(logits(n, labels[n]) - mx - std::log(s));
    for (int k = 0; k < M; ++k) {
      const double pk = p[static_cast<size_t>(k)] / s;
      if (probs != nullptr) (*probs)(n, k) = pk;
      if (dlogits != nullptr)
        (*dlogits)(n, k) = (pk - (k == labels[n] ? 1.0 : 0.0)) / static_cast<double>(N);
    }
  }
  return loss / static_cast<double>(N);
}

void Adam::step(const std::vector<ParamPtr>& params) {
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (const ParamPtr& p : params) {
    if (p->m.empty()) {
      p->m = Tensor(p->value.shape());
      p->v = Tensor(p->value.shape());
    }
    for (long i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      p->m[i] = beta1 * p->m[i] + (1.0 - beta1) * g;
      p->v[i] = beta2 * p->v[i] + (1.0 - beta2) * g * g;
      const double mhat = p->m[i] / c1;
      const double vhat = p->v[i] / c2;
      p->value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

void zero_grads(const std::vector<ParamPtr>& params) {
  for (const ParamPtr& p : params) p->zero_grad();
}

uint64_t hash_params(const std::vector<ParamPtr>& params) {
  uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* bytes, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const ParamPtr& p : params)
    mix(p->value.data(), sizeof(double) * static_cast<size_t>(p->value.size()));
  return h;
}

}  // namespace safesign::nn
