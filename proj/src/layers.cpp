#include "metatune/layers.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "metatune/fft.hpp"

namespace metatune {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

// Narrow kernels are faster through im2col + GEMM; wide 1-D strips win in the
// frequency domain.
constexpr int kFftMinKernel = 64;

void require_rank(const Tensor& t, size_t rank, const std::string& who) {
  if (t.shape.size() != rank)
    throw std::invalid_argument(who + ": expected rank " + std::to_string(rank) +
                                " input, got shape " + t.shape_str());
}

void require_shape(const Tensor& t, const std::vector<std::int64_t>& s, const std::string& who) {
  if (t.shape != s)
    throw std::invalid_argument(who + ": shape mismatch, got " + t.shape_str());
}

std::int64_t trailing(const Tensor& t) {  // product of dims after (B, C)
  std::int64_t s = 1;
  for (size_t i = 2; i < t.shape.size(); ++i) s *= t.shape[i];
  return s;
}

}  // namespace

void init_uniform_fan_in(Tensor& w, std::int64_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : w.data) v = rng.uniform(-bound, bound);
}

void check_finite(const Tensor& t, const std::string& where) {
  for (double v : t.data)
    if (!std::isfinite(v))
      throw std::runtime_error(where + ": non-finite value detected");
}

double mse_loss(const Tensor& pred, const Tensor& target, Tensor* grad_pred) {
  if (!pred.same_shape(target))
    throw std::invalid_argument("mse_loss: shape mismatch " + pred.shape_str() + " vs " +
                                target.shape_str());
  const double n = static_cast<double>(pred.numel());
  if (n == 0) throw std::invalid_argument("mse_loss: empty tensors");
  double acc = 0.0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    const double d = pred.data[i] - target.data[i];
    acc += d * d;
  }
  if (grad_pred) {
    *grad_pred = Tensor(pred.shape);
    for (std::int64_t i = 0; i < pred.numel(); ++i)
      grad_pred->data[i] = 2.0 * (pred.data[i] - target.data[i]) / n;
  }
  return acc / n;
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string name, int c_in, int c_out, int kh, int kw, Rng& rng)
    : name_(std::move(name)), c_in_(c_in), c_out_(c_out), kh_(kh), kw_(kw) {
  if (c_in < 1 || c_out < 1 || kh < 1 || kw < 1)
    throw std::invalid_argument("Conv2d: sizes must be positive");
  W_ = {name_ + ".W", Tensor({c_out, c_in, kh, kw}), Tensor({c_out, c_in, kh, kw}), true};
  b_ = {name_ + ".b", Tensor({c_out}), Tensor({c_out}), true};
  const std::int64_t fan_in = static_cast<std::int64_t>(c_in) * kh * kw;
  init_uniform_fan_in(W_.value, fan_in, rng);
  init_uniform_fan_in(b_.value, fan_in, rng);
}

namespace {

// col[(c*kh+ki)*kw+kj][oi*OW+oj] = x[c][oi+ki][oj+kj]
void im2col2d(const double* x, int c_in, int H, int W, int kh, int kw, double* col) {
  const int OH = H - kh + 1, OW = W - kw + 1;
  const int cols = OH * OW;
  for (int c = 0; c < c_in; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        double* dst = col + ((static_cast<std::int64_t>(c) * kh + ki) * kw + kj) * cols;
        for (int oi = 0; oi < OH; ++oi) {
          const double* src = x + (static_cast<std::int64_t>(c) * H + oi + ki) * W + kj;
          for (int oj = 0; oj < OW; ++oj) dst[oi * OW + oj] = src[oj];
        }
      }
}

void col2im2d_add(const double* col, int c_in, int H, int W, int kh, int kw, double* gx) {
  const int OH = H - kh + 1, OW = W - kw + 1;
  const int cols = OH * OW;
  for (int c = 0; c < c_in; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        const double* src = col + ((static_cast<std::int64_t>(c) * kh + ki) * kw + kj) * cols;
        for (int oi = 0; oi < OH; ++oi) {
          double* dst = gx + (static_cast<std::int64_t>(c) * H + oi + ki) * W + kj;
          for (int oj = 0; oj < OW; ++oj) dst[oj] += src[oi * OW + oj];
        }
      }
}

}  // namespace

Tensor Conv2d::forward(const Tensor& x, bool train) {
  require_rank(x, 4, name_);
  if (x.shape[1] != c_in_)
    throw std::invalid_argument(name_ + ": expected " + std::to_string(c_in_) + " channels");
  const int B = static_cast<int>(x.shape[0]);
  const int H = static_cast<int>(x.shape[2]), W = static_cast<int>(x.shape[3]);
  const int OH = H - kh_ + 1, OW = W - kw_ + 1;
  if (OH < 1 || OW < 1)
    throw std::invalid_argument(name_ + ": kernel larger than input " + x.shape_str());
  if (train) x_ = x;
  if (kh_ == 1 && kw_ >= kFftMinKernel) return forward_fft(x);
  Tensor y({B, c_out_, OH, OW});
  const std::int64_t k = static_cast<std::int64_t>(c_in_) * kh_ * kw_;
  const std::int64_t cols = static_cast<std::int64_t>(OH) * OW;
  col_.resize(static_cast<size_t>(k * cols));
  CMapMat Wm(W_.value.data.data(), c_out_, k);
  for (int b = 0; b < B; ++b) {
    im2col2d(x.data.data() + static_cast<std::int64_t>(b) * c_in_ * H * W, c_in_, H, W, kh_, kw_,
             col_.data());
    CMapMat cm(col_.data(), k, cols);
    MapMat ym(y.data.data() + static_cast<std::int64_t>(b) * c_out_ * cols, c_out_, cols);
    ym.noalias() = Wm * cm;
    for (int co = 0; co < c_out_; ++co) ym.row(co).array() += b_.value.data[co];
  }
  return y;
}

// Correlation via the convolution theorem, one input row at a time: for real
// signals y_co = sum_ci (w ^* x), so Yhat(f) = sum_ci conj(What)(f) Xhat(f).
// Zero-padding each row of length W to fft_len >= W keeps circular wrap out
// of every valid output position (OW - 1 + kw - 1 < fft_len).
Tensor Conv2d::forward_fft(const Tensor& x) {
  const int B = static_cast<int>(x.shape[0]);
  const int H = static_cast<int>(x.shape[2]), W = static_cast<int>(x.shape[3]);
  const int OW = W - kw_ + 1;
  const int n = static_cast<int>(next_pow2(static_cast<size_t>(W)));
  const int nb = n / 2 + 1;  // Hermitian-independent bins
  const std::int64_t block = static_cast<std::int64_t>(c_out_) * c_in_;
  if (fft_len_ != n) {
    fft_len_ = n;
    what_version_ = ~std::uint64_t{0};
  }
  if (what_version_ != W_.version) {  // refresh conjugated kernel spectra
    what_.assign(static_cast<size_t>(block) * nb, {});
    fft_row_.assign(static_cast<size_t>(n), {});
    for (int co = 0; co < c_out_; ++co)
      for (int ci = 0; ci < c_in_; ++ci) {
        const double* w = W_.value.data.data() + (static_cast<std::int64_t>(co) * c_in_ + ci) * kw_;
        std::fill(fft_row_.begin(), fft_row_.end(), std::complex<double>{});
        for (int j = 0; j < kw_; ++j) fft_row_[j] = w[j];
        fft_pow2(fft_row_.data(), static_cast<size_t>(n), false);
        for (int f = 0; f < nb; ++f)
          what_[static_cast<std::int64_t>(f) * block + static_cast<std::int64_t>(ci) * c_out_ + co] =
              std::conj(fft_row_[f]);
      }
    what_version_ = W_.version;
  }
  xhat_.resize(static_cast<size_t>(c_in_) * nb);
  yhat_.resize(static_cast<size_t>(c_out_) * nb);
  fft_row_.resize(static_cast<size_t>(n));
  using CMat = Eigen::MatrixXcd;
  Eigen::Map<CMat> Xh(xhat_.data(), c_in_, nb);
  Eigen::Map<CMat> Yh(yhat_.data(), c_out_, nb);
  Tensor y({B, c_out_, H, OW});
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < H; ++h) {
      for (int ci = 0; ci < c_in_; ++ci) {
        const double* src = x.data.data() + ((static_cast<std::int64_t>(b) * c_in_ + ci) * H + h) * W;
        for (int t = 0; t < W; ++t) fft_row_[t] = src[t];
        std::fill(fft_row_.begin() + W, fft_row_.end(), std::complex<double>{});
        fft_pow2(fft_row_.data(), static_cast<size_t>(n), false);
        for (int f = 0; f < nb; ++f) Xh(ci, f) = fft_row_[f];
      }
      for (int f = 0; f < nb; ++f) {
        Eigen::Map<const CMat> Wf(what_.data() + static_cast<std::int64_t>(f) * block, c_out_, c_in_);
        Yh.col(f).noalias() = Wf * Xh.col(f);
      }
      for (int co = 0; co < c_out_; ++co) {
        for (int f = 0; f < nb; ++f) fft_row_[f] = Yh(co, f);
        for (int f = nb; f < n; ++f) fft_row_[f] = std::conj(Yh(co, n - f));
        fft_pow2(fft_row_.data(), static_cast<size_t>(n), true);
        double* dst = y.data.data() + ((static_cast<std::int64_t>(b) * c_out_ + co) * H + h) * OW;
        const double bias = b_.value.data[co];
        for (int t = 0; t < OW; ++t) dst[t] = fft_row_[t].real() + bias;
      }
    }
  return y;
}

Tensor Conv2d::backward(const Tensor& gy) {
  const int B = static_cast<int>(x_.shape[0]);
  const int H = static_cast<int>(x_.shape[2]), W = static_cast<int>(x_.shape[3]);
  const int OH = H - kh_ + 1, OW = W - kw_ + 1;
  require_shape(gy, {B, c_out_, OH, OW}, name_ + " backward");
  Tensor gx(x_.shape);
  const std::int64_t k = static_cast<std::int64_t>(c_in_) * kh_ * kw_;
  const std::int64_t cols = static_cast<std::int64_t>(OH) * OW;
  col_.resize(static_cast<size_t>(k * cols));  // forward may have used the FFT path
  CMapMat Wm(W_.value.data.data(), c_out_, k);
  MapMat dW(W_.grad.data.data(), c_out_, k);
  for (int b = 0; b < B; ++b) {
    im2col2d(x_.data.data() + static_cast<std::int64_t>(b) * c_in_ * H * W, c_in_, H, W, kh_, kw_,
             col_.data());
    CMapMat cm(col_.data(), k, cols);
    CMapMat gym(gy.data.data() + static_cast<std::int64_t>(b) * c_out_ * cols, c_out_, cols);
    dW.noalias() += gym * cm.transpose();
    for (int co = 0; co < c_out_; ++co) b_.grad.data[co] += gym.row(co).sum();
    // col_ is no longer read; reuse it for the column-space input gradient.
    MapMat dcol(col_.data(), k, cols);
    dcol.noalias() = Wm.transpose() * gym;
    col2im2d_add(col_.data(), c_in_, H, W, kh_, kw_,
                 gx.data.data() + static_cast<std::int64_t>(b) * c_in_ * H * W);
  }
  return gx;
}

// ---------------------------------------------------------- CausalConv1d

CausalConv1d::CausalConv1d(std::string name, int c_in, int c_out, int k, int dilation, Rng& rng)
    : name_(std::move(name)), c_in_(c_in), c_out_(c_out), k_(k), dilation_(dilation) {
  if (c_in < 1 || c_out < 1 || k < 1 || dilation < 1)
    throw std::invalid_argument("CausalConv1d: sizes must be positive");
  W_ = {name_ + ".W", Tensor({c_out, c_in, k}), Tensor({c_out, c_in, k}), true};
  b_ = {name_ + ".b", Tensor({c_out}), Tensor({c_out}), true};
  const std::int64_t fan_in = static_cast<std::int64_t>(c_in) * k;
  init_uniform_fan_in(W_.value, fan_in, rng);
  init_uniform_fan_in(b_.value, fan_in, rng);
}

namespace {

// Tap index k runs oldest -> newest: col[c*K+k][t] = x[c][t - (K-1-k)*d],
// zero where the shifted index falls before the record start.
void im2col1d_causal(const double* x, int c_in, int L, int K, int d, double* col) {
  for (int c = 0; c < c_in; ++c)
    for (int k = 0; k < K; ++k) {
      const int shift = (K - 1 - k) * d;
      double* dst = col + (static_cast<std::int64_t>(c) * K + k) * L;
      const double* src = x + static_cast<std::int64_t>(c) * L;
      const int z = std::min(shift, L);
      for (int t = 0; t < z; ++t) dst[t] = 0.0;
      for (int t = z; t < L; ++t) dst[t] = src[t - shift];
    }
}

void col2im1d_causal_add(const double* col, int c_in, int L, int K, int d, double* gx) {
  for (int c = 0; c < c_in; ++c)
    for (int k = 0; k < K; ++k) {
      const int shift = (K - 1 - k) * d;
      const double* src = col + (static_cast<std::int64_t>(c) * K + k) * L;
      double* dst = gx + static_cast<std::int64_t>(c) * L;
      for (int t = std::min(shift, L); t < L; ++t) dst[t - shift] += src[t];
    }
}

}  // namespace

Tensor CausalConv1d::forward(const Tensor& x, bool train) {
  require_rank(x, 3, name_);
  if (x.shape[1] != c_in_)
    throw std::invalid_argument(name_ + ": expected " + std::to_string(c_in_) + " channels");
  const int B = static_cast<int>(x.shape[0]);
  const int L = static_cast<int>(x.shape[2]);
  if (train) x_ = x;
  Tensor y({B, c_out_, L});
  const std::int64_t k = static_cast<std::int64_t>(c_in_) * k_;
  if (k_ > 1) col_.resize(static_cast<size_t>(k * L));
  CMapMat Wm(W_.value.data.data(), c_out_, k);
  for (int b = 0; b < B; ++b) {
    const double* xb = x.data.data() + static_cast<std::int64_t>(b) * c_in_ * L;
    MapMat ym(y.data.data() + static_cast<std::int64_t>(b) * c_out_ * L, c_out_, L);
    if (k_ == 1) {  // pointwise mix: the input already is the column matrix
      CMapMat cm(xb, c_in_, L);
      ym.noalias() = Wm * cm;
    } else {
      im2col1d_causal(xb, c_in_, L, k_, dilation_, col_.data());
      CMapMat cm(col_.data(), k, L);
      ym.noalias() = Wm * cm;
    }
    for (int co = 0; co < c_out_; ++co) ym.row(co).array() += b_.value.data[co];
  }
  return y;
}

Tensor CausalConv1d::backward(const Tensor& gy) {
  const int B = static_cast<int>(x_.shape[0]);
  const int L = static_cast<int>(x_.shape[2]);
  require_shape(gy, {B, c_out_, L}, name_ + " backward");
  Tensor gx(x_.shape);
  const std::int64_t k = static_cast<std::int64_t>(c_in_) * k_;
  if (k_ > 1) col_.resize(static_cast<size_t>(k * L));
  CMapMat Wm(W_.value.data.data(), c_out_, k);
  MapMat dW(W_.grad.data.data(), c_out_, k);
  for (int b = 0; b < B; ++b) {
    const double* xb = x_.data.data() + static_cast<std::int64_t>(b) * c_in_ * L;
    double* gxb = gx.data.data() + static_cast<std::int64_t>(b) * c_in_ * L;
    CMapMat gym(gy.data.data() + static_cast<std::int64_t>(b) * c_out_ * L, c_out_, L);
    if (k_ == 1) {
      CMapMat cm(xb, c_in_, L);
      dW.noalias() += gym * cm.transpose();
      MapMat gxm(gxb, c_in_, L);
      gxm.noalias() = Wm.transpose() * gym;
    } else {
      im2col1d_causal(xb, c_in_, L, k_, dilation_, col_.data());
      CMapMat cm(col_.data(), k, L);
      dW.noalias() += gym * cm.transpose();
      MapMat dcol(col_.data(), k, L);
      dcol.noalias() = Wm.transpose() * gym;
      col2im1d_causal_add(col_.data(), c_in_, L, k_, dilation_, gxb);
    }
    for (int co = 0; co < c_out_; ++co) b_.grad.data[co] += gym.row(co).sum();
  }
  return gx;
}

// ------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(std::string name, int channels, double momentum, double eps)
    : name_(std::move(name)), channels_(channels), momentum_(momentum), eps_(eps) {
  if (channels < 1) throw std::invalid_argument("BatchNorm: channels must be positive");
  gamma_ = {name_ + ".gamma", Tensor({channels}), Tensor({channels}), true};
  beta_ = {name_ + ".beta", Tensor({channels}), Tensor({channels}), true};
  run_mean_ = {name_ + ".running_mean", Tensor({channels}), Tensor(), false};
  run_var_ = {name_ + ".running_var", Tensor({channels}), Tensor(), false};
  std::fill(gamma_.value.data.begin(), gamma_.value.data.end(), 1.0);
  std::fill(run_var_.value.data.begin(), run_var_.value.data.end(), 1.0);
}

Tensor BatchNorm::forward(const Tensor& x, bool train) {
  if (x.shape.size() < 2 || x.shape[1] != channels_)
    throw std::invalid_argument(name_ + ": expected channel dim " + std::to_string(channels_) +
                                ", got " + x.shape_str());
  const std::int64_t B = x.shape[0], S = trailing(x);
  const std::int64_t m = B * S;
  train_mode_ = train;
  if (train) {
    xhat_ = Tensor(x.shape);
    invstd_.assign(static_cast<size_t>(channels_), 0.0);
  }
  Tensor y(x.shape);
  for (int c = 0; c < channels_; ++c) {
    double mean, var;
    if (train) {
      double s = 0.0, s2 = 0.0;
      for (std::int64_t b = 0; b < B; ++b) {
        const double* p = x.data.data() + (b * channels_ + c) * S;
        for (std::int64_t i = 0; i < S; ++i) {
          s += p[i];
          s2 += p[i] * p[i];
        }
      }
      mean = s / static_cast<double>(m);
      var = s2 / static_cast<double>(m) - mean * mean;
      if (var < 0.0) var = 0.0;  // guard rounding
      run_mean_.value.data[c] = (1.0 - momentum_) * run_mean_.value.data[c] + momentum_ * mean;
      const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
      run_var_.value.data[c] = (1.0 - momentum_) * run_var_.value.data[c] + momentum_ * unbiased;
    } else {
      mean = run_mean_.value.data[c];
      var = run_var_.value.data[c];
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    const double g = gamma_.value.data[c], be = beta_.value.data[c];
    for (std::int64_t b = 0; b < B; ++b) {
      const double* p = x.data.data() + (b * channels_ + c) * S;
      double* py = y.data.data() + (b * channels_ + c) * S;
      if (train) {
        invstd_[c] = inv;
        double* xh = xhat_.data.data() + (b * channels_ + c) * S;
        for (std::int64_t i = 0; i < S; ++i) {
          xh[i] = (p[i] - mean) * inv;
          py[i] = g * xh[i] + be;
        }
      } else {
        const double scale = g * inv, shift = be - g * inv * mean;
        for (std::int64_t i = 0; i < S; ++i) py[i] = scale * p[i] + shift;
      }
    }
  }
  return y;
}

Tensor BatchNorm::backward(const Tensor& gy) {
  require_shape(gy, xhat_.shape, name_ + " backward");
  const std::int64_t B = gy.shape[0], S = trailing(gy);
  const double m = static_cast<double>(B * S);
  Tensor gx(gy.shape);
  for (int c = 0; c < channels_; ++c) {
    double sg = 0.0, sb = 0.0;
    for (std::int64_t b = 0; b < B; ++b) {
      const double* g = gy.data.data() + (b * channels_ + c) * S;
      const double* xh = xhat_.data.data() + (b * channels_ + c) * S;
      for (std::int64_t i = 0; i < S; ++i) {
        sg += g[i] * xh[i];
        sb += g[i];
      }
    }
    gamma_.grad.data[c] += sg;
    beta_.grad.data[c] += sb;
    const double gi = gamma_.value.data[c] * invstd_[c];
    for (std::int64_t b = 0; b < B; ++b) {
      const double* g = gy.data.data() + (b * channels_ + c) * S;
      const double* xh = xhat_.data.data() + (b * channels_ + c) * S;
      double* px = gx.data.data() + (b * channels_ + c) * S;
      if (train_mode_) {
        for (std::int64_t i = 0; i < S; ++i)
          px[i] = gi * (g[i] - sb / m - xh[i] * sg / m);
      } else {
        for (std::int64_t i = 0; i < S; ++i) px[i] = gi * g[i];
      }
    }
  }
  return gx;
}

// ----------------------------------------------------------- activations

Tensor ReLU::forward(const Tensor& x, bool train) {
  Tensor y(x.shape);
  for (std::int64_t i = 0; i < x.numel(); ++i) y.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
  if (train) y_ = y;
  return y;
}

Tensor ReLU::backward(const Tensor& gy) {
  require_shape(gy, y_.shape, name_ + " backward");
  Tensor gx(gy.shape);
  for (std::int64_t i = 0; i < gy.numel(); ++i) gx.data[i] = y_.data[i] > 0.0 ? gy.data[i] : 0.0;
  return gx;
}

Tensor Tanh::forward(const Tensor& x, bool train) {
  Tensor y(x.shape);
  for (std::int64_t i = 0; i < x.numel(); ++i) y.data[i] = std::tanh(x.data[i]);
  if (train) y_ = y;
  return y;
}

Tensor Tanh::backward(const Tensor& gy) {
  require_shape(gy, y_.shape, name_ + " backward");
  Tensor gx(gy.shape);
  for (std::int64_t i = 0; i < gy.numel(); ++i)
    gx.data[i] = gy.data[i] * (1.0 - y_.data[i] * y_.data[i]);
  return gx;
}

Tensor Sigmoid::forward(const Tensor& x, bool train) {
  Tensor y(x.shape);
  for (std::int64_t i = 0; i < x.numel(); ++i) y.data[i] = 1.0 / (1.0 + std::exp(-x.data[i]));
  if (train) y_ = y;
  return y;
}

Tensor Sigmoid::backward(const Tensor& gy) {
  require_shape(gy, y_.shape, name_ + " backward");
  Tensor gx(gy.shape);
  for (std::int64_t i = 0; i < gy.numel(); ++i)
    gx.data[i] = gy.data[i] * y_.data[i] * (1.0 - y_.data[i]);
  return gx;
}

// tanh and the logistic run through Eigen's vectorized exp:
// tanh(f) = 1 - 2/(exp(2f) + 1) (exact at the overflow limits) and
// sigmoid(g) = 1/(1 + exp(-g)).
Tensor GatedActivation::forward(const Tensor& x, bool train) {
  require_rank(x, 3, name_);
  if (x.shape[1] % 2 != 0)
    throw std::invalid_argument(name_ + ": channel count must be even, got " + x.shape_str());
  const std::int64_t B = x.shape[0], C = x.shape[1] / 2, L = x.shape[2];
  if (train) {
    tf_ = Tensor({B, C, L});
    sg_ = Tensor({B, C, L});
  }
  Tensor y({B, C, L});
  using ArrMap = Eigen::Map<Eigen::ArrayXd>;
  using CArrMap = Eigen::Map<const Eigen::ArrayXd>;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      CArrMap f(x.data.data() + ((b * 2 * C) + c) * L, L);
      CArrMap g(x.data.data() + ((b * 2 * C) + C + c) * L, L);
      ArrMap py(y.data.data() + (b * C + c) * L, L);
      if (train) {
        ArrMap pt(tf_.data.data() + (b * C + c) * L, L);
        ArrMap ps(sg_.data.data() + (b * C + c) * L, L);
        pt = 1.0 - 2.0 / ((2.0 * f).exp() + 1.0);
        ps = 1.0 / (1.0 + (-g).exp());
        py = pt * ps;
      } else {
        py = (1.0 - 2.0 / ((2.0 * f).exp() + 1.0)) * (1.0 / (1.0 + (-g).exp()));
      }
    }
  return y;
}

Tensor GatedActivation::backward(const Tensor& gy) {
  require_shape(gy, tf_.shape, name_ + " backward");
  const std::int64_t B = gy.shape[0], C = gy.shape[1], L = gy.shape[2];
  Tensor gx({B, 2 * C, L});
  using ArrMap = Eigen::Map<Eigen::ArrayXd>;
  using CArrMap = Eigen::Map<const Eigen::ArrayXd>;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      CArrMap g(gy.data.data() + (b * C + c) * L, L);
      CArrMap pt(tf_.data.data() + (b * C + c) * L, L);
      CArrMap ps(sg_.data.data() + (b * C + c) * L, L);
      ArrMap gf(gx.data.data() + ((b * 2 * C) + c) * L, L);
      ArrMap gg(gx.data.data() + ((b * 2 * C) + C + c) * L, L);
      gf = g * ps * (1.0 - pt.square());
      gg = g * pt * ps * (1.0 - ps);
    }
  return gx;
}

// -------------------------------------------------------------- Dropout

Dropout::Dropout(std::string name, double p, std::uint64_t seed)
    : name_(std::move(name)), p_(p), rng_(seed) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("Dropout: p must be in [0, 1)");
}

Tensor Dropout::forward(const Tensor& x, bool train) {
  if (!train || p_ == 0.0) {
    masked_ = false;
    return x;
  }
  masked_ = true;
  mask_.resize(static_cast<size_t>(x.numel()));
  const double keep = 1.0 - p_;
  Tensor y(x.shape);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    mask_[i] = rng_.uniform01() >= p_ ? 1.0 / keep : 0.0;
    y.data[i] = x.data[i] * mask_[i];
  }
  return y;
}

Tensor Dropout::backward(const Tensor& gy) {
  if (!masked_) return gy;
  if (gy.numel() != static_cast<std::int64_t>(mask_.size()))
    throw std::invalid_argument(name_ + " backward: size mismatch");
  Tensor gx(gy.shape);
  for (std::int64_t i = 0; i < gy.numel(); ++i) gx.data[i] = gy.data[i] * mask_[i];
  return gx;
}

// -------------------------------------------------------------- Flatten

Tensor Flatten::forward(const Tensor& x, bool) {
  if (x.shape.empty()) throw std::invalid_argument(name_ + ": scalar input");
  in_shape_ = x.shape;
  Tensor y = x;
  y.shape = {x.shape[0], x.numel() / x.shape[0]};
  return y;
}

Tensor Flatten::backward(const Tensor& gy) {
  Tensor gx = gy;
  gx.shape = in_shape_;
  if (gx.numel() != Tensor::numel_of(in_shape_))
    throw std::invalid_argument(name_ + " backward: size mismatch");
  return gx;
}

// --------------------------------------------------------------- Linear

Linear::Linear(std::string name, int in, int out, Rng& rng)
    : name_(std::move(name)), in_(in), out_(out) {
  if (in < 1 || out < 1) throw std::invalid_argument("Linear: sizes must be positive");
  W_ = {name_ + ".W", Tensor({out, in}), Tensor({out, in}), true};
  b_ = {name_ + ".b", Tensor({out}), Tensor({out}), true};
  init_uniform_fan_in(W_.value, in, rng);
  init_uniform_fan_in(b_.value, in, rng);
}

Tensor Linear::forward(const Tensor& x, bool train) {
  require_rank(x, 2, name_);
  if (x.shape[1] != in_)
    throw std::invalid_argument(name_ + ": expected width " + std::to_string(in_) + ", got " +
                                x.shape_str());
  if (train) x_ = x;
  const std::int64_t B = x.shape[0];
  Tensor y({B, out_});
  CMapMat xm(x.data.data(), B, in_);
  CMapMat Wm(W_.value.data.data(), out_, in_);
  MapMat ym(y.data.data(), B, out_);
  ym.noalias() = xm * Wm.transpose();
  for (std::int64_t b = 0; b < B; ++b)
    for (int o = 0; o < out_; ++o) y.data[b * out_ + o] += b_.value.data[o];
  return y;
}

Tensor Linear::backward(const Tensor& gy) {
  const std::int64_t B = x_.shape[0];
  require_shape(gy, {B, out_}, name_ + " backward");
  CMapMat gym(gy.data.data(), B, out_);
  CMapMat xm(x_.data.data(), B, in_);
  CMapMat Wm(W_.value.data.data(), out_, in_);
  MapMat dW(W_.grad.data.data(), out_, in_);
  dW.noalias() += gym.transpose() * xm;
  for (std::int64_t b = 0; b < B; ++b)
    for (int o = 0; o < out_; ++o) b_.grad.data[o] += gy.data[b * out_ + o];
  Tensor gx({B, in_});
  MapMat gxm(gx.data.data(), B, in_);
  gxm.noalias() = gym * Wm;
  return gx;
}

}  // namespace metatune
