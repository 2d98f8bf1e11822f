#pragma once

#include <complex>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "metatune/rng.hpp"
#include "metatune/tensor.hpp"

namespace metatune {

/// A named tensor owned by a layer: either a trainable parameter (grad is
/// live) or a persistent buffer such as batch-norm running statistics.
/// Any code that mutates `value` must bump `version` afterwards so layers can
/// invalidate caches derived from the weights (e.g. frequency-domain kernel
/// spectra); the optimizer, checkpoint restore, and model load all do.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  std::uint64_t version = 0;
};

/// Reverse-mode layer: forward with train == true caches whatever backward
/// needs; backward accumulates parameter gradients and returns the input
/// gradient. Eval-mode forwards skip the caches, so backward is only valid
/// after a train-mode forward.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool train) = 0;
  virtual Tensor backward(const Tensor& gy) = 0;
  virtual std::vector<Param*> state() { return {}; }  // params + buffers
  virtual std::string name() const = 0;
};

/// Fills w with U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
void init_uniform_fan_in(Tensor& w, std::int64_t fan_in, Rng& rng);

/// Valid (no padding), stride-1 2-D convolution.
/// (B, Cin, H, W) -> (B, Cout, H-kh+1, W-kw+1).
/// Kernels that are wide 1-D strips (kh == 1, kw >= 64) run the forward pass
/// in the frequency domain: each input row is convolved by pointwise spectrum
/// products, cutting the arithmetic roughly kw/log2(fft) times. Kernel
/// spectra are cached against the weight Param version. Results match the
/// direct path to roundoff; backward always uses the direct im2col path.
class Conv2d final : public Layer {
 public:
  Conv2d(std::string name, int c_in, int c_out, int kh, int kw, Rng& rng);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::vector<Param*> state() override { return {&W_, &b_}; }
  std::string name() const override { return name_; }

 private:
  Tensor forward_fft(const Tensor& x);

  std::string name_;
  int c_in_, c_out_, kh_, kw_;
  Param W_, b_;
  Tensor x_;                  // cached input (train-mode forwards only)
  std::vector<double> col_;   // im2col scratch, reused across examples
  // Frequency-domain fast path state.
  std::vector<std::complex<double>> what_;  // conj kernel spectra, bin-major (c_out x c_in) blocks
  std::vector<std::complex<double>> xhat_, yhat_, fft_row_;
  std::uint64_t what_version_ = ~std::uint64_t{0};
  int fft_len_ = 0;
};

/// Causal dilated 1-D convolution with implicit zero left-padding of
/// (K-1)*dilation samples, so output length equals input length and output
/// at t never sees inputs beyond t. (B, Cin, L) -> (B, Cout, L). K = 1 gives
/// the pointwise (1x1) convolutions used for residual mixing and heads.
class CausalConv1d final : public Layer {
 public:
  CausalConv1d(std::string name, int c_in, int c_out, int k, int dilation, Rng& rng);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::vector<Param*> state() override { return {&W_, &b_}; }
  std::string name() const override { return name_; }

 private:
  std::string name_;
  int c_in_, c_out_, k_, dilation_;
  Param W_, b_;
  Tensor x_;
  std::vector<double> col_;
};

/// Per-channel batch normalization over (B, C, spatial...). Training uses
/// batch statistics and updates running estimates; eval normalizes with the
/// running estimates, making inference a pure function of the weights.
class BatchNorm final : public Layer {
 public:
  BatchNorm(std::string name, int channels, double momentum = 0.1, double eps = 1e-5);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::vector<Param*> state() override { return {&gamma_, &beta_, &run_mean_, &run_var_}; }
  std::string name() const override { return name_; }

 private:
  std::string name_;
  int channels_;
  double momentum_, eps_;
  Param gamma_, beta_, run_mean_, run_var_;
  Tensor xhat_;
  std::vector<double> invstd_;
  bool train_mode_ = false;
};

class ReLU final : public Layer {
 public:
  explicit ReLU(std::string name) : name_(std::move(name)) {}
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::string name() const override { return name_; }

 private:
  std::string name_;
  Tensor y_;
};

class Tanh final : public Layer {
 public:
  explicit Tanh(std::string name) : name_(std::move(name)) {}
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::string name() const override { return name_; }

 private:
  std::string name_;
  Tensor y_;
};

class Sigmoid final : public Layer {
 public:
  explicit Sigmoid(std::string name) : name_(std::move(name)) {}
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::string name() const override { return name_; }

 private:
  std::string name_;
  Tensor y_;
};

/// Gated activation unit: splits (B, 2C, L) into filter/gate halves and
/// outputs tanh(filter) * sigmoid(gate), shape (B, C, L).
class GatedActivation final : public Layer {
 public:
  explicit GatedActivation(std::string name) : name_(std::move(name)) {}
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::string name() const override { return name_; }

 private:
  std::string name_;
  Tensor tf_, sg_;  // tanh(filter), sigmoid(gate)
};

/// Inverted dropout: train scales kept units by 1/(1-p); eval is identity.
/// Mask draws come from an internal deterministic stream.
class Dropout final : public Layer {
 public:
  Dropout(std::string name, double p, std::uint64_t seed);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::string name() const override { return name_; }

 private:
  std::string name_;
  double p_;
  Rng rng_;
  std::vector<double> mask_;
  bool masked_ = false;
};

/// (B, ...) -> (B, prod(...)).
class Flatten final : public Layer {
 public:
  explicit Flatten(std::string name) : name_(std::move(name)) {}
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::string name() const override { return name_; }

 private:
  std::string name_;
  std::vector<std::int64_t> in_shape_;
};

/// Fully connected: (B, in) -> (B, out), y = x W^T + b.
class Linear final : public Layer {
 public:
  Linear(std::string name, int in, int out, Rng& rng);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::vector<Param*> state() override { return {&W_, &b_}; }
  std::string name() const override { return name_; }

 private:
  std::string name_;
  int in_, out_;
  Param W_, b_;
  Tensor x_;
};

/// Mean squared error over every element; if grad_pred is non-null it
/// receives dL/dpred.
double mse_loss(const Tensor& pred, const Tensor& target, Tensor* grad_pred);

/// Throws std::runtime_error naming `where` if any element is not finite.
void check_finite(const Tensor& t, const std::string& where);

}  // namespace metatune
