#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "metatune/layers.hpp"

namespace metatune {

/// Three-bank convolutional regressor over a 2xN input image
/// (row 0 = input signal, row 1 = output signal), two-output head.
struct CnnConfig {
  int n = 250;  // record length (input width)
  int filters1 = 96, filters2 = 48, filters3 = 96;
  int k2 = 120, k3 = 20;  // banks 2/3 use 1 x k kernels; bank 1 is fixed 2x2
  double dropout = 0.2;
  int outputs = 2;

  int w1() const { return n - 1; }            // after 2x2 valid conv
  int w2() const { return w1() - k2 + 1; }    // after 1 x k2
  int w3() const { return w2() - k3 + 1; }    // after 1 x k3
  int flat() const { return filters3 * w3(); }
  void validate() const;
};

/// Stack of gated causal dilated convolutions with residual and skip paths;
/// single scalar output read from the last sequence position.
struct WavenetConfig {
  int n = 500;      // record length; the input sequence interleaves to 2n
  int kernel = 5;   // K
  int layers = 10;  // L, dilation of layer l is 2^l
  int channels = 4; // residual width; gates use 2*channels before splitting
  bool relu_before_head = true;
  std::int64_t receptive_field() const {
    return 1 + static_cast<std::int64_t>(kernel - 1) * ((std::int64_t{1} << layers) - 1);
  }
  void validate() const;
};

/// Sequential CNN: per bank conv -> batch-norm -> ReLU, then dropout,
/// flatten and a linear head.
class CnnNet {
 public:
  CnnNet(const CnnConfig& cfg, std::uint64_t seed);
  Tensor forward(const Tensor& x, bool train);  // x: (B, 1, 2, n)
  Tensor backward(const Tensor& gy);            // gy: (B, outputs)
  std::vector<Param*> state();                  // params + buffers, fixed order
  std::vector<Param*> trainable();
  const CnnConfig& config() const { return cfg_; }

 private:
  CnnConfig cfg_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// WaveNet-style regressor; forward keeps per-layer activations so backward
/// can walk the residual/skip graph in reverse.
class WavenetNet {
 public:
  WavenetNet(const WavenetConfig& cfg, std::uint64_t seed);
  Tensor forward(const Tensor& x, bool train);  // x: (B, 1, 2n) -> (B, 1)
  /// Head output at every sequence position, shape (B, 1, 2n); forward()
  /// reads the last position. Position t depends only on inputs [0, t].
  Tensor forward_sequence(const Tensor& x, bool train);
  Tensor backward(const Tensor& gy);            // gy: (B, 1)
  std::vector<Param*> state();
  std::vector<Param*> trainable();
  const WavenetConfig& config() const { return cfg_; }

 private:
  WavenetConfig cfg_;
  std::unique_ptr<CausalConv1d> entry_;
  std::vector<std::unique_ptr<CausalConv1d>> dilated_;
  std::vector<std::unique_ptr<GatedActivation>> gates_;
  std::vector<std::unique_ptr<CausalConv1d>> mix_;  // 1x1 residual/skip mixers
  std::unique_ptr<ReLU> skip_relu_;
  std::unique_ptr<CausalConv1d> head_;  // 1x1 down to one channel
  std::int64_t last_len_ = 0;
};

}  // namespace metatune
