#include "metatune/nets.hpp"

#include <stdexcept>

namespace metatune {

void CnnConfig::validate() const {
  if (n < 2) throw std::invalid_argument("CnnConfig: record length too short");
  if (filters1 < 1 || filters2 < 1 || filters3 < 1 || k2 < 1 || k3 < 1 || outputs < 1)
    throw std::invalid_argument("CnnConfig: sizes must be positive");
  if (w1() < 1 || w2() < 1 || w3() < 1)
    throw std::invalid_argument("CnnConfig: kernels exhaust the spatial extent");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("CnnConfig: dropout must be in [0, 1)");
}

void WavenetConfig::validate() const {
  if (n < 1 || kernel < 2 || layers < 1 || channels < 1)
    throw std::invalid_argument("WavenetConfig: sizes must be positive (kernel >= 2)");
  if (receptive_field() < 2 * static_cast<std::int64_t>(n))
    throw std::invalid_argument(
        "WavenetConfig: receptive field must cover the interleaved sequence");
}

CnnNet::CnnNet(const CnnConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(mix64(seed));
  layers_.push_back(std::make_unique<Conv2d>("conv1", 1, cfg_.filters1, 2, 2, rng));
  layers_.push_back(std::make_unique<BatchNorm>("bn1", cfg_.filters1));
  layers_.push_back(std::make_unique<ReLU>("relu1"));
  layers_.push_back(std::make_unique<Conv2d>("conv2", cfg_.filters1, cfg_.filters2, 1, cfg_.k2, rng));
  layers_.push_back(std::make_unique<BatchNorm>("bn2", cfg_.filters2));
  layers_.push_back(std::make_unique<ReLU>("relu2"));
  layers_.push_back(std::make_unique<Conv2d>("conv3", cfg_.filters2, cfg_.filters3, 1, cfg_.k3, rng));
  layers_.push_back(std::make_unique<BatchNorm>("bn3", cfg_.filters3));
  layers_.push_back(std::make_unique<ReLU>("relu3"));
  layers_.push_back(std::make_unique<Dropout>("dropout", cfg_.dropout, mix64(seed ^ 0xd70b0c3aULL)));
  layers_.push_back(std::make_unique<Flatten>("flatten"));
  layers_.push_back(std::make_unique<Linear>("fc", cfg_.flat(), cfg_.outputs, rng));
}

Tensor CnnNet::forward(const Tensor& x, bool train) {
  if (x.shape.size() != 4 || x.shape[1] != 1 || x.shape[2] != 2 || x.shape[3] != cfg_.n)
    throw std::invalid_argument("CnnNet: expected (B,1,2," + std::to_string(cfg_.n) +
                                ") input, got " + x.shape_str());
  check_finite(x, "CnnNet input");
  Tensor h = x;
  for (size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i]->forward(h, train);
    // Per-layer checks localize blowups during training; inference verifies
    // the final output only.
    if (train) check_finite(h, "CnnNet layer " + std::to_string(i) + " (" + layers_[i]->name() + ")");
  }
  check_finite(h, "CnnNet output");
  return h;
}

Tensor CnnNet::backward(const Tensor& gy) {
  Tensor g = gy;
  for (size_t i = layers_.size(); i-- > 0;) {
    g = layers_[i]->backward(g);
    check_finite(g, "CnnNet backward layer " + std::to_string(i) + " (" + layers_[i]->name() + ")");
  }
  return g;
}

std::vector<Param*> CnnNet::state() {
  std::vector<Param*> out;
  for (auto& l : layers_)
    for (Param* p : l->state()) out.push_back(p);
  return out;
}

std::vector<Param*> CnnNet::trainable() {
  std::vector<Param*> out;
  for (Param* p : state())
    if (p->trainable) out.push_back(p);
  return out;
}

WavenetNet::WavenetNet(const WavenetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(mix64(seed));
  const int C = cfg_.channels;
  entry_ = std::make_unique<CausalConv1d>("entry", 1, C, cfg_.kernel, 1, rng);
  for (int l = 0; l < cfg_.layers; ++l) {
    const int d = 1 << l;
    dilated_.push_back(std::make_unique<CausalConv1d>("dil" + std::to_string(l), C, 2 * C,
                                                      cfg_.kernel, d, rng));
    gates_.push_back(std::make_unique<GatedActivation>("gate" + std::to_string(l)));
    mix_.push_back(std::make_unique<CausalConv1d>("mix" + std::to_string(l), C, C, 1, 1, rng));
  }
  skip_relu_ = std::make_unique<ReLU>("skip_relu");
  head_ = std::make_unique<CausalConv1d>("head", C, 1, 1, 1, rng);
}

Tensor WavenetNet::forward_sequence(const Tensor& x, bool train) {
  const std::int64_t want = 2 * static_cast<std::int64_t>(cfg_.n);
  if (x.shape.size() != 3 || x.shape[1] != 1 || x.shape[2] != want)
    throw std::invalid_argument("WavenetNet: expected (B,1," + std::to_string(want) +
                                ") input, got " + x.shape_str());
  check_finite(x, "WavenetNet input");
  last_len_ = x.shape[2];
  Tensor h = entry_->forward(x, train);
  if (train) check_finite(h, "WavenetNet entry");
  Tensor skip(h.shape);
  for (int l = 0; l < cfg_.layers; ++l) {
    Tensor z = dilated_[l]->forward(h, train);
    Tensor a = gates_[l]->forward(z, train);
    Tensor s = mix_[l]->forward(a, train);
    for (std::int64_t i = 0; i < s.numel(); ++i) {
      skip.data[i] += s.data[i];
      h.data[i] += s.data[i];
    }
    if (train) check_finite(h, "WavenetNet layer " + std::to_string(l));
  }
  Tensor sr = cfg_.relu_before_head ? skip_relu_->forward(skip, train) : skip;
  return head_->forward(sr, train);  // (B, 1, L)
}

Tensor WavenetNet::forward(const Tensor& x, bool train) {
  Tensor o = forward_sequence(x, train);
  const std::int64_t B = o.shape[0], L = o.shape[2];
  Tensor out({B, 1});
  for (std::int64_t b = 0; b < B; ++b) out.data[b] = o.data[b * L + L - 1];
  check_finite(out, "WavenetNet head");
  return out;
}

Tensor WavenetNet::backward(const Tensor& gy) {
  const std::int64_t B = gy.shape[0], L = last_len_;
  if (gy.shape.size() != 2 || gy.shape[1] != 1)
    throw std::invalid_argument("WavenetNet backward: expected (B,1) gradient");
  Tensor go({B, 1, L});
  for (std::int64_t b = 0; b < B; ++b) go.data[b * L + L - 1] = gy.data[b];
  Tensor gskip = head_->backward(go);
  if (cfg_.relu_before_head) gskip = skip_relu_->backward(gskip);
  Tensor gh(gskip.shape);  // gradient w.r.t. the running residual signal
  for (int l = cfg_.layers - 1; l >= 0; --l) {
    Tensor gs(gskip.shape);
    for (std::int64_t i = 0; i < gs.numel(); ++i) gs.data[i] = gskip.data[i] + gh.data[i];
    Tensor ga = mix_[l]->backward(gs);
    Tensor gz = gates_[l]->backward(ga);
    Tensor gc = dilated_[l]->backward(gz);
    for (std::int64_t i = 0; i < gh.numel(); ++i) gh.data[i] += gc.data[i];
    check_finite(gh, "WavenetNet backward layer " + std::to_string(l));
  }
  return entry_->backward(gh);
}

std::vector<Param*> WavenetNet::state() {
  std::vector<Param*> out;
  for (Param* p : entry_->state()) out.push_back(p);
  for (int l = 0; l < cfg_.layers; ++l) {
    for (Param* p : dilated_[l]->state()) out.push_back(p);
    for (Param* p : mix_[l]->state()) out.push_back(p);
  }
  for (Param* p : head_->state()) out.push_back(p);
  return out;
}

std::vector<Param*> WavenetNet::trainable() {
  std::vector<Param*> out;
  for (Param* p : state())
    if (p->trainable) out.push_back(p);
  return out;
}

}  // namespace metatune
