#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "metatune/dataset.hpp"
#include "metatune/nets.hpp"

namespace metatune {

inline constexpr const char* kModelFormatVersion = "metatune-nn/1";

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  int epochs = 50;
  int batch = 64;
  bool early_stop = true;  // on validation loss; the WaveNet trainer turns this off
  int patience = 5;
  std::uint64_t seed = 0;
  void validate() const;
};

struct EpochLog {
  std::string net;  // "" for the CNN, target name for per-target WaveNets
  int epoch = 0;
  double train_mse = 0.0, val_mse = 0.0;
  double seconds = 0.0;
};

struct Normalization {
  std::vector<double> x_mean, x_std;  // per input channel: (u, y)
  std::vector<double> t_mean, t_std;  // per target
};

/// Adam with bias correction over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Param*> params, const TrainConfig& cfg);
  void zero_grad();
  void step();

 private:
  std::vector<Param*> params_;
  std::vector<Tensor> m_, v_;
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
};

/// A trained regressor: the network weights plus everything needed to map a
/// raw record to controller parameters (normalization statistics, config,
/// training provenance). Serialized as a JSON header + raw weight payload.
class RegressorModel {
 public:
  std::string kind;  // "cnn" | "wavenet"
  CnnConfig cnn_cfg;
  WavenetConfig wn_cfg;
  Normalization norm;
  TrainConfig tcfg;
  std::vector<std::string> targets{"kp", "Ti"};
  std::vector<EpochLog> log;

  std::unique_ptr<CnnNet> cnn;                     // kind == "cnn"
  std::vector<std::unique_ptr<WavenetNet>> wn;     // kind == "wavenet", one per target

  int record_length() const;
  void save(const std::filesystem::path& path);
  static RegressorModel load(const std::filesystem::path& path);
};

/// Minimize empirical MSE of normalized targets over the train split;
/// per-epoch train/val losses are logged. Deterministic for a fixed seed.
RegressorModel train(const DatasetTable& ds, const CnnConfig& arch, const TrainConfig& cfg);

/// Same, but trains one single-output network per controller parameter.
RegressorModel train(const DatasetTable& ds, const WavenetConfig& arch, const TrainConfig& cfg);

struct PredictResult {
  ControllerParams phi;
  bool clamped = false;  // true if an output had to be clamped up to 1e-6
};

/// De-normalized controller parameters for one record (eval-mode forward).
PredictResult predict(RegressorModel& model, const IoRecord& rec);

/// Batched version; identical per-row results to predict().
std::vector<PredictResult> predict_batch(RegressorModel& model, std::span<const IoRecord> recs);

}  // namespace metatune
