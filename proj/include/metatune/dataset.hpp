#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "metatune/loopshape.hpp"
#include "metatune/vehicle.hpp"

namespace metatune {

inline constexpr const char* kDatasetFormatVersion = "metatune-ds/1";

/// One scenario: uncertainty draw, noisy record, tuned controller label.
struct DatasetRow {
  std::uint64_t index = 0;
  std::uint64_t seed = 0;  // master seed echoed per row for spot regeneration
  std::string split;       // train | val | test
  UncertaintySample theta;
  IoRecord record;
  ControllerParams phi;
};

/// Everything needed to regenerate a dataset bit-identically.
struct DatasetManifest {
  std::string version = kDatasetFormatVersion;
  VehicleParams vp;
  ShapingTargets targets;
  int N = 250;            // record length
  int M = 0;              // row count
  double snr_db = 30.0;
  double prbs_amplitude = 0.05;
  PiForm controller_form = PiForm::integrator;
  std::map<std::string, double> split_fractions = {{"train", 0.9}, {"val", 0.1}};
  std::uint64_t master_seed = 0;

  void validate() const;
  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text);
};

struct DatasetTable {
  DatasetManifest manifest;
  std::vector<DatasetRow> rows;
};

struct GenerateStats {
  int rejected_resampled = 0;  // tuning infeasibilities hit while sampling
};

/// Materialize the manifest: per row draw theta, tune the label controller,
/// excite with PRBS and add measurement noise. Row seeds are counter-derived
/// from the master seed, so results do not depend on generation order.
DatasetTable generate(const DatasetManifest& manifest, GenerateStats* stats = nullptr,
                      int threads = 1);

/// File pair <base>.manifest.json + <base>.rows.jsonl. Doubles are stored as
/// hexfloat strings and every row line carries a CRC of its payload.
void save(const DatasetTable& table, const std::filesystem::path& base);

/// Load the pair; a manifest without a rows file regenerates the table.
DatasetTable load(const std::filesystem::path& base);

DatasetManifest load_manifest(const std::filesystem::path& manifest_file);

/// 2 x N array (row 0 = u, row 1 = y), row-major.
std::vector<double> input_tensor_cnn(const DatasetRow& row, int expected_n);

/// Interleaved length-2N sequence (u1, y1, u2, y2, ...).
std::vector<double> input_sequence_wavenet(const DatasetRow& row, int expected_n);

/// Inverse of the interleave; returns (u, y).
std::pair<std::vector<double>, std::vector<double>> deinterleave(
    std::span<const double> seq);

}  // namespace metatune
