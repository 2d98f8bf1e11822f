#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "metatune/dataset.hpp"
#include "metatune/train.hpp"

namespace metatune {

inline constexpr const char* kReportFormatVersion = "metatune-report/1";
inline constexpr const char* kTimingFormatVersion = "metatune-report-timing/1";
inline constexpr const char* kToolVersion = "metatune 1.0.0";

/// Relative rms of (1 - truth/estimate), reported in percent. Pairs whose
/// estimate is zero or non-finite are excluded and counted.
struct RelRms {
  double rms_pct = std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  std::size_t excluded = 0;
};

RelRms relative_rms(std::span<const double> truth, std::span<const double> est);

/// Type-7 (linear-interpolation) quantile of an ascending-sorted sample.
double quantile_sorted(std::span<const double> sorted, double p);

/// Tukey box-plot summary: quartiles plus whiskers at the most extreme data
/// points within 1.5 IQR of the quartiles.
struct FiveNum {
  double median = std::numeric_limits<double>::quiet_NaN();
  double q1 = std::numeric_limits<double>::quiet_NaN();
  double q3 = std::numeric_limits<double>::quiet_NaN();
  double lo_whisker = std::numeric_limits<double>::quiet_NaN();
  double hi_whisker = std::numeric_limits<double>::quiet_NaN();
};

FiveNum five_num(std::vector<double> values);

/// Per-parameter evaluation outcome for one method.
struct ParamStats {
  std::vector<double> errors_pct;  // 100 * (1 - truth/estimate), one per success
  RelRms rms;
  FiveNum box;
};

struct MethodTiming {
  std::vector<double> seconds;  // per-scenario wall clock, success or failure
  double median_s = std::numeric_limits<double>::quiet_NaN();
  double q1_s = std::numeric_limits<double>::quiet_NaN();
  double q3_s = std::numeric_limits<double>::quiet_NaN();
};

struct MethodEval {
  std::string method;          // gb | bb | vrft | cnn | wn
  std::size_t scenarios = 0;   // rows with a usable estimate
  std::size_t failures = 0;    // rows where estimation threw or was invalid
  ParamStats kp;
  ParamStats Ti;
  std::vector<double> margins_deg;  // achieved phase margin against the true plant
  std::size_t margin_undefined = 0;
  std::size_t unstable = 0;
  double margin_median_deg = std::numeric_limits<double>::quiet_NaN();
  double stable_fraction = std::numeric_limits<double>::quiet_NaN();
  MethodTiming timing;  // serialized to the timing sidecar, not the report
};

struct EvalProvenance {
  struct BaseInfo {
    std::string name;
    int N = 0;
    int M = 0;
    std::string manifest_hash;
    std::string rows_hash;  // empty when the rows file was regenerated in memory
  };
  struct ModelInfo {
    std::string file;
    std::string kind;
    int n = 0;
    std::string hash;
  };
  std::string tool = kToolVersion;
  std::string dataset_dir;
  std::vector<BaseInfo> bases;
  std::vector<ModelInfo> models;
};

struct EvalReport {
  std::string version = kReportFormatVersion;
  EvalProvenance provenance;
  ShapingTargets targets;
  std::size_t test_rows = 0;
  std::vector<MethodEval> methods;

  /// Deterministic portion (everything except wall-clock timing).
  std::string to_json() const;
  /// Timing sidecar (inherently run-dependent, kept out of the main report).
  std::string timing_to_json() const;
  static EvalReport from_json(const std::string& text);
  /// Merge a timing sidecar into the per-method timing fields.
  void merge_timing_json(const std::string& text);
};

struct EvalOptions {
  std::vector<std::string> methods = {"gb", "bb", "vrft", "cnn", "wn"};
  std::filesystem::path models_dir;  // required when cnn or wn is requested
};

/// Run every requested method over the test rows of the dataset directory.
/// The directory holds one or more dataset bases that describe the same
/// scenarios at different record lengths; classic methods use the N = 250
/// base and each network uses the base matching its input length.
EvalReport evaluate(const std::filesystem::path& dataset_dir, const EvalOptions& opt);

/// Emit the CSV artifacts (rms table, box-plot stats, phase-margin histogram,
/// timing table). Returns the files written.
std::vector<std::filesystem::path> write_report_csvs(const EvalReport& report,
                                                     const std::filesystem::path& out_dir);

}  // namespace metatune
