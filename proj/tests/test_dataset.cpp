#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "checks.hpp"
#include "metatune/dataset.hpp"

using namespace metatune;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& leaf) {
  const fs::path p = fs::temp_directory_path() / ("metatune_test_" + leaf);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool rows_equal(const DatasetRow& a, const DatasetRow& b) {
  return a.index == b.index && a.seed == b.seed && a.split == b.split &&
         a.theta.mu_s == b.theta.mu_s && a.theta.m_delta == b.theta.m_delta &&
         a.record.u == b.record.u && a.record.y == b.record.y &&
         a.record.Ts == b.record.Ts && a.phi.kp == b.phi.kp && a.phi.Ti == b.phi.Ti;
}

}  // namespace

TEST_CASE("save/load round-trips every row bit for bit") {
  const auto dir = temp_dir("roundtrip");
  const DatasetTable table = generate(checks::small_manifest(3, 32, 7));
  REQUIRE(table.rows.size() == 3);
  save(table, dir / "tiny");
  const DatasetTable back = load(dir / "tiny");
  REQUIRE(back.rows.size() == table.rows.size());
  CHECK(back.manifest.master_seed == table.manifest.master_seed);
  for (size_t i = 0; i < table.rows.size(); ++i)
    CHECK(rows_equal(table.rows[i], back.rows[i]));
}

TEST_CASE("generation is a pure function of the manifest") {
  const DatasetManifest mf = checks::small_manifest(12, 48, 99);
  const DatasetTable a = generate(mf);
  const DatasetTable b = generate(mf);
  REQUIRE(a.rows.size() == b.rows.size());
  for (size_t i = 0; i < a.rows.size(); ++i) CHECK(rows_equal(a.rows[i], b.rows[i]));
}

TEST_CASE("multi-threaded generation matches single-threaded output") {
  const DatasetManifest mf = checks::small_manifest(16, 48, 5);
  const DatasetTable a = generate(mf, nullptr, 1);
  const DatasetTable b = generate(mf, nullptr, 3);
  REQUIRE(a.rows.size() == b.rows.size());
  for (size_t i = 0; i < a.rows.size(); ++i) CHECK(rows_equal(a.rows[i], b.rows[i]));
}

TEST_CASE("a saved dataset can be regenerated from its manifest byte-identically") {
  CHECK(checks::dataset_regen_bitexact(temp_dir("regen")));
}

TEST_CASE("stored labels are exactly the tuner's output for the stored draw") {
  const DatasetManifest mf = checks::small_manifest(50, 32, 314);
  const DatasetTable table = generate(mf);
  for (const DatasetRow& row : table.rows) {
    const ControllerParams phi =
        tune_pi(build_plant(mf.vp, row.theta), mf.targets, mf.controller_form);
    CHECK(row.phi.kp == phi.kp);
    CHECK(row.phi.Ti == phi.Ti);
  }
}

TEST_CASE("the stored record is the noisy response of the stored draw") {
  const DatasetManifest mf = checks::small_manifest(8, 64, 2718);
  const DatasetTable table = generate(mf);
  for (const DatasetRow& row : table.rows) {
    REQUIRE(static_cast<int>(row.record.u.size()) == mf.N);
    REQUIRE(row.record.Ts == mf.vp.Ts);
    // The input must be a two-level excitation at the manifest amplitude and
    // the output the plant response up to the commanded noise level.
    for (double v : row.record.u)
      CHECK((v == mf.prbs_amplitude || v == -mf.prbs_amplitude));
    const auto clean = simulate(build_plant(mf.vp, row.theta).sys, row.record.u);
    std::vector<double> noise(clean.size());
    for (size_t k = 0; k < clean.size(); ++k) noise[k] = row.record.y[k] - clean[k];
    const double snr = 20.0 * std::log10(rms(clean) / rms(noise));
    CHECK(std::abs(snr - mf.snr_db) < 2.0);  // short records: loose statistical band
  }
}

TEST_CASE("a corrupted row line fails the checksum on load") {
  const auto dir = temp_dir("corrupt");
  save(generate(checks::small_manifest(5, 32, 11)), dir / "ds");
  const fs::path rows = dir / "ds.rows.jsonl";
  std::string text = checks::read_file(rows);
  // Flip one payload character in the middle of the file.
  const size_t pos = text.size() / 2;
  text[pos] = text[pos] == '1' ? '2' : '1';
  std::ofstream(rows, std::ios::binary) << text;
  CHECK_THROWS(load(dir / "ds"));
}

TEST_CASE("a truncated rows file is rejected") {
  const auto dir = temp_dir("truncate");
  save(generate(checks::small_manifest(5, 32, 12)), dir / "ds");
  const fs::path rows = dir / "ds.rows.jsonl";
  const std::string text = checks::read_file(rows);
  std::ofstream(rows, std::ios::binary) << text.substr(0, text.size() * 2 / 3);
  CHECK_THROWS(load(dir / "ds"));
}

TEST_CASE("manifest JSON round-trips and rejects foreign versions") {
  DatasetManifest mf = checks::small_manifest(10, 128, 555);
  mf.snr_db = 27.5;
  mf.prbs_amplitude = 0.04;
  const DatasetManifest back = DatasetManifest::from_json(mf.to_json());
  CHECK(back.N == mf.N);
  CHECK(back.M == mf.M);
  CHECK(back.snr_db == mf.snr_db);
  CHECK(back.prbs_amplitude == mf.prbs_amplitude);
  CHECK(back.master_seed == mf.master_seed);
  CHECK(back.vp.Cf == mf.vp.Cf);
  CHECK(back.split_fractions == mf.split_fractions);

  std::string tampered = mf.to_json();
  const auto at = tampered.find(kDatasetFormatVersion);
  REQUIRE(at != std::string::npos);
  tampered.replace(at, std::string(kDatasetFormatVersion).size(), "metatune-ds/9");
  CHECK_THROWS(DatasetManifest::from_json(tampered));
}

TEST_CASE("split sizes honour the configured fractions to within one row") {
  const DatasetManifest mf = checks::small_manifest(37, 16, 64);
  const DatasetTable table = generate(mf);
  int train = 0, val = 0;
  for (const DatasetRow& r : table.rows) {
    if (r.split == "train") ++train;
    else if (r.split == "val") ++val;
    else FAIL("unexpected split tag ", r.split);
  }
  CHECK(train + val == 37);
  CHECK(std::abs(train - 0.9 * 37) <= 1.0);
}

TEST_CASE("a dedicated test manifest tags every row as test") {
  const DatasetManifest mf = checks::small_manifest(9, 16, 65, {{"test", 1.0}});
  for (const DatasetRow& r : generate(mf).rows) CHECK(r.split == "test");
}

TEST_CASE("network input layouts: stacked image rows and interleaved sequence") {
  DatasetRow row;
  row.record.u = {1.0, 2.0};
  row.record.y = {3.0, 4.0};
  row.record.Ts = 0.02;
  CHECK(input_tensor_cnn(row, 2) == std::vector<double>{1.0, 2.0, 3.0, 4.0});
  CHECK(input_sequence_wavenet(row, 2) == std::vector<double>{1.0, 3.0, 2.0, 4.0});
  const auto [u, y] = deinterleave(std::vector<double>{1.0, 3.0, 2.0, 4.0});
  CHECK(u == row.record.u);
  CHECK(y == row.record.y);
  CHECK_THROWS(input_tensor_cnn(row, 3));
  CHECK_THROWS(input_sequence_wavenet(row, 5));
}

TEST_CASE("sampled uncertainty marginals stay uniform after feasibility rejection") {
  // Kolmogorov-Smirnov distance of both marginals against their uniform
  // priors, compared to the 1% critical value 1.6276/sqrt(M).
  const int M = 4000;
  DatasetManifest mf = checks::small_manifest(M, 16, 424242);
  GenerateStats stats;
  const DatasetTable table = generate(mf, &stats);
  REQUIRE(static_cast<int>(table.rows.size()) == M);
  CHECK(stats.rejected_resampled == 0);  // the tuner is feasible on the whole box

  const auto ks_uniform = [M](std::vector<double> v, double lo, double hi) {
    std::sort(v.begin(), v.end());
    double d = 0.0;
    for (int i = 0; i < M; ++i) {
      const double cdf = (v[i] - lo) / (hi - lo);
      d = std::max(d, std::abs(cdf - static_cast<double>(i) / M));
      d = std::max(d, std::abs(static_cast<double>(i + 1) / M - cdf));
    }
    return d;
  };
  std::vector<double> mu, md;
  for (const DatasetRow& r : table.rows) {
    mu.push_back(r.theta.mu_s);
    md.push_back(r.theta.m_delta);
  }
  const double crit = 1.6276 / std::sqrt(static_cast<double>(M));
  CHECK(ks_uniform(mu, kMuSLo, kMuSHi) < crit);
  CHECK(ks_uniform(md, kMDeltaLo, kMDeltaHi) < crit);
}

TEST_CASE("labels follow the controller form recorded in the manifest") {
  DatasetManifest mf = checks::small_manifest(4, 16, 2024);
  mf.controller_form = PiForm::as_printed;
  const DatasetTable table = generate(mf);
  for (const DatasetRow& row : table.rows) {
    const ControllerParams phi =
        tune_pi(build_plant(mf.vp, row.theta), mf.targets, PiForm::as_printed);
    CHECK(row.phi.kp == phi.kp);
    CHECK(row.phi.Ti == phi.Ti);
  }
}
