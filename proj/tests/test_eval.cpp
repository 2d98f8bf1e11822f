#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "checks.hpp"
#include "metatune/dataset.hpp"
#include "metatune/eval.hpp"
#include "metatune/loopshape.hpp"

using namespace metatune;
using doctest::Approx;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& leaf) {
  const fs::path p = fs::temp_directory_path() / ("metatune_eval_" + leaf);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int line_count(const fs::path& p) {
  std::ifstream in(p);
  int n = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

// One near-noise-free test base the classic estimators can be run against.
fs::path make_eval_dir(const std::string& leaf, int rows) {
  const fs::path dir = temp_dir(leaf);
  DatasetManifest mf = checks::small_manifest(rows, 250, 811, {{"test", 1.0}});
  mf.snr_db = 300.0;  // noise amplitude at the arithmetic floor
  save(generate(mf), dir / "test_n250");
  return dir;
}

}  // namespace

TEST_CASE("relative rms error: hand values, permutation, exclusions") {
  const RelRms one = relative_rms(std::vector<double>{2.0}, std::vector<double>{2.5});
  CHECK(one.rms_pct == Approx(20.0).epsilon(1e-14));
  CHECK(one.used == 1);
  CHECK(one.excluded == 0);

  // Order of pairs is irrelevant.
  const std::vector<double> t{1.0, 2.0, 4.0}, e{1.1, 1.9, 4.4};
  const std::vector<double> tp{4.0, 1.0, 2.0}, ep{4.4, 1.1, 1.9};
  CHECK(relative_rms(t, e).rms_pct == Approx(relative_rms(tp, ep).rms_pct).epsilon(1e-14));

  // Exact estimates give exactly zero.
  CHECK(relative_rms(t, t).rms_pct == 0.0);

  // Zero or non-finite estimates are excluded and counted.
  const std::vector<double> bad{1.1, 0.0, std::numeric_limits<double>::quiet_NaN()};
  const RelRms r = relative_rms(t, bad);
  CHECK(r.used == 1);
  CHECK(r.excluded == 2);
  CHECK(r.rms_pct == Approx(100.0 * std::abs(1.0 - 1.0 / 1.1)).epsilon(1e-12));

  // No usable pairs: undefined rms, everything excluded.
  const RelRms none = relative_rms(std::vector<double>{1.0}, std::vector<double>{0.0});
  CHECK(none.used == 0);
  CHECK(std::isnan(none.rms_pct));
}

TEST_CASE("linear-interpolation quantiles on a sorted sample") {
  const std::vector<double> v{10.0, 20.0, 30.0, 40.0};
  CHECK(quantile_sorted(v, 0.0) == 10.0);
  CHECK(quantile_sorted(v, 1.0) == 40.0);
  CHECK(quantile_sorted(v, 0.5) == Approx(25.0).epsilon(1e-14));
  CHECK(quantile_sorted(v, 1.0 / 3.0) == Approx(20.0).epsilon(1e-12));
}

TEST_CASE("box-plot summary with whiskers clipped to the data") {
  const FiveNum f = five_num({4.0, 100.0, 1.0, 3.0, 2.0, 7.0, 5.0, 6.0});
  CHECK(f.median == Approx(4.5).epsilon(1e-14));
  CHECK(f.q1 == Approx(2.75).epsilon(1e-14));
  CHECK(f.q3 == Approx(6.25).epsilon(1e-14));
  // 1.5 IQR fences are (-2.5, 11.5): the outlier 100 stays outside.
  CHECK(f.lo_whisker == 1.0);
  CHECK(f.hi_whisker == 7.0);
}

TEST_CASE("report JSON round-trips numerically, including undefined medians") {
  EvalReport rep;
  rep.targets = ShapingTargets{};
  rep.test_rows = 3;
  rep.provenance.dataset_dir = "somewhere";
  rep.provenance.bases.push_back({"test_n250", 250, 3, "abc", "def"});

  MethodEval m;
  m.method = "gb";
  m.scenarios = 3;
  m.failures = 1;
  m.kp.errors_pct = {0.5, -0.25, 0.125};
  m.kp.rms = relative_rms(std::vector<double>{1.0, 2.0, 4.0},
                          std::vector<double>{1.1, 1.9, 4.4});
  m.kp.box = five_num({0.5, -0.25, 0.125});
  m.Ti = m.kp;
  m.margins_deg = {80.1, 79.9, 80.0};
  m.margin_median_deg = 80.0;
  m.stable_fraction = 1.0;
  rep.methods.push_back(m);

  MethodEval empty;
  empty.method = "vrft";
  empty.scenarios = 0;
  empty.failures = 3;  // medians stay NaN and must survive the round trip
  rep.methods.push_back(empty);

  const EvalReport back = EvalReport::from_json(rep.to_json());
  REQUIRE(back.methods.size() == 2);
  CHECK(back.test_rows == 3);
  CHECK(back.provenance.bases.at(0).name == "test_n250");
  CHECK(back.methods[0].kp.errors_pct == rep.methods[0].kp.errors_pct);
  CHECK(back.methods[0].kp.rms.rms_pct ==
        Approx(rep.methods[0].kp.rms.rms_pct).epsilon(1e-12));
  CHECK(back.methods[0].margin_median_deg == 80.0);
  CHECK(std::isnan(back.methods[1].margin_median_deg));
  CHECK(std::isnan(back.methods[1].kp.rms.rms_pct));

  // The deterministic report serialization is stable under a round trip.
  CHECK(back.to_json() == rep.to_json());
}

TEST_CASE("oracle estimates reproduce the stored labels and margins") {
  // Feeding the truth back as the estimate is the identity of the error
  // pipeline: zero errors, and margins equal to the label margins.
  const DatasetTable ds = generate(checks::small_manifest(6, 64, 99, {{"test", 1.0}}));
  std::vector<double> kp_t, kp_e;
  for (const DatasetRow& r : ds.rows) {
    kp_t.push_back(r.phi.kp);
    kp_e.push_back(r.phi.kp);
  }
  CHECK(relative_rms(kp_t, kp_e).rms_pct == 0.0);
  for (const DatasetRow& r : ds.rows) {
    const DesignCheck chk =
        verify_design(build_plant(ds.manifest.vp, r.theta), r.phi, ds.manifest.targets);
    CHECK(chk.satisfied());
  }
}

TEST_CASE("evaluation harness: classic methods on a near-noise-free test set") {
  const fs::path dir = make_eval_dir("harness", 12);
  EvalOptions opt;
  opt.methods = {"gb", "bb", "vrft"};
  const EvalReport rep = evaluate(dir, opt);

  CHECK(rep.test_rows == 12);
  REQUIRE(rep.methods.size() == 3);
  CHECK(rep.provenance.bases.size() == 1);
  CHECK(!rep.provenance.bases[0].manifest_hash.empty());

  const MethodEval* gb = nullptr;
  const MethodEval* vr = nullptr;
  for (const MethodEval& m : rep.methods) {
    if (m.method == "gb") gb = &m;
    if (m.method == "vrft") vr = &m;
  }
  REQUIRE(gb != nullptr);
  REQUIRE(vr != nullptr);

  // Physical identification is exact without noise.
  CHECK(gb->scenarios == 12);
  CHECK(gb->failures == 0);
  CHECK(gb->kp.rms.rms_pct < 1e-3);
  CHECK(gb->Ti.rms.rms_pct < 1e-3);
  CHECK(gb->stable_fraction == 1.0);
  CHECK(gb->margin_median_deg > 79.5);
  CHECK(gb->margin_median_deg < 80.5);

  // The reference-model method carries its structural integral-time bias.
  CHECK(vr->Ti.rms.rms_pct > 3.0 * gb->Ti.rms.rms_pct);

  // Every per-scenario timing sample was collected with a monotonic clock.
  for (const MethodEval& m : rep.methods) {
    CHECK(m.timing.seconds.size() == rep.test_rows);
    for (double s : m.timing.seconds) CHECK(s >= 0.0);
  }

  SUBCASE("stored rms is recomputable from the stored error vectors") {
    for (const MethodEval& m : rep.methods) {
      for (const ParamStats* ps : {&m.kp, &m.Ti}) {
        if (ps->errors_pct.empty()) continue;
        double ss = 0.0;
        for (double e : ps->errors_pct) ss += e * e;
        const double rms = std::sqrt(ss / ps->errors_pct.size());
        CHECK(rms == Approx(ps->rms.rms_pct).epsilon(1e-12));
      }
    }
  }

  SUBCASE("the deterministic report is identical across repeat runs") {
    const EvalReport rep2 = evaluate(dir, opt);
    CHECK(rep.to_json() == rep2.to_json());
  }

  SUBCASE("timing sidecar merges back into the report") {
    const std::string sidecar = rep.timing_to_json();
    EvalReport bare = EvalReport::from_json(rep.to_json());
    CHECK(bare.methods[0].timing.seconds.empty());
    bare.merge_timing_json(sidecar);
    CHECK(bare.methods[0].timing.seconds == rep.methods[0].timing.seconds);
    CHECK(bare.methods[0].timing.median_s == rep.methods[0].timing.median_s);
  }

  SUBCASE("CSV artifacts have the advertised shapes") {
    const fs::path out = temp_dir("csv");
    const auto files = write_report_csvs(rep, out);
    CHECK(files.size() == 4);
    // One box-plot row per method and parameter, plus the header.
    CHECK(line_count(out / "boxplot_stats.csv") ==
          1 + static_cast<int>(rep.methods.size()) * 2);
    CHECK(line_count(out / "rms_table.csv") == 1 + static_cast<int>(rep.methods.size()));
    CHECK(line_count(out / "timing.csv") == 1 + static_cast<int>(rep.methods.size()));
    CHECK(line_count(out / "phase_margin.csv") > 1);
  }
}

TEST_CASE("evaluation errors are informative") {
  const fs::path dir = temp_dir("empty");
  CHECK_THROWS(evaluate(dir, EvalOptions{}));

  // Requesting a network method without a model directory must fail early.
  const fs::path ds = make_eval_dir("nomodels", 3);
  EvalOptions opt;
  opt.methods = {"cnn"};
  CHECK_THROWS(evaluate(ds, opt));
}
