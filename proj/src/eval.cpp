#include "metatune/eval.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "metatune/loopshape.hpp"
#include "metatune/sysid.hpp"
#include "metatune/util.hpp"

namespace metatune {

using ordered_json = nlohmann::ordered_json;

RelRms relative_rms(std::span<const double> truth, std::span<const double> est) {
  if (truth.size() != est.size())
    throw std::invalid_argument("relative_rms: length mismatch");
  RelRms out;
  double acc = 0.0;
  for (size_t i = 0; i < truth.size(); ++i) {
    if (!std::isfinite(est[i]) || est[i] == 0.0) {
      ++out.excluded;
      continue;
    }
    const double e = 1.0 - truth[i] / est[i];
    if (!std::isfinite(e)) {
      ++out.excluded;
      continue;
    }
    acc += e * e;
    ++out.used;
  }
  if (out.used > 0) out.rms_pct = 100.0 * std::sqrt(acc / static_cast<double>(out.used));
  return out;
}

double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile_sorted: empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("quantile_sorted: p outside [0,1]");
  const double h = static_cast<double>(sorted.size() - 1) * p;
  const size_t lo = static_cast<size_t>(h);
  const double frac = h - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

FiveNum five_num(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("five_num: empty sample");
  std::sort(values.begin(), values.end());
  FiveNum f;
  f.median = quantile_sorted(values, 0.5);
  f.q1 = quantile_sorted(values, 0.25);
  f.q3 = quantile_sorted(values, 0.75);
  const double iqr = f.q3 - f.q1;
  const double lo_fence = f.q1 - 1.5 * iqr;
  const double hi_fence = f.q3 + 1.5 * iqr;
  f.lo_whisker = f.q1;
  f.hi_whisker = f.q3;
  for (double v : values) {
    if (v >= lo_fence) {
      f.lo_whisker = v;
      break;
    }
  }
  for (auto it = values.rbegin(); it != values.rend(); ++it) {
    if (*it <= hi_fence) {
      f.hi_whisker = *it;
      break;
    }
  }
  return f;
}

namespace {

ParamStats param_stats(std::span<const double> truth, std::span<const double> est) {
  ParamStats ps;
  for (size_t i = 0; i < truth.size(); ++i) {
    if (!std::isfinite(est[i]) || est[i] == 0.0) {
      ++ps.rms.excluded;
      continue;
    }
    const double e = 100.0 * (1.0 - truth[i] / est[i]);
    if (!std::isfinite(e)) {
      ++ps.rms.excluded;
      continue;
    }
    ps.errors_pct.push_back(e);
  }
  ps.rms.used = ps.errors_pct.size();
  if (ps.rms.used > 0) {
    double acc = 0.0;
    for (double e : ps.errors_pct) acc += e * e;
    ps.rms.rms_pct = std::sqrt(acc / static_cast<double>(ps.rms.used));
    ps.box = five_num(ps.errors_pct);
  }
  return ps;
}

void finalize_timing(MethodTiming& t) {
  if (t.seconds.empty()) return;
  std::vector<double> s = t.seconds;
  std::sort(s.begin(), s.end());
  t.median_s = quantile_sorted(s, 0.5);
  t.q1_s = quantile_sorted(s, 0.25);
  t.q3_s = quantile_sorted(s, 0.75);
}

struct LoadedBase {
  std::string name;
  DatasetTable table;
  std::string manifest_hash;
  std::string rows_hash;
};

bool same_bits(double a, double b) {
  return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

void check_base_consistency(const LoadedBase& ref, const LoadedBase& other) {
  const auto fail = [&](const std::string& what) {
    throw std::runtime_error("evaluate: dataset bases '" + ref.name + "' and '" + other.name +
                             "' disagree on " + what);
  };
  const DatasetManifest &a = ref.table.manifest, &b = other.table.manifest;
  if (a.M != b.M) fail("row count");
  if (a.targets.phase_margin_deg != b.targets.phase_margin_deg ||
      a.targets.crossover_hz != b.targets.crossover_hz)
    fail("shaping targets");
  if (a.controller_form != b.controller_form) fail("controller form");
  if (a.vp.M0 != b.vp.M0 || a.vp.lf != b.vp.lf || a.vp.lr != b.vp.lr || a.vp.Jz != b.vp.Jz ||
      a.vp.Cf != b.vp.Cf || a.vp.Cr != b.vp.Cr || a.vp.vx != b.vp.vx || a.vp.Ts != b.vp.Ts)
    fail("vehicle parameters");
  for (size_t i = 0; i < ref.table.rows.size(); ++i) {
    const DatasetRow &ra = ref.table.rows[i], &rb = other.table.rows[i];
    if (ra.split != rb.split) fail("row " + std::to_string(i) + " split");
    if (!same_bits(ra.theta.mu_s, rb.theta.mu_s) || !same_bits(ra.theta.m_delta, rb.theta.m_delta))
      fail("row " + std::to_string(i) + " uncertainty draw");
    if (!same_bits(ra.phi.kp, rb.phi.kp) || !same_bits(ra.phi.Ti, rb.phi.Ti))
      fail("row " + std::to_string(i) + " label");
  }
}

constexpr const char* kManifestSuffix = ".manifest.json";

}  // namespace

EvalReport evaluate(const std::filesystem::path& dataset_dir, const EvalOptions& opt) {
  static const std::set<std::string> known = {"gb", "bb", "vrft", "cnn", "wn"};
  std::vector<std::string> methods;
  for (const auto& m : opt.methods) {
    if (!known.contains(m)) throw std::invalid_argument("evaluate: unknown method '" + m + "'");
    if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
  }
  if (methods.empty()) throw std::invalid_argument("evaluate: no methods requested");

  // Discover and load every dataset base in the directory.
  std::vector<std::string> base_names;
  for (const auto& entry : std::filesystem::directory_iterator(dataset_dir)) {
    const std::string fn = entry.path().filename().string();
    if (fn.size() > std::strlen(kManifestSuffix) && fn.ends_with(kManifestSuffix))
      base_names.push_back(fn.substr(0, fn.size() - std::strlen(kManifestSuffix)));
  }
  std::sort(base_names.begin(), base_names.end());
  if (base_names.empty())
    throw std::runtime_error("evaluate: no *.manifest.json found in " + dataset_dir.string());

  std::vector<LoadedBase> bases;
  for (const auto& name : base_names) {
    LoadedBase b;
    b.name = name;
    const auto base_path = dataset_dir / name;
    b.table = load(base_path);
    b.manifest_hash = file_hash_hex(base_path.string() + kManifestSuffix);
    const auto rows_path = std::filesystem::path(base_path.string() + ".rows.jsonl");
    if (std::filesystem::exists(rows_path)) b.rows_hash = file_hash_hex(rows_path);
    bases.push_back(std::move(b));
  }
  for (size_t i = 1; i < bases.size(); ++i) check_base_consistency(bases.front(), bases[i]);

  // Classic methods read the N = 250 base (or the shortest available).
  const LoadedBase* classic = &bases.front();
  for (const auto& b : bases) {
    if (b.table.manifest.N == 250) {
      classic = &b;
      break;
    }
    if (b.table.manifest.N < classic->table.manifest.N) classic = &b;
  }
  const auto base_for_length = [&](int n, const std::string& who) -> const LoadedBase* {
    for (const auto& b : bases)
      if (b.table.manifest.N == n) return &b;
    throw std::runtime_error("evaluate: no dataset base with record length " + std::to_string(n) +
                             " for method " + who);
  };

  // Load models if any network method is requested.
  const bool wants_nn = std::find(methods.begin(), methods.end(), "cnn") != methods.end() ||
                        std::find(methods.begin(), methods.end(), "wn") != methods.end();
  std::map<std::string, RegressorModel> models;  // keyed by kind
  std::vector<EvalProvenance::ModelInfo> model_infos;
  if (wants_nn) {
    if (opt.models_dir.empty())
      throw std::invalid_argument("evaluate: --models directory required for cnn/wn");
    std::vector<std::filesystem::path> model_files;
    for (const auto& entry : std::filesystem::directory_iterator(opt.models_dir))
      if (entry.path().extension() == ".model") model_files.push_back(entry.path());
    std::sort(model_files.begin(), model_files.end());
    for (const auto& f : model_files) {
      RegressorModel m = RegressorModel::load(f);
      EvalProvenance::ModelInfo info;
      info.file = f.filename().string();
      info.kind = m.kind;
      info.n = m.record_length();
      info.hash = file_hash_hex(f);
      if (models.contains(m.kind))
        throw std::runtime_error("evaluate: multiple models of kind '" + m.kind + "' in " +
                                 opt.models_dir.string());
      models.emplace(m.kind, std::move(m));
      model_infos.push_back(std::move(info));
    }
  }

  // Evaluation rows: the test split if present, otherwise every row.
  std::vector<size_t> rows_idx;
  for (size_t i = 0; i < classic->table.rows.size(); ++i)
    if (classic->table.rows[i].split == "test") rows_idx.push_back(i);
  if (rows_idx.empty()) {
    rows_idx.resize(classic->table.rows.size());
    for (size_t i = 0; i < rows_idx.size(); ++i) rows_idx[i] = i;
  }
  if (rows_idx.empty()) throw std::runtime_error("evaluate: dataset has no rows");

  const DatasetManifest& man = classic->table.manifest;
  EvalReport report;
  report.targets = man.targets;
  report.test_rows = rows_idx.size();
  report.provenance.dataset_dir = dataset_dir.string();
  for (const auto& b : bases)
    report.provenance.bases.push_back({b.name, b.table.manifest.N, b.table.manifest.M,
                                       b.manifest_hash, b.rows_hash});
  report.provenance.models = std::move(model_infos);

  using EstimatorFn = std::function<ControllerParams(const DatasetRow&)>;
  for (const auto& mname : methods) {
    const LoadedBase* src = classic;
    EstimatorFn estimate;
    if (mname == "gb") {
      estimate = [&](const DatasetRow& row) {
        const GbResult r = gb_identify(row.record, man.vp);
        return tune_pi(build_plant(man.vp, r.theta), man.targets, man.controller_form);
      };
    } else if (mname == "bb") {
      estimate = [&](const DatasetRow& row) {
        const BbResult r = bb_identify(row.record);
        return tune_from_model(r.model, man.targets, man.controller_form);
      };
    } else if (mname == "vrft") {
      const ReferenceModel mr = ReferenceModel::from_bandwidth(man.targets.crossover_hz, man.vp.Ts);
      estimate = [&, mr](const DatasetRow& row) {
        const VrftResult r = vrft(row.record, mr);
        if (!r.valid) throw std::runtime_error("vrft: invalid design (non-positive gains)");
        return r.phi;
      };
    } else {
      const std::string kind = mname == "cnn" ? "cnn" : "wavenet";
      auto it = models.find(kind);
      if (it == models.end())
        throw std::runtime_error("evaluate: no " + kind + " model found in " +
                                 opt.models_dir.string());
      RegressorModel* model = &it->second;
      src = base_for_length(model->record_length(), mname);
      estimate = [model](const DatasetRow& row) { return predict(*model, row.record).phi; };
    }

    MethodEval me;
    me.method = mname;
    std::vector<double> true_kp, true_Ti, est_kp, est_Ti;
    for (const size_t idx : rows_idx) {
      const DatasetRow& row = src->table.rows[idx];
      const auto t0 = std::chrono::steady_clock::now();
      ControllerParams phi_hat;
      bool ok = true;
      try {
        phi_hat = estimate(row);
      } catch (const std::exception&) {
        ok = false;
      }
      const auto t1 = std::chrono::steady_clock::now();
      me.timing.seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
      if (!ok) {
        ++me.failures;
        continue;
      }
      ++me.scenarios;
      true_kp.push_back(row.phi.kp);
      true_Ti.push_back(row.phi.Ti);
      est_kp.push_back(phi_hat.kp);
      est_Ti.push_back(phi_hat.Ti);
      const DesignCheck dc =
          verify_design(build_plant(man.vp, row.theta), phi_hat, man.targets, man.controller_form);
      if (dc.report.margin_defined)
        me.margins_deg.push_back(dc.report.phase_margin_deg);
      else
        ++me.margin_undefined;
      if (!dc.report.closed_loop_stable) ++me.unstable;
    }
    me.kp = param_stats(true_kp, est_kp);
    me.Ti = param_stats(true_Ti, est_Ti);
    if (!me.margins_deg.empty()) {
      std::vector<double> s = me.margins_deg;
      std::sort(s.begin(), s.end());
      me.margin_median_deg = quantile_sorted(s, 0.5);
    }
    if (me.scenarios > 0)
      me.stable_fraction =
          static_cast<double>(me.scenarios - me.unstable) / static_cast<double>(me.scenarios);
    finalize_timing(me.timing);
    report.methods.push_back(std::move(me));
  }
  return report;
}

// ------------------------------------------------------------ serialization

namespace {

ordered_json num_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

double null_or_num(const nlohmann::json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  return j.get<double>();
}

ordered_json box_to_json(const FiveNum& f) {
  ordered_json j;
  j["median"] = num_or_null(f.median);
  j["q1"] = num_or_null(f.q1);
  j["q3"] = num_or_null(f.q3);
  j["lo_whisker"] = num_or_null(f.lo_whisker);
  j["hi_whisker"] = num_or_null(f.hi_whisker);
  return j;
}

FiveNum box_from_json(const nlohmann::json& j) {
  FiveNum f;
  f.median = null_or_num(j.at("median"));
  f.q1 = null_or_num(j.at("q1"));
  f.q3 = null_or_num(j.at("q3"));
  f.lo_whisker = null_or_num(j.at("lo_whisker"));
  f.hi_whisker = null_or_num(j.at("hi_whisker"));
  return f;
}

ordered_json param_to_json(const ParamStats& ps) {
  ordered_json j;
  j["rms_pct"] = num_or_null(ps.rms.rms_pct);
  j["used"] = ps.rms.used;
  j["excluded"] = ps.rms.excluded;
  j["box"] = box_to_json(ps.box);
  j["errors_pct"] = ps.errors_pct;
  return j;
}

ParamStats param_from_json(const nlohmann::json& j) {
  ParamStats ps;
  ps.rms.rms_pct = null_or_num(j.at("rms_pct"));
  ps.rms.used = j.at("used").get<size_t>();
  ps.rms.excluded = j.at("excluded").get<size_t>();
  ps.box = box_from_json(j.at("box"));
  ps.errors_pct = j.at("errors_pct").get<std::vector<double>>();
  return ps;
}

}  // namespace

std::string EvalReport::to_json() const {
  ordered_json j;
  j["version"] = version;
  j["tool"] = provenance.tool;
  ordered_json ds;
  ds["dir"] = provenance.dataset_dir;
  ds["test_rows"] = test_rows;
  ds["bases"] = ordered_json::array();
  for (const auto& b : provenance.bases) {
    ordered_json bj;
    bj["name"] = b.name;
    bj["N"] = b.N;
    bj["M"] = b.M;
    bj["manifest_hash"] = b.manifest_hash;
    bj["rows_hash"] = b.rows_hash;
    ds["bases"].push_back(std::move(bj));
  }
  j["dataset"] = std::move(ds);
  j["models"] = ordered_json::array();
  for (const auto& m : provenance.models) {
    ordered_json mj;
    mj["file"] = m.file;
    mj["kind"] = m.kind;
    mj["n"] = m.n;
    mj["hash"] = m.hash;
    j["models"].push_back(std::move(mj));
  }
  ordered_json tj;
  tj["phase_margin_deg"] = targets.phase_margin_deg;
  tj["crossover_hz"] = targets.crossover_hz;
  j["targets"] = std::move(tj);
  j["methods"] = ordered_json::array();
  for (const auto& me : methods) {
    ordered_json mj;
    mj["method"] = me.method;
    mj["scenarios"] = me.scenarios;
    mj["failures"] = me.failures;
    ordered_json pj;
    pj["kp"] = param_to_json(me.kp);
    pj["Ti"] = param_to_json(me.Ti);
    mj["parameters"] = std::move(pj);
    ordered_json gj;
    gj["median_deg"] = num_or_null(me.margin_median_deg);
    gj["undefined"] = me.margin_undefined;
    gj["unstable"] = me.unstable;
    gj["stable_fraction"] = num_or_null(me.stable_fraction);
    gj["values_deg"] = me.margins_deg;
    mj["margins"] = std::move(gj);
    j["methods"].push_back(std::move(mj));
  }
  return j.dump(2) + "\n";
}

std::string EvalReport::timing_to_json() const {
  ordered_json j;
  j["version"] = kTimingFormatVersion;
  j["methods"] = ordered_json::array();
  for (const auto& me : methods) {
    ordered_json mj;
    mj["method"] = me.method;
    mj["median_s"] = num_or_null(me.timing.median_s);
    mj["q1_s"] = num_or_null(me.timing.q1_s);
    mj["q3_s"] = num_or_null(me.timing.q3_s);
    mj["seconds"] = me.timing.seconds;
    j["methods"].push_back(std::move(mj));
  }
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  EvalReport r;
  r.version = j.at("version").get<std::string>();
  if (r.version != kReportFormatVersion)
    throw std::runtime_error("report version mismatch: got '" + r.version + "', expected '" +
                             kReportFormatVersion + "'");
  r.provenance.tool = j.at("tool").get<std::string>();
  const auto& ds = j.at("dataset");
  r.provenance.dataset_dir = ds.at("dir").get<std::string>();
  r.test_rows = ds.at("test_rows").get<size_t>();
  for (const auto& bj : ds.at("bases")) {
    EvalProvenance::BaseInfo b;
    b.name = bj.at("name").get<std::string>();
    b.N = bj.at("N").get<int>();
    b.M = bj.at("M").get<int>();
    b.manifest_hash = bj.at("manifest_hash").get<std::string>();
    b.rows_hash = bj.at("rows_hash").get<std::string>();
    r.provenance.bases.push_back(std::move(b));
  }
  for (const auto& mj : j.at("models")) {
    EvalProvenance::ModelInfo m;
    m.file = mj.at("file").get<std::string>();
    m.kind = mj.at("kind").get<std::string>();
    m.n = mj.at("n").get<int>();
    m.hash = mj.at("hash").get<std::string>();
    r.provenance.models.push_back(std::move(m));
  }
  r.targets.phase_margin_deg = j.at("targets").at("phase_margin_deg").get<double>();
  r.targets.crossover_hz = j.at("targets").at("crossover_hz").get<double>();
  for (const auto& mj : j.at("methods")) {
    MethodEval me;
    me.method = mj.at("method").get<std::string>();
    me.scenarios = mj.at("scenarios").get<size_t>();
    me.failures = mj.at("failures").get<size_t>();
    me.kp = param_from_json(mj.at("parameters").at("kp"));
    me.Ti = param_from_json(mj.at("parameters").at("Ti"));
    const auto& gj = mj.at("margins");
    me.margin_median_deg = null_or_num(gj.at("median_deg"));
    me.margin_undefined = gj.at("undefined").get<size_t>();
    me.unstable = gj.at("unstable").get<size_t>();
    me.stable_fraction = null_or_num(gj.at("stable_fraction"));
    me.margins_deg = gj.at("values_deg").get<std::vector<double>>();
    r.methods.push_back(std::move(me));
  }
  return r;
}

void EvalReport::merge_timing_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  const std::string v = j.at("version").get<std::string>();
  if (v != kTimingFormatVersion)
    throw std::runtime_error("timing sidecar version mismatch: got '" + v + "'");
  for (const auto& mj : j.at("methods")) {
    const std::string name = mj.at("method").get<std::string>();
    for (auto& me : methods) {
      if (me.method != name) continue;
      me.timing.median_s = null_or_num(mj.at("median_s"));
      me.timing.q1_s = null_or_num(mj.at("q1_s"));
      me.timing.q3_s = null_or_num(mj.at("q3_s"));
      me.timing.seconds = mj.at("seconds").get<std::vector<double>>();
    }
  }
}

// ------------------------------------------------------------------- CSVs

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

std::vector<std::filesystem::path> write_report_csvs(const EvalReport& report,
                                                     const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;

  {
    std::string csv = "method,kp_rms_pct,kp_excluded,Ti_rms_pct,Ti_excluded,scenarios,failures\n";
    for (const auto& me : report.methods)
      csv += me.method + "," + fmt(me.kp.rms.rms_pct) + "," + std::to_string(me.kp.rms.excluded) +
             "," + fmt(me.Ti.rms.rms_pct) + "," + std::to_string(me.Ti.rms.excluded) + "," +
             std::to_string(me.scenarios) + "," + std::to_string(me.failures) + "\n";
    const auto p = out_dir / "rms_table.csv";
    write_file(p, csv);
    written.push_back(p);
  }

  {
    std::string csv = "method,parameter,median,q1,q3,lo_whisker,hi_whisker\n";
    for (const auto& me : report.methods) {
      const auto row = [&](const char* param, const FiveNum& b) {
        csv += me.method + std::string(",") + param + "," + fmt(b.median) + "," + fmt(b.q1) + "," +
               fmt(b.q3) + "," + fmt(b.lo_whisker) + "," + fmt(b.hi_whisker) + "\n";
      };
      row("kp", me.kp.box);
      row("Ti", me.Ti.box);
    }
    const auto p = out_dir / "boxplot_stats.csv";
    write_file(p, csv);
    written.push_back(p);
  }

  {
    std::string csv = "method,bin_lo_deg,bin_hi_deg,count\n";
    for (const auto& me : report.methods) {
      if (me.margins_deg.empty()) continue;
      const auto [mn_it, mx_it] = std::minmax_element(me.margins_deg.begin(), me.margins_deg.end());
      const int lo = static_cast<int>(std::floor(*mn_it));
      int hi = static_cast<int>(std::ceil(*mx_it));
      if (hi <= lo) hi = lo + 1;
      std::vector<size_t> counts(static_cast<size_t>(hi - lo), 0);
      for (double v : me.margins_deg) {
        auto bin = static_cast<long>(std::floor(v)) - lo;
        bin = std::clamp(bin, 0L, static_cast<long>(counts.size()) - 1);
        ++counts[static_cast<size_t>(bin)];
      }
      for (size_t b = 0; b < counts.size(); ++b)
        csv += me.method + "," + std::to_string(lo + static_cast<int>(b)) + "," +
               std::to_string(lo + static_cast<int>(b) + 1) + "," + std::to_string(counts[b]) +
               "\n";
    }
    const auto p = out_dir / "phase_margin.csv";
    write_file(p, csv);
    written.push_back(p);
  }

  const bool any_timing = std::any_of(report.methods.begin(), report.methods.end(),
                                      [](const MethodEval& m) { return !m.timing.seconds.empty(); });
  if (any_timing) {
    std::string csv = "method,median_s,q1_s,q3_s,scenarios\n";
    for (const auto& me : report.methods) {
      if (me.timing.seconds.empty()) continue;
      csv += me.method + "," + fmt(me.timing.median_s) + "," + fmt(me.timing.q1_s) + "," +
             fmt(me.timing.q3_s) + "," + std::to_string(me.timing.seconds.size()) + "\n";
    }
    const auto p = out_dir / "timing.csv";
    write_file(p, csv);
    written.push_back(p);
  }
  return written;
}

}  // namespace metatune
