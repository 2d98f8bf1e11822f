// Command-line front end: dataset generation, one-off tuning, regressor
// training, benchmark evaluation, and CSV report emission.

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "metatune/dataset.hpp"
#include "metatune/eval.hpp"
#include "metatune/loopshape.hpp"
#include "metatune/sysid.hpp"
#include "metatune/train.hpp"
#include "metatune/util.hpp"
#include "metatune/vehicle.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace metatune;

namespace {

struct GlobalOpts {
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string config_file;

  nlohmann::json config() const {
    if (config_file.empty()) return nlohmann::json::object();
    const auto j = nlohmann::json::parse(read_file(config_file));
    if (!j.is_object()) throw std::runtime_error("--config must contain a JSON object");
    return j;
  }
};

std::string base_name_of(const fs::path& manifest_file) {
  std::string fn = manifest_file.filename().string();
  constexpr const char* kSuffix = ".manifest.json";
  if (fn.ends_with(kSuffix)) return fn.substr(0, fn.size() - std::strlen(kSuffix));
  if (fn.ends_with(".json")) return fn.substr(0, fn.size() - 5);
  return manifest_file.stem().string();
}

void emit(const ordered_json& j) { std::fputs((j.dump(2) + "\n").c_str(), stdout); }

int cmd_generate(const GlobalOpts& g, const std::string& manifest_file,
                 const std::string& out_dir) {
  DatasetManifest man = load_manifest(manifest_file);
  if (g.seed) man.master_seed = *g.seed;
  GenerateStats stats;
  const DatasetTable table = generate(man, &stats, g.threads);
  fs::create_directories(out_dir);
  const fs::path base = fs::path(out_dir) / base_name_of(manifest_file);
  save(table, base);
  ordered_json j;
  j["base"] = base.string();
  j["rows"] = table.manifest.M;
  j["record_length"] = table.manifest.N;
  j["master_seed"] = table.manifest.master_seed;
  j["rejected_resampled"] = stats.rejected_resampled;
  j["manifest_hash"] = file_hash_hex(base.string() + ".manifest.json");
  j["rows_hash"] = file_hash_hex(base.string() + ".rows.jsonl");
  emit(j);
  return 0;
}

int cmd_tune(double mu_s, double m_delta) {
  const VehicleParams vp;
  const ShapingTargets targets;
  const PlantRealization plant = build_plant(vp, {mu_s, m_delta});
  const ControllerParams phi = tune_pi(plant, targets);
  const DesignCheck check = verify_design(plant, phi, targets);
  ordered_json j;
  j["mu_s"] = mu_s;
  j["m_delta"] = m_delta;
  j["kp"] = phi.kp;
  j["Ti"] = phi.Ti;
  j["phase_margin_deg"] = check.report.phase_margin_deg;
  j["gain_crossover_hz"] = check.report.gain_crossover_hz;
  j["closed_loop_stable"] = check.report.closed_loop_stable;
  j["targets_met"] = check.satisfied();
  emit(j);
  return 0;
}

/// Pick the dataset base in `dir` whose record length matches `want_n`;
/// with a single base present, any length is accepted.
fs::path pick_base(const std::string& dir, int want_n, int* found_n) {
  std::vector<std::pair<fs::path, int>> bases;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string fn = entry.path().filename().string();
    constexpr const char* kSuffix = ".manifest.json";
    if (fn.size() <= std::strlen(kSuffix) || !fn.ends_with(kSuffix)) continue;
    const DatasetManifest man = load_manifest(entry.path());
    bases.emplace_back(fs::path(dir) / fn.substr(0, fn.size() - std::strlen(kSuffix)), man.N);
  }
  std::sort(bases.begin(), bases.end());
  if (bases.empty()) throw std::runtime_error("no *.manifest.json found in " + dir);
  for (const auto& [base, n] : bases)
    if (n == want_n) {
      *found_n = n;
      return base;
    }
  if (bases.size() == 1) {
    *found_n = bases.front().second;
    return bases.front().first;
  }
  throw std::runtime_error("no dataset base with record length " + std::to_string(want_n) +
                           " in " + dir);
}

int cmd_train(const GlobalOpts& g, const std::string& arch, const std::string& dataset_dir,
              const std::string& out_file) {
  const nlohmann::json cfg_json = g.config();
  TrainConfig tcfg;
  tcfg.seed = g.seed.value_or(1);
  CnnConfig cnn_cfg;
  WavenetConfig wn_cfg;
  for (const auto& [key, value] : cfg_json.items()) {
    if (key == "lr") tcfg.lr = value.get<double>();
    else if (key == "epochs") tcfg.epochs = value.get<int>();
    else if (key == "batch") tcfg.batch = value.get<int>();
    else if (key == "patience") tcfg.patience = value.get<int>();
    else if (key == "early_stop") tcfg.early_stop = value.get<bool>();
    else if (key == "dropout") cnn_cfg.dropout = value.get<double>();
    else if (key == "record_length") { cnn_cfg.n = value.get<int>(); wn_cfg.n = value.get<int>(); }
    else throw std::runtime_error("unknown --config key '" + key + "'");
  }

  const int want_n = arch == "cnn" ? cnn_cfg.n : wn_cfg.n;
  int found_n = 0;
  const fs::path base = pick_base(dataset_dir, want_n, &found_n);
  if (arch == "cnn") cnn_cfg.n = found_n; else wn_cfg.n = found_n;

  const DatasetTable table = load(base);
  RegressorModel model = arch == "cnn" ? train(table, cnn_cfg, tcfg) : train(table, wn_cfg, tcfg);
  fs::create_directories(fs::path(out_file).parent_path().empty()
                             ? fs::path(".")
                             : fs::path(out_file).parent_path());
  model.save(out_file);

  ordered_json j;
  j["arch"] = arch;
  j["dataset_base"] = base.string();
  j["out"] = out_file;
  j["model_hash"] = file_hash_hex(out_file);
  double seconds = 0.0;
  for (const auto& e : model.log) seconds += e.seconds;
  j["epochs_logged"] = model.log.size();
  j["train_seconds"] = seconds;
  if (!model.log.empty()) {
    j["final_train_mse"] = model.log.back().train_mse;
    if (std::isfinite(model.log.back().val_mse)) j["final_val_mse"] = model.log.back().val_mse;
  }
  emit(j);
  return 0;
}

fs::path timing_sidecar_path(const fs::path& report_file) {
  fs::path p = report_file;
  std::string stem = p.filename().string();
  if (const auto dot = stem.rfind(".json"); dot != std::string::npos && dot == stem.size() - 5)
    stem = stem.substr(0, dot);
  return p.parent_path() / (stem + ".timing.json");
}

int cmd_evaluate(const std::string& dataset_dir, const std::string& models_dir,
                 const std::string& methods_csv, const std::string& out_file) {
  EvalOptions opt;
  opt.methods.clear();
  std::string token;
  for (char c : methods_csv + ",") {
    if (c == ',') {
      if (!token.empty()) opt.methods.push_back(token);
      token.clear();
    } else {
      token += c;
    }
  }
  opt.models_dir = models_dir;
  const EvalReport report = evaluate(dataset_dir, opt);
  if (!fs::path(out_file).parent_path().empty())
    fs::create_directories(fs::path(out_file).parent_path());
  write_file(out_file, report.to_json());
  const fs::path timing = timing_sidecar_path(out_file);
  write_file(timing, report.timing_to_json());

  ordered_json j;
  j["out"] = out_file;
  j["timing"] = timing.string();
  j["test_rows"] = report.test_rows;
  j["methods"] = ordered_json::array();
  for (const auto& me : report.methods) {
    ordered_json mj;
    mj["method"] = me.method;
    mj["kp_rms_pct"] = me.kp.rms.rms_pct;
    mj["Ti_rms_pct"] = me.Ti.rms.rms_pct;
    mj["failures"] = me.failures;
    j["methods"].push_back(std::move(mj));
  }
  emit(j);
  return 0;
}

int cmd_report(const std::string& in_file, const std::string& csv_dir) {
  EvalReport report = EvalReport::from_json(read_file(in_file));
  const fs::path timing = timing_sidecar_path(in_file);
  if (fs::exists(timing)) report.merge_timing_json(read_file(timing));
  const auto written = write_report_csvs(report, csv_dir);
  ordered_json j;
  j["written"] = ordered_json::array();
  for (const auto& p : written) j["written"].push_back(p.string());
  emit(j);
  return 0;
}

int error_out(const std::string& type, const std::string& message) {
  ordered_json j;
  j["error"] = {{"type", type}, {"message", message}};
  std::fputs((j.dump() + "\n").c_str(), stderr);
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"metatune: digital-twin controller-tuning pipeline"};
  app.require_subcommand(1);
  GlobalOpts g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Override the master seed");
  app.add_option("--threads", g.threads, "Worker threads for dataset generation");
  app.add_option("--config", g.config_file, "JSON file with training overrides");

  auto* gen = app.add_subcommand("generate", "Materialize a dataset from a manifest");
  std::string manifest_file, out_dir;
  gen->add_option("--manifest", manifest_file, "Manifest JSON file")->required();
  gen->add_option("--out", out_dir, "Output directory")->required();

  auto* tune = app.add_subcommand("tune", "Tune a PI controller for one plant realization");
  double mu_s = 1.0, m_delta = 0.0;
  tune->add_option("--mu-s", mu_s, "Road-friction scaling");
  tune->add_option("--m-delta", m_delta, "Added mass, kg");

  auto* train_cmd = app.add_subcommand("train", "Train a neural regressor");
  std::string arch, train_dataset, model_out;
  train_cmd->add_option("--arch", arch, "cnn | wavenet")
      ->required()
      ->check(CLI::IsMember({"cnn", "wavenet"}));
  train_cmd->add_option("--dataset", train_dataset, "Dataset directory")->required();
  train_cmd->add_option("--out", model_out, "Model file to write")->required();

  auto* eval_cmd = app.add_subcommand("evaluate", "Benchmark tuning methods on the test rows");
  std::string eval_dataset, models_dir, methods_csv = "gb,bb,vrft,cnn,wn", report_out;
  eval_cmd->add_option("--dataset", eval_dataset, "Dataset directory")->required();
  eval_cmd->add_option("--models", models_dir, "Directory holding *.model files");
  eval_cmd->add_option("--methods", methods_csv, "Comma-separated subset of gb,bb,vrft,cnn,wn");
  eval_cmd->add_option("--out", report_out, "Report JSON to write")->required();

  auto* report_cmd = app.add_subcommand("report", "Emit CSV artifacts from a report");
  std::string report_in, csv_dir;
  report_cmd->add_option("--in", report_in, "Report JSON file")->required();
  report_cmd->add_option("--csv", csv_dir, "Directory for CSV artifacts")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return error_out("usage", e.what());
  }
  if (seed_opt->count() > 0) g.seed = seed_value;

  try {
    if (gen->parsed()) return cmd_generate(g, manifest_file, out_dir);
    if (tune->parsed()) return cmd_tune(mu_s, m_delta);
    if (train_cmd->parsed()) return cmd_train(g, arch, train_dataset, model_out);
    if (eval_cmd->parsed()) return cmd_evaluate(eval_dataset, models_dir, methods_csv, report_out);
    if (report_cmd->parsed()) return cmd_report(report_in, csv_dir);
  } catch (const TuningError& e) {
    return error_out("tuning", e.what());
  } catch (const std::invalid_argument& e) {
    return error_out("invalid-argument", e.what());
  } catch (const std::exception& e) {
    return error_out("runtime", e.what());
  }
  return error_out("usage", "no subcommand given");
}
