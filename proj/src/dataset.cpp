#include "metatune/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "metatune/rng.hpp"
#include "metatune/util.hpp"

namespace metatune {

using ordered_json = nlohmann::ordered_json;

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, std::span<const char> data) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write file: " + p.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

std::string file_hash_hex(const std::filesystem::path& p) {
  const std::string bytes = read_file(p);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

void DatasetManifest::validate() const {
  if (version != kDatasetFormatVersion)
    throw std::runtime_error("DatasetManifest: unsupported version '" + version + "'");
  vp.validate();
  targets.validate(1.0 / (2.0 * vp.Ts));
  if (N < 1 || M < 0) throw std::invalid_argument("DatasetManifest: N >= 1 and M >= 0 required");
  if (!(prbs_amplitude > 0.0)) throw std::invalid_argument("DatasetManifest: PRBS amplitude must be positive");
  double total = 0.0;
  for (const auto& [k, f] : split_fractions) {
    if (k != "train" && k != "val" && k != "test")
      throw std::invalid_argument("DatasetManifest: unknown split '" + k + "'");
    if (f < 0.0) throw std::invalid_argument("DatasetManifest: negative split fraction");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw std::invalid_argument("DatasetManifest: split fractions must sum to 1");
}

std::string DatasetManifest::to_json() const {
  ordered_json j;
  j["version"] = version;
  j["vehicle"] = {{"M0", vp.M0}, {"lf", vp.lf}, {"lr", vp.lr}, {"Jz", vp.Jz},
                  {"Cf", vp.Cf}, {"Cr", vp.Cr}, {"vx", vp.vx}, {"Ts", vp.Ts}};
  j["targets"] = {{"phase_margin_deg", targets.phase_margin_deg},
                  {"crossover_hz", targets.crossover_hz}};
  j["N"] = N;
  j["M"] = M;
  j["snr_db"] = snr_db;
  j["prbs_amplitude"] = prbs_amplitude;
  j["controller_form"] = controller_form == PiForm::integrator ? "integrator" : "as_printed";
  j["split_fractions"] = split_fractions;
  j["master_seed"] = master_seed;
  return j.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  DatasetManifest m;
  m.version = j.at("version").get<std::string>();
  const auto& v = j.at("vehicle");
  m.vp.M0 = v.at("M0");
  m.vp.lf = v.at("lf");
  m.vp.lr = v.at("lr");
  m.vp.Jz = v.at("Jz");
  m.vp.Cf = v.at("Cf");
  m.vp.Cr = v.at("Cr");
  m.vp.vx = v.at("vx");
  m.vp.Ts = v.at("Ts");
  m.targets.phase_margin_deg = j.at("targets").at("phase_margin_deg");
  m.targets.crossover_hz = j.at("targets").at("crossover_hz");
  m.N = j.at("N");
  m.M = j.at("M");
  m.snr_db = j.at("snr_db");
  m.prbs_amplitude = j.at("prbs_amplitude");
  const std::string form = j.at("controller_form");
  if (form == "integrator") {
    m.controller_form = PiForm::integrator;
  } else if (form == "as_printed") {
    m.controller_form = PiForm::as_printed;
  } else {
    throw std::runtime_error("DatasetManifest: unknown controller form '" + form + "'");
  }
  m.split_fractions = j.at("split_fractions").get<std::map<std::string, double>>();
  m.master_seed = j.at("master_seed");
  m.validate();
  return m;
}

namespace {

// Deterministic split assignment: exact counts per fraction (largest remainder
// for the leftover rows), then a seeded shuffle of the index set.
std::vector<std::string> assign_splits(const DatasetManifest& m) {
  std::vector<std::pair<std::string, double>> fr(m.split_fractions.begin(),
                                                 m.split_fractions.end());
  std::vector<int> counts(fr.size(), 0);
  int assigned = 0;
  std::vector<std::pair<double, size_t>> rem;
  for (size_t i = 0; i < fr.size(); ++i) {
    const double exact = fr[i].second * m.M;
    counts[i] = static_cast<int>(std::floor(exact));
    assigned += counts[i];
    rem.push_back({exact - std::floor(exact), i});
  }
  std::sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (int k = 0; k < m.M - assigned; ++k) counts[rem[k % rem.size()].second]++;

  std::vector<std::string> out;
  out.reserve(m.M);
  for (size_t i = 0; i < fr.size(); ++i)
    out.insert(out.end(), counts[i], fr[i].first);

  Rng rng(mix64(m.master_seed ^ 0x5117ca7051137ULL));
  for (int i = m.M - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
    std::swap(out[i], out[j]);
  }
  return out;
}

DatasetRow make_row(const DatasetManifest& m, std::uint64_t i, const std::string& split,
                    int* rejected) {
  const PiForm form = m.controller_form;
  UncertaintySample theta;
  ControllerParams phi;
  PlantRealization plant;
  for (std::uint64_t attempt = 0;; ++attempt) {
    const std::uint64_t ts = mix64(derive_seed(m.master_seed, i, Stream::theta) + attempt);
    theta = sample_theta(ts);
    plant = build_plant(m.vp, theta);
    try {
      phi = tune_pi(plant, m.targets, form);
      break;
    } catch (const TuningError&) {
      if (rejected) ++*rejected;
      if (attempt > 64)
        throw std::runtime_error("generate: tuning kept failing across resamples");
    }
  }
  DatasetRow row;
  row.index = i;
  row.seed = m.master_seed;
  row.split = split;
  row.theta = theta;
  row.phi = phi;
  row.record.Ts = m.vp.Ts;
  row.record.u = prbs(m.N, m.prbs_amplitude, derive_seed(m.master_seed, i, Stream::prbs));
  const auto clean = simulate(plant.sys, row.record.u);
  row.record.y = add_noise(clean, m.snr_db, derive_seed(m.master_seed, i, Stream::noise));
  return row;
}

}  // namespace

DatasetTable generate(const DatasetManifest& manifest, GenerateStats* stats, int threads) {
  manifest.validate();
  const auto splits = assign_splits(manifest);
  DatasetTable table;
  table.manifest = manifest;
  table.rows.resize(manifest.M);

  std::vector<int> rejected_per_chunk;
  if (threads <= 1 || manifest.M < 2 * threads) {
    int rejected = 0;
    for (int i = 0; i < manifest.M; ++i)
      table.rows[i] = make_row(manifest, i, splits[i], &rejected);
    rejected_per_chunk.push_back(rejected);
  } else {
    // Row seeds are order-independent; chunked workers write disjoint slots.
    std::vector<std::thread> pool;
    rejected_per_chunk.assign(threads, 0);
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (int i = t; i < manifest.M; i += threads)
          table.rows[i] = make_row(manifest, i, splits[i], &rejected_per_chunk[t]);
      });
    }
    for (auto& th : pool) th.join();
  }
  if (stats)
    stats->rejected_resampled =
        std::accumulate(rejected_per_chunk.begin(), rejected_per_chunk.end(), 0);
  return table;
}

namespace {

void append_hex_array(std::string& out, std::span<const double> v) {
  out += '[';
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += '"';
    out += hex_double(v[i]);
    out += '"';
  }
  out += ']';
}

std::string row_payload(const DatasetRow& r) {
  std::string s;
  s.reserve(32 * (r.record.u.size() + r.record.y.size()) + 256);
  s += "{\"i\":" + std::to_string(r.index);
  s += ",\"seed\":" + std::to_string(r.seed);
  s += ",\"split\":\"" + r.split + "\"";
  s += ",\"theta\":";
  append_hex_array(s, std::array{r.theta.mu_s, r.theta.m_delta});
  s += ",\"phi\":";
  append_hex_array(s, std::array{r.phi.kp, r.phi.Ti});
  s += ",\"Ts\":\"" + hex_double(r.record.Ts) + "\"";
  s += ",\"u\":";
  append_hex_array(s, r.record.u);
  s += ",\"y\":";
  append_hex_array(s, r.record.y);
  s += '}';
  return s;
}

// Line layout: {"crc":"xxxxxxxx","data":<payload>}\n  -- fixed-width prefix so
// the payload bytes can be checksummed without re-serialization.
constexpr size_t kCrcPrefixLen = 25;  // strlen("{\"crc\":\"xxxxxxxx\",\"data\":")

std::string row_line(const DatasetRow& r) {
  const std::string payload = row_payload(r);
  char crc[9];
  std::snprintf(crc, sizeof(crc), "%08x", crc32(payload));
  return std::string("{\"crc\":\"") + crc + "\",\"data\":" + payload + "}\n";
}

std::vector<double> parse_hex_array(const nlohmann::json& a) {
  std::vector<double> out;
  out.reserve(a.size());
  for (const auto& e : a) out.push_back(parse_hex_double(e.get<std::string>()));
  return out;
}

DatasetRow parse_row_line(const std::string& line, std::uint64_t lineno) {
  const auto fail = [&](const std::string& why) {
    throw std::runtime_error("dataset rows file, line " + std::to_string(lineno) + ": " + why);
  };
  if (line.size() < kCrcPrefixLen + 1 || line.compare(0, 8, "{\"crc\":\"") != 0 ||
      line.compare(16, 9, "\",\"data\":") != 0 || line.back() != '}')
    fail("malformed row frame");
  const std::string stored_crc = line.substr(8, 8);
  const std::string payload = line.substr(kCrcPrefixLen, line.size() - kCrcPrefixLen - 1);
  char crc[9];
  std::snprintf(crc, sizeof(crc), "%08x", crc32(payload));
  if (stored_crc != crc) fail("checksum failure (stored " + stored_crc + ", computed " + crc + ")");

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(payload);
  } catch (const std::exception& e) {
    fail(std::string("payload parse error: ") + e.what());
  }
  DatasetRow r;
  r.index = j.at("i");
  r.seed = j.at("seed");
  r.split = j.at("split");
  const auto theta = parse_hex_array(j.at("theta"));
  const auto phi = parse_hex_array(j.at("phi"));
  if (theta.size() != 2 || phi.size() != 2) fail("theta/phi must have two entries");
  r.theta = {theta[0], theta[1]};
  r.phi = {phi[0], phi[1]};
  r.record.Ts = parse_hex_double(j.at("Ts").get<std::string>());
  r.record.u = parse_hex_array(j.at("u"));
  r.record.y = parse_hex_array(j.at("y"));
  r.record.validate();
  return r;
}

}  // namespace

void save(const DatasetTable& table, const std::filesystem::path& base) {
  table.manifest.validate();
  write_file(base.string() + ".manifest.json", table.manifest.to_json());
  std::string rows;
  for (const auto& r : table.rows) rows += row_line(r);
  write_file(base.string() + ".rows.jsonl", rows);
}

DatasetManifest load_manifest(const std::filesystem::path& manifest_file) {
  return DatasetManifest::from_json(read_file(manifest_file));
}

DatasetTable load(const std::filesystem::path& base) {
  const auto manifest_path = std::filesystem::path(base.string() + ".manifest.json");
  const auto rows_path = std::filesystem::path(base.string() + ".rows.jsonl");
  DatasetTable table;
  table.manifest = load_manifest(manifest_path);
  if (!std::filesystem::exists(rows_path)) return generate(table.manifest);

  const std::string text = read_file(rows_path);
  std::uint64_t lineno = 0;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t nl = text.find('\n', pos);
    if (nl == std::string::npos)
      throw std::runtime_error("dataset rows file: truncated final line");
    ++lineno;
    table.rows.push_back(parse_row_line(text.substr(pos, nl - pos), lineno));
    pos = nl + 1;
  }
  if (static_cast<int>(table.rows.size()) != table.manifest.M)
    throw std::runtime_error("dataset rows file: row count does not match manifest M");
  return table;
}

std::vector<double> input_tensor_cnn(const DatasetRow& row, int expected_n) {
  if (static_cast<int>(row.record.u.size()) != expected_n)
    throw std::invalid_argument("input_tensor_cnn: record length mismatch");
  std::vector<double> out;
  out.reserve(2 * expected_n);
  out.insert(out.end(), row.record.u.begin(), row.record.u.end());
  out.insert(out.end(), row.record.y.begin(), row.record.y.end());
  return out;
}

std::vector<double> input_sequence_wavenet(const DatasetRow& row, int expected_n) {
  if (static_cast<int>(row.record.u.size()) != expected_n)
    throw std::invalid_argument("input_sequence_wavenet: record length mismatch");
  std::vector<double> out;
  out.reserve(2 * expected_n);
  for (int k = 0; k < expected_n; ++k) {
    out.push_back(row.record.u[k]);
    out.push_back(row.record.y[k]);
  }
  return out;
}

std::pair<std::vector<double>, std::vector<double>> deinterleave(std::span<const double> seq) {
  if (seq.size() % 2 != 0) throw std::invalid_argument("deinterleave: odd length");
  std::vector<double> u(seq.size() / 2), y(seq.size() / 2);
  for (size_t k = 0; k < u.size(); ++k) {
    u[k] = seq[2 * k];
    y[k] = seq[2 * k + 1];
  }
  return {std::move(u), std::move(y)};
}

}  // namespace metatune
