#include "metatune/train.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "metatune/util.hpp"

namespace metatune {

using ordered_json = nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0))
    throw std::invalid_argument("TrainConfig: betas must lie in (0, 1)");
  if (!(eps > 0.0)) throw std::invalid_argument("TrainConfig: eps must be positive");
  if (epochs < 1 || batch < 1 || patience < 1)
    throw std::invalid_argument("TrainConfig: epochs, batch and patience must be >= 1");
}

Adam::Adam(std::vector<Param*> params, const TrainConfig& cfg)
    : params_(std::move(params)), lr_(cfg.lr), b1_(cfg.beta1), b2_(cfg.beta2), eps_(cfg.eps) {
  for (Param* p : params_) {
    m_.emplace_back(Tensor(p->value.shape));
    v_.emplace_back(Tensor(p->value.shape));
  }
}

void Adam::zero_grad() {
  for (Param* p : params_) p->grad.zero();
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    for (std::int64_t j = 0; j < p.value.numel(); ++j) {
      const double g = p.grad.data[j];
      double& m = m_[i].data[j];
      double& v = v_[i].data[j];
      m = b1_ * m + (1.0 - b1_) * g;
      v = b2_ * v + (1.0 - b2_) * g * g;
      p.value.data[j] -= lr_ * (m / c1) / (std::sqrt(v / c2) + eps_);
    }
    ++p.version;
  }
}

namespace {

struct SplitIdx {
  std::vector<int> train, val;
};

SplitIdx split_indices(const DatasetTable& ds) {
  SplitIdx s;
  for (int i = 0; i < static_cast<int>(ds.rows.size()); ++i) {
    if (ds.rows[i].split == "train") s.train.push_back(i);
    else if (ds.rows[i].split == "val") s.val.push_back(i);
  }
  return s;
}

Normalization compute_norm(const DatasetTable& ds, const std::vector<int>& tr) {
  Normalization nz;
  double su = 0, su2 = 0, sy = 0, sy2 = 0;
  std::int64_t n = 0;
  double skp = 0, skp2 = 0, sti = 0, sti2 = 0;
  for (int i : tr) {
    const auto& r = ds.rows[i];
    for (double v : r.record.u) { su += v; su2 += v * v; }
    for (double v : r.record.y) { sy += v; sy2 += v * v; }
    n += static_cast<std::int64_t>(r.record.u.size());
    skp += r.phi.kp; skp2 += r.phi.kp * r.phi.kp;
    sti += r.phi.Ti; sti2 += r.phi.Ti * r.phi.Ti;
  }
  const auto stat = [](double s, double s2, double m) {
    const double mean = s / m;
    double var = s2 / m - mean * mean;
    if (var < 0.0) var = 0.0;
    double sd = std::sqrt(var);
    if (sd < 1e-12) sd = 1.0;  // constant channel/target: normalize to zero
    return std::pair{mean, sd};
  };
  const double dn = static_cast<double>(n), dm = static_cast<double>(tr.size());
  auto [mu, du] = stat(su, su2, dn);
  auto [my, dy] = stat(sy, sy2, dn);
  auto [mk, dk] = stat(skp, skp2, dm);
  auto [mt, dt] = stat(sti, sti2, dm);
  nz.x_mean = {mu, my};
  nz.x_std = {du, dy};
  nz.t_mean = {mk, mt};
  nz.t_std = {dk, dt};
  return nz;
}

// Normalized per-example input features, laid out for the given architecture.
void fill_cnn_input(const IoRecord& r, const Normalization& nz, double* dst) {
  const size_t n = r.u.size();
  for (size_t k = 0; k < n; ++k) dst[k] = (r.u[k] - nz.x_mean[0]) / nz.x_std[0];
  for (size_t k = 0; k < n; ++k) dst[n + k] = (r.y[k] - nz.x_mean[1]) / nz.x_std[1];
}

void fill_wn_input(const IoRecord& r, const Normalization& nz, double* dst) {
  const size_t n = r.u.size();
  for (size_t k = 0; k < n; ++k) {
    dst[2 * k] = (r.u[k] - nz.x_mean[0]) / nz.x_std[0];
    dst[2 * k + 1] = (r.y[k] - nz.x_mean[1]) / nz.x_std[1];
  }
}

template <class Net>
std::vector<Tensor> snapshot_state(Net& net) {
  std::vector<Tensor> out;
  for (Param* p : net.state()) out.push_back(p->value);
  return out;
}

template <class Net>
void restore_state(Net& net, const std::vector<Tensor>& snap) {
  auto st = net.state();
  for (size_t i = 0; i < st.size(); ++i) {
    st[i]->value = snap[i];
    ++st[i]->version;
  }
}

template <class Net>
void fit(Net& net, const std::vector<double>& X, const std::vector<std::int64_t>& in_shape,
         const std::vector<double>& Y, int out_w, const std::vector<int>& train_idx,
         const std::vector<int>& val_idx, const TrainConfig& cfg, Rng& shuffle_rng,
         const std::string& label, std::vector<EpochLog>& log) {
  const std::int64_t ie = Tensor::numel_of(in_shape);
  const auto gather = [&](std::span<const int> idx, Tensor& xb, Tensor& yb) {
    std::vector<std::int64_t> xs{static_cast<std::int64_t>(idx.size())};
    xs.insert(xs.end(), in_shape.begin(), in_shape.end());
    xb = Tensor(xs);
    yb = Tensor({static_cast<std::int64_t>(idx.size()), out_w});
    for (size_t j = 0; j < idx.size(); ++j) {
      std::copy_n(X.begin() + static_cast<std::int64_t>(idx[j]) * ie, ie,
                  xb.data.begin() + static_cast<std::int64_t>(j) * ie);
      std::copy_n(Y.begin() + static_cast<std::int64_t>(idx[j]) * out_w, out_w,
                  yb.data.begin() + static_cast<std::int64_t>(j) * out_w);
    }
  };

  Adam opt(net.trainable(), cfg);
  std::vector<int> order = train_idx;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best;
  bool have_best = false;
  int bad = 0;
  Tensor xb, yb;
  for (int ep = 0; ep < cfg.epochs; ++ep) {
    const auto t0 = std::chrono::steady_clock::now();
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.next_u64() % i]);
    double acc = 0.0;
    std::int64_t seen = 0;
    for (size_t s = 0; s < order.size(); s += static_cast<size_t>(cfg.batch)) {
      const size_t e = std::min(order.size(), s + static_cast<size_t>(cfg.batch));
      gather(std::span(order).subspan(s, e - s), xb, yb);
      opt.zero_grad();
      Tensor out = net.forward(xb, true);
      Tensor g;
      const double loss = mse_loss(out, yb, &g);
      if (!std::isfinite(loss))
        throw std::runtime_error("training diverged (non-finite loss) at epoch " +
                                 std::to_string(ep) + ", batch offset " + std::to_string(s));
      net.backward(g);
      opt.step();
      acc += loss * static_cast<double>(e - s);
      seen += static_cast<std::int64_t>(e - s);
    }
    double val = std::numeric_limits<double>::quiet_NaN();
    if (!val_idx.empty()) {
      double va = 0.0;
      for (size_t s = 0; s < val_idx.size(); s += static_cast<size_t>(cfg.batch)) {
        const size_t e = std::min(val_idx.size(), s + static_cast<size_t>(cfg.batch));
        gather(std::span(val_idx).subspan(s, e - s), xb, yb);
        Tensor out = net.forward(xb, false);
        va += mse_loss(out, yb, nullptr) * static_cast<double>(e - s);
      }
      val = va / static_cast<double>(val_idx.size());
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.push_back({label, ep, acc / static_cast<double>(seen), val, secs});
    if (cfg.early_stop) {
      if (val < best_val - 1e-12) {
        best_val = val;
        bad = 0;
        best = snapshot_state(net);
        have_best = true;
      } else if (++bad >= cfg.patience) {
        break;
      }
    }
  }
  if (cfg.early_stop && have_best) restore_state(net, best);
}

void check_record_lengths(const DatasetTable& ds, int n) {
  if (ds.rows.empty()) throw std::invalid_argument("train: dataset has no rows");
  for (const auto& r : ds.rows)
    if (static_cast<int>(r.record.u.size()) != n)
      throw std::invalid_argument("train: record length " + std::to_string(r.record.u.size()) +
                                  " does not match architecture length " + std::to_string(n));
}

}  // namespace

RegressorModel train(const DatasetTable& ds, const CnnConfig& arch, const TrainConfig& cfg) {
  arch.validate();
  cfg.validate();
  if (arch.outputs != 2)
    throw std::invalid_argument("train: the CNN head must emit exactly (kp, Ti)");
  check_record_lengths(ds, arch.n);
  const SplitIdx idx = split_indices(ds);
  if (idx.train.empty()) throw std::invalid_argument("train: train split is empty");
  if (cfg.early_stop && idx.val.empty())
    throw std::invalid_argument("train: early stopping needs a non-empty val split");

  RegressorModel model;
  model.kind = "cnn";
  model.cnn_cfg = arch;
  model.tcfg = cfg;
  model.norm = compute_norm(ds, idx.train);
  const int M = static_cast<int>(ds.rows.size());
  std::vector<double> X(static_cast<size_t>(M) * 2 * arch.n);
  std::vector<double> Y(static_cast<size_t>(M) * 2);
  for (int i = 0; i < M; ++i) {
    fill_cnn_input(ds.rows[i].record, model.norm, X.data() + static_cast<size_t>(i) * 2 * arch.n);
    Y[2 * i] = (ds.rows[i].phi.kp - model.norm.t_mean[0]) / model.norm.t_std[0];
    Y[2 * i + 1] = (ds.rows[i].phi.Ti - model.norm.t_mean[1]) / model.norm.t_std[1];
  }
  model.cnn = std::make_unique<CnnNet>(arch, cfg.seed);
  Rng shuffle(mix64(cfg.seed ^ 0x0fe72a11c5ULL));
  fit(*model.cnn, X, {1, 2, arch.n}, Y, 2, idx.train, idx.val, cfg, shuffle, "", model.log);
  return model;
}

RegressorModel train(const DatasetTable& ds, const WavenetConfig& arch, const TrainConfig& cfg) {
  arch.validate();
  cfg.validate();
  check_record_lengths(ds, arch.n);
  const SplitIdx idx = split_indices(ds);
  if (idx.train.empty()) throw std::invalid_argument("train: train split is empty");

  RegressorModel model;
  model.kind = "wavenet";
  model.wn_cfg = arch;
  model.tcfg = cfg;
  model.tcfg.early_stop = false;  // fixed-epoch schedule for this architecture
  model.norm = compute_norm(ds, idx.train);
  const int M = static_cast<int>(ds.rows.size());
  std::vector<double> X(static_cast<size_t>(M) * 2 * arch.n);
  for (int i = 0; i < M; ++i)
    fill_wn_input(ds.rows[i].record, model.norm, X.data() + static_cast<size_t>(i) * 2 * arch.n);
  for (size_t t = 0; t < model.targets.size(); ++t) {
    std::vector<double> Y(static_cast<size_t>(M));
    for (int i = 0; i < M; ++i) {
      const double raw = t == 0 ? ds.rows[i].phi.kp : ds.rows[i].phi.Ti;
      Y[i] = (raw - model.norm.t_mean[t]) / model.norm.t_std[t];
    }
    model.wn.push_back(
        std::make_unique<WavenetNet>(arch, mix64(cfg.seed ^ (0xbead5ULL + t))));
    Rng shuffle(mix64(cfg.seed ^ (0x0fe72a11c5ULL + 977 * t)));
    fit(*model.wn.back(), X, {1, 2 * arch.n}, Y, 1, idx.train, idx.val, model.tcfg, shuffle,
        model.targets[t], model.log);
  }
  return model;
}

int RegressorModel::record_length() const {
  return kind == "cnn" ? cnn_cfg.n : wn_cfg.n;
}

namespace {

ordered_json hexvec(const std::vector<double>& v) {
  ordered_json a = ordered_json::array();
  for (double x : v) a.push_back(hex_double(x));
  return a;
}

std::vector<double> parse_hexvec(const nlohmann::json& a) {
  std::vector<double> out;
  for (const auto& e : a) out.push_back(parse_hex_double(e.get<std::string>()));
  return out;
}

void append_doubles_le(std::string& s, const std::vector<double>& v) {
  for (double x : v) {
    const auto u = std::bit_cast<std::uint64_t>(x);
    for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
  }
}

std::uint64_t read_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

constexpr char kModelMagic[9] = "MTNNBIN1";  // 8 bytes on disk

template <class Fn>
void visit_model_tensors(RegressorModel& m, Fn&& fn) {
  if (m.kind == "cnn") {
    for (Param* p : m.cnn->state()) fn("net." + p->name, *p);
  } else {
    for (size_t t = 0; t < m.wn.size(); ++t)
      for (Param* p : m.wn[t]->state()) fn(m.targets[t] + "." + p->name, *p);
  }
}

}  // namespace

void RegressorModel::save(const std::filesystem::path& path) {
  ordered_json h;
  h["version"] = kModelFormatVersion;
  h["kind"] = kind;
  if (kind == "cnn") {
    h["cnn"] = {{"n", cnn_cfg.n},
                {"filters1", cnn_cfg.filters1},
                {"filters2", cnn_cfg.filters2},
                {"filters3", cnn_cfg.filters3},
                {"k2", cnn_cfg.k2},
                {"k3", cnn_cfg.k3},
                {"dropout", hex_double(cnn_cfg.dropout)},
                {"outputs", cnn_cfg.outputs}};
  } else if (kind == "wavenet") {
    h["wavenet"] = {{"n", wn_cfg.n},
                    {"kernel", wn_cfg.kernel},
                    {"layers", wn_cfg.layers},
                    {"channels", wn_cfg.channels},
                    {"relu_before_head", wn_cfg.relu_before_head}};
  } else {
    throw std::runtime_error("RegressorModel::save: unknown kind '" + kind + "'");
  }
  h["normalization"] = {{"x_mean", hexvec(norm.x_mean)},
                        {"x_std", hexvec(norm.x_std)},
                        {"t_mean", hexvec(norm.t_mean)},
                        {"t_std", hexvec(norm.t_std)}};
  h["targets"] = targets;
  h["train"] = {{"lr", hex_double(tcfg.lr)},       {"beta1", hex_double(tcfg.beta1)},
                {"beta2", hex_double(tcfg.beta2)}, {"eps", hex_double(tcfg.eps)},
                {"epochs", tcfg.epochs},           {"batch", tcfg.batch},
                {"early_stop", tcfg.early_stop},   {"patience", tcfg.patience},
                {"seed", tcfg.seed}};
  ordered_json jlog = ordered_json::array();
  for (const auto& e : log)
    jlog.push_back({{"net", e.net},
                    {"epoch", e.epoch},
                    {"train_mse", hex_double(e.train_mse)},
                    {"val_mse", hex_double(e.val_mse)},
                    {"seconds", hex_double(e.seconds)}});
  h["log"] = jlog;

  ordered_json tensors = ordered_json::array();
  std::string payload;
  std::int64_t offset = 0;  // element offset into the double payload
  visit_model_tensors(*this, [&](const std::string& name, Param& p) {
    tensors.push_back({{"name", name}, {"shape", p.value.shape}, {"offset", offset}});
    append_doubles_le(payload, p.value.data);
    offset += p.value.numel();
  });
  h["tensors"] = tensors;

  const std::string header = h.dump();
  std::string out;
  out.reserve(8 + 8 + header.size() + payload.size());
  out.append(kModelMagic, 8);
  const std::uint64_t hl = header.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((hl >> (8 * i)) & 0xff));
  out += header;
  out += payload;
  write_file(path, out);
}

RegressorModel RegressorModel::load(const std::filesystem::path& path) {
  const std::string blob = read_file(path);
  if (blob.size() < 16 || blob.compare(0, 8, kModelMagic, 8) != 0)
    throw std::runtime_error("model file: bad magic in " + path.string());
  const auto* up = reinterpret_cast<const unsigned char*>(blob.data());
  const std::uint64_t hl = read_u64_le(up + 8);
  if (16 + hl > blob.size()) throw std::runtime_error("model file: truncated header");
  const auto h = nlohmann::json::parse(blob.substr(16, hl));
  if (h.at("version").get<std::string>() != kModelFormatVersion)
    throw std::runtime_error("model file: unsupported version '" +
                             h.at("version").get<std::string>() + "'");

  RegressorModel m;
  m.kind = h.at("kind").get<std::string>();
  const auto& tr = h.at("train");
  m.tcfg.lr = parse_hex_double(tr.at("lr").get<std::string>());
  m.tcfg.beta1 = parse_hex_double(tr.at("beta1").get<std::string>());
  m.tcfg.beta2 = parse_hex_double(tr.at("beta2").get<std::string>());
  m.tcfg.eps = parse_hex_double(tr.at("eps").get<std::string>());
  m.tcfg.epochs = tr.at("epochs");
  m.tcfg.batch = tr.at("batch");
  m.tcfg.early_stop = tr.at("early_stop");
  m.tcfg.patience = tr.at("patience");
  m.tcfg.seed = tr.at("seed");
  const auto& nz = h.at("normalization");
  m.norm.x_mean = parse_hexvec(nz.at("x_mean"));
  m.norm.x_std = parse_hexvec(nz.at("x_std"));
  m.norm.t_mean = parse_hexvec(nz.at("t_mean"));
  m.norm.t_std = parse_hexvec(nz.at("t_std"));
  m.targets = h.at("targets").get<std::vector<std::string>>();
  for (const auto& e : h.at("log"))
    m.log.push_back({e.at("net").get<std::string>(), e.at("epoch").get<int>(),
                     parse_hex_double(e.at("train_mse").get<std::string>()),
                     parse_hex_double(e.at("val_mse").get<std::string>()),
                     parse_hex_double(e.at("seconds").get<std::string>())});

  if (m.kind == "cnn") {
    const auto& c = h.at("cnn");
    m.cnn_cfg.n = c.at("n");
    m.cnn_cfg.filters1 = c.at("filters1");
    m.cnn_cfg.filters2 = c.at("filters2");
    m.cnn_cfg.filters3 = c.at("filters3");
    m.cnn_cfg.k2 = c.at("k2");
    m.cnn_cfg.k3 = c.at("k3");
    m.cnn_cfg.dropout = parse_hex_double(c.at("dropout").get<std::string>());
    m.cnn_cfg.outputs = c.at("outputs");
    m.cnn = std::make_unique<CnnNet>(m.cnn_cfg, m.tcfg.seed);
  } else if (m.kind == "wavenet") {
    const auto& c = h.at("wavenet");
    m.wn_cfg.n = c.at("n");
    m.wn_cfg.kernel = c.at("kernel");
    m.wn_cfg.layers = c.at("layers");
    m.wn_cfg.channels = c.at("channels");
    m.wn_cfg.relu_before_head = c.at("relu_before_head");
    for (size_t t = 0; t < m.targets.size(); ++t)
      m.wn.push_back(std::make_unique<WavenetNet>(m.wn_cfg, m.tcfg.seed));
  } else {
    throw std::runtime_error("model file: unknown kind '" + m.kind + "'");
  }

  std::map<std::string, const nlohmann::json*> dir;
  for (const auto& t : h.at("tensors")) dir[t.at("name").get<std::string>()] = &t;
  const char* payload = blob.data() + 16 + hl;
  const std::int64_t pay_elems = static_cast<std::int64_t>((blob.size() - 16 - hl) / 8);
  visit_model_tensors(m, [&](const std::string& name, Param& p) {
    const auto it = dir.find(name);
    if (it == dir.end()) throw std::runtime_error("model file: missing tensor '" + name + "'");
    const auto shape = it->second->at("shape").get<std::vector<std::int64_t>>();
    if (shape != p.value.shape)
      throw std::runtime_error("model file: shape mismatch for tensor '" + name + "'");
    const std::int64_t off = it->second->at("offset").get<std::int64_t>();
    if (off + p.value.numel() > pay_elems)
      throw std::runtime_error("model file: payload truncated at tensor '" + name + "'");
    const auto* up2 = reinterpret_cast<const unsigned char*>(payload) + off * 8;
    for (std::int64_t j = 0; j < p.value.numel(); ++j)
      p.value.data[j] = std::bit_cast<double>(read_u64_le(up2 + j * 8));
    ++p.version;
  });
  return m;
}

namespace {

constexpr std::int64_t kPredictChunk = 256;

}  // namespace

std::vector<PredictResult> predict_batch(RegressorModel& model, std::span<const IoRecord> recs) {
  const int n = model.record_length();
  for (const auto& r : recs) {
    r.validate();
    if (static_cast<int>(r.u.size()) != n)
      throw std::invalid_argument("predict: record length " + std::to_string(r.u.size()) +
                                  " does not match model length " + std::to_string(n));
  }
  std::vector<PredictResult> out(recs.size());
  for (std::int64_t lo = 0; lo < static_cast<std::int64_t>(recs.size()); lo += kPredictChunk) {
    const std::int64_t hi = std::min<std::int64_t>(recs.size(), lo + kPredictChunk);
    const std::int64_t B = hi - lo;
    std::vector<double> est(static_cast<size_t>(B) * 2);
    if (model.kind == "cnn") {
      Tensor x({B, 1, 2, n});
      for (std::int64_t b = 0; b < B; ++b)
        fill_cnn_input(recs[lo + b], model.norm, x.data.data() + b * 2 * n);
      Tensor o = model.cnn->forward(x, false);
      for (std::int64_t b = 0; b < B; ++b)
        for (int t = 0; t < 2; ++t)
          est[b * 2 + t] = o.data[b * 2 + t] * model.norm.t_std[t] + model.norm.t_mean[t];
    } else {
      Tensor x({B, 1, 2 * n});
      for (std::int64_t b = 0; b < B; ++b)
        fill_wn_input(recs[lo + b], model.norm, x.data.data() + b * 2 * n);
      for (size_t t = 0; t < model.wn.size(); ++t) {
        Tensor o = model.wn[t]->forward(x, false);
        for (std::int64_t b = 0; b < B; ++b)
          est[b * 2 + t] = o.data[b] * model.norm.t_std[t] + model.norm.t_mean[t];
      }
    }
    for (std::int64_t b = 0; b < B; ++b) {
      PredictResult r;
      r.phi.kp = est[b * 2];
      r.phi.Ti = est[b * 2 + 1];
      if (r.phi.kp < 1e-6) { r.phi.kp = 1e-6; r.clamped = true; }
      if (r.phi.Ti < 1e-6) { r.phi.Ti = 1e-6; r.clamped = true; }
      out[static_cast<size_t>(lo + b)] = r;
    }
  }
  return out;
}

PredictResult predict(RegressorModel& model, const IoRecord& rec) {
  return predict_batch(model, std::span(&rec, 1))[0];
}

}  // namespace metatune
