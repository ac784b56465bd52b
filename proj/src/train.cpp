#include "semcsi/train.hpp"

#include <fmt/format.h>
#include <fmt/os.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fields.hpp"
#include "semcsi/error.hpp"

namespace semcsi {

using ad::Tensor;

namespace {

// Substream domains, so per-step, per-epoch and init draws never collide.
constexpr std::uint64_t kStepStream = 0x5354455000000000ull;   // "STEP"
constexpr std::uint64_t kEpochStream = 0x4550434800000000ull;  // "EPCH"
constexpr std::uint64_t kEvalStream = 0x4556414c00000000ull;   // "EVAL"
constexpr char kAdamM[] = "adam.m/";
constexpr char kAdamV[] = "adam.v/";

}  // namespace

// ---- enums / config ----------------------------------------------------------------

std::string to_string(SnrPolicy p) {
  switch (p) {
    case SnrPolicy::kUniform: return "uniform";
    case SnrPolicy::kFixed: return "fixed";
    case SnrPolicy::kNoiseless: return "noiseless";
  }
  return "uniform";
}

SnrPolicy snr_policy_from_string(const std::string& s) {
  if (s == "uniform") return SnrPolicy::kUniform;
  if (s == "fixed") return SnrPolicy::kFixed;
  if (s == "noiseless") return SnrPolicy::kNoiseless;
  throw ConfigError("unknown snr policy '" + s + "' (expected uniform, fixed or noiseless)");
}

std::string to_string(ModPass p) { return p == ModPass::kSoft ? "soft" : "hard"; }

ModPass mod_pass_from_string(const std::string& s) {
  if (s == "soft") return ModPass::kSoft;
  if (s == "hard") return ModPass::kHard;
  throw ConfigError("unknown evaluation mode '" + s + "' (expected soft or hard)");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be finite and non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
  if (snr_policy == SnrPolicy::kUniform && !(snr_min_db <= snr_max_db))
    throw ConfigError("train.snr_min_db must not exceed train.snr_max_db");
  if (!std::isfinite(snr_db) || !std::isfinite(snr_min_db) || !std::isfinite(snr_max_db))
    throw ConfigError("train SNR settings must be finite");
}

std::string cqi_config_to_json(const CqiConfig& c) {
  nlohmann::ordered_json j;
  j["tx_power_dbm"] = c.link.tx_power_dbm;
  j["noise_power_dbm"] = c.link.noise_power_dbm;
  j["thresholds_db"] = c.table.thresholds_db();
  j["subcarriers_per_subband"] = c.subcarriers_per_subband;
  return j.dump();
}

CqiConfig cqi_config_from_json(const std::string& text) {
  CqiConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.link.tx_power_dbm = j.value("tx_power_dbm", c.link.tx_power_dbm);
    c.link.noise_power_dbm = j.value("noise_power_dbm", c.link.noise_power_dbm);
    if (j.contains("thresholds_db")) c.table = CqiTable::from_vector(j.at("thresholds_db").get<std::vector<double>>());
    c.subcarriers_per_subband = j.value("subcarriers_per_subband", c.subcarriers_per_subband);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("cqi config JSON: ") + e.what());
  }
  return c;
}

// ---- Adam ------------------------------------------------------------------------

void Adam::update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                  std::size_t t) const {
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    m[i] = b1_ * m[i] + (1.0 - b1_) * g;
    v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    param[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
  }
}

// ---- data helpers ----------------------------------------------------------------

double input_scale_for(const Dataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("input scale needs at least one sample");
  double e = 0.0;
  for (auto i : indices) e += ds.samples.at(i).frobenius_sq();
  e /= static_cast<double>(indices.size());
  if (!(e > 0.0)) throw ContractError("training samples carry no energy");
  return std::sqrt(static_cast<double>(ds.n_t * ds.n_c) / e);
}

std::vector<CqiReport> cqi_reports(const Dataset& ds, const CqiConfig& cfg, CqiMode mode) {
  std::vector<CqiReport> out;
  out.reserve(ds.samples.size());
  for (const auto& h : ds.samples) out.push_back(compute_cqi(h, cfg, mode));
  return out;
}

namespace {

void check_dims(const ModelConfig& m, const Dataset& d) {
  if (m.n_t != d.n_t || m.n_c != d.n_c)
    throw ConfigError("model expects N_t=" + std::to_string(m.n_t) + ", N_c=" + std::to_string(m.n_c) +
                      " but dataset has N_t=" + std::to_string(d.n_t) + ", N_c=" + std::to_string(d.n_c));
}

Batch gather(const Dataset& data, const std::vector<CqiReport>& reports, std::span<const std::size_t> idx,
             Normalization norm, double dataset_scale) {
  std::vector<const ChannelMatrix*> ptrs;
  std::vector<CqiReport> cqi;
  std::vector<double> scales;
  for (auto i : idx) {
    ptrs.push_back(&data.samples[i]);
    cqi.push_back(reports[i]);
    scales.push_back(input_scale(data.samples[i], norm, dataset_scale));
  }
  return make_batch(ptrs, cqi, scales);
}

ParamMap zeros_like(const ParamMap& p) {
  ParamMap out;
  for (const auto& [k, t] : p) out.emplace(k, Tensor(t.shape()));
  return out;
}

}  // namespace

// ---- Trainer -----------------------------------------------------------------------

Trainer::Trainer(ModelConfig model, TrainConfig train, CqiConfig cqi, const Dataset& data)
    : model_(std::move(model)), train_(train), cqi_(std::move(cqi)) {
  model_.validate();
  train_.validate();
  check_dims(model_, data);
  Rng init(model_.init_seed);
  state_.params = init_params(model_, init);
  state_.adam_m = zeros_like(state_.params);
  state_.adam_v = zeros_like(state_.params);
  prepare(data);
  input_scale_ = input_scale_for(data, train_idx_);
}

Trainer::Trainer(const Checkpoint& ck, const Dataset& data) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ck.config_json);
    model_ = model_config_from_json(j.at("model").dump());
    detail::struct_from_json(j.at("train"), train_);
    cqi_ = cqi_config_from_json(j.at("cqi").dump());
    state_.step = j.at("state").at("step").get<std::size_t>();
    input_scale_ = j.at("state").at("input_scale").get<double>();
    state_.last_loss = j.at("state").value("last_loss", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("config", std::string("checkpoint config is not a training state: ") + e.what());
  }
  model_.validate();
  train_.validate();
  check_dims(model_, data);
  for (const auto& [name, t] : ck.records) {
    if (name.starts_with(kAdamM))
      state_.adam_m.emplace(name.substr(sizeof(kAdamM) - 1), t);
    else if (name.starts_with(kAdamV))
      state_.adam_v.emplace(name.substr(sizeof(kAdamV) - 1), t);
    else
      state_.params.emplace(name, t);
  }
  check_params(model_, state_.params);
  check_params(model_, state_.adam_m);
  check_params(model_, state_.adam_v);
  prepare(data);
}

void Trainer::prepare(const Dataset& data) {
  data_ = &data;
  reports_ = cqi_reports(data, cqi_, model_.cqi_mode);
  train_idx_ = data.indices(Split::kTrain);
  if (train_idx_.empty()) throw ConfigError("dataset has no training samples");
}

std::vector<std::size_t> Trainer::batch_indices(std::size_t step) const {
  // Position step*B.. of an endless stream of per-epoch shuffles.
  const std::size_t n = train_idx_.size(), bsz = train_.batch_size;
  std::vector<std::size_t> out;
  out.reserve(bsz);
  std::size_t pos = step * bsz;
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm;
  for (std::size_t b = 0; b < bsz; ++b, ++pos) {
    const std::size_t epoch = pos / n;
    if (epoch != cached_epoch) {
      perm = train_idx_;
      Rng r = Rng::substream(train_.seed ^ kEpochStream, epoch);
      std::shuffle(perm.begin(), perm.end(), r.engine());
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % n]);
  }
  return out;
}

StepLog Trainer::step() {
  const std::size_t t = state_.step;
  Rng rng = Rng::substream(train_.seed ^ kStepStream, t);
  double snr_db = std::numeric_limits<double>::infinity();
  if (train_.snr_policy == SnrPolicy::kFixed) snr_db = train_.snr_db;
  if (train_.snr_policy == SnrPolicy::kUniform) snr_db = rng.uniform(train_.snr_min_db, train_.snr_max_db);
  const double tau = model_.tau_at(t);

  const auto idx = batch_indices(t);
  const Batch batch = gather(*data_, reports_, idx, model_.normalization, input_scale_);

  ad::Tape tape;
  ParamBinding p(tape, state_.params, true);
  ForwardOptions fo;
  fo.pass = ModPass::kSoft;
  fo.tau = tau;
  fo.snr_db = snr_db;
  double loss_value = 0.0;
  try {
    auto fr = forward(p, model_, batch, fo, rng);
    ad::Var loss = mse_loss(fr.output, tape.constant(batch.x));
    loss_value = loss.value().item();
    tape.backward(loss);
  } catch (const NumericError& e) {
    throw NumericError(fmt::format("training diverged at step {} (tau={}, snr_db={}): {}", t + 1, tau, snr_db,
                                   e.what()));
  }

  const Adam adam(train_.lr, train_.beta1, train_.beta2, train_.adam_eps);
  for (auto& [name, var] : p.vars()) {
    const Tensor g = tape.grad(var);
    adam.update(state_.params.at(name).data(), g.data(), state_.adam_m.at(name).data(),
                state_.adam_v.at(name).data(), t + 1);
  }
  state_.step = t + 1;
  state_.last_loss = loss_value;
  return StepLog{t + 1, loss_value, tau, snr_db};
}

TrainedModel Trainer::trained_model() const { return TrainedModel{model_, cqi_, input_scale_, state_.params}; }

Checkpoint Trainer::to_checkpoint() const {
  nlohmann::ordered_json j;
  j["model"] = nlohmann::ordered_json::parse(model_config_to_json(model_));
  j["train"] = detail::struct_to_json(train_);
  j["cqi"] = nlohmann::ordered_json::parse(cqi_config_to_json(cqi_));
  j["state"] = {{"step", state_.step}, {"input_scale", input_scale_}, {"last_loss", state_.last_loss},
                {"compression_ratio", model_.compression_ratio()}};
  Checkpoint ck;
  ck.config_json = j.dump();
  for (const auto& [k, t] : state_.params) ck.records.emplace(k, t);
  for (const auto& [k, t] : state_.adam_m) ck.records.emplace(kAdamM + k, t);
  for (const auto& [k, t] : state_.adam_v) ck.records.emplace(kAdamV + k, t);
  return ck;
}

TrainedModel load_model(const Checkpoint& ck) {
  TrainedModel m;
  try {
    const auto j = nlohmann::json::parse(ck.config_json);
    m.model = model_config_from_json(j.at("model").dump());
    m.cqi = j.contains("cqi") ? cqi_config_from_json(j.at("cqi").dump()) : CqiConfig{};
    m.input_scale = j.contains("state") ? j["state"].value("input_scale", 1.0) : 1.0;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("config", std::string("checkpoint config lacks a model section: ") + e.what());
  }
  m.model.validate();
  for (const auto& [name, t] : ck.records)
    if (!name.starts_with("adam.")) m.params.emplace(name, t);
  check_params(m.model, m.params);
  return m;
}

TrainedModel load_model(const std::filesystem::path& path) { return load_model(read_checkpoint(path)); }

// ---- evaluation --------------------------------------------------------------------

std::vector<ChannelMatrix> reconstruct(const TrainedModel& m, const Dataset& data,
                                       std::span<const std::size_t> indices, double snr_db, ModPass pass,
                                       std::uint64_t seed, std::size_t batch_size) {
  check_dims(m.model, data);
  if (batch_size == 0) throw ConfigError("eval batch size must be >= 1");
  for (auto i : indices)
    if (i >= data.size()) throw ContractError("reconstruct: sample index out of range");
  const auto reports = cqi_reports(data, m.cqi, m.model.cqi_mode);

  std::vector<ChannelMatrix> out;
  out.reserve(indices.size());
  for (std::size_t start = 0, chunk = 0; start < indices.size(); start += batch_size, ++chunk) {
    const std::size_t end = std::min(indices.size(), start + batch_size);
    const Batch batch = gather(data, reports, indices.subspan(start, end - start), m.model.normalization,
                               m.input_scale);
    Rng rng = Rng::substream(seed ^ kEvalStream, chunk);
    ad::Tape tape;
    ParamBinding p(tape, m.params, false);
    ForwardOptions fo;
    fo.pass = pass;
    fo.tau = m.model.tau_end;
    fo.snr_db = snr_db;
    const auto fr = forward(p, m.model, batch, fo, rng);
    const Tensor& y = fr.output.value();
    const std::size_t per = 2 * m.model.n_t * m.model.n_c;
    for (std::size_t b = 0; b < end - start; ++b)
      out.push_back(assemble(y.data().subspan(b * per, per), m.model.n_t, m.model.n_c, 1.0 / batch.scales[b]));
  }
  return out;
}

std::vector<EvalRow> evaluate(const TrainedModel& m, const Dataset& data, const EvalConfig& cfg) {
  const auto idx = data.eval_indices();
  if (idx.empty()) throw ConfigError("dataset has no samples to evaluate");
  std::vector<ChannelMatrix> truth;
  for (auto i : idx) truth.push_back(data.samples[i]);
  std::vector<EvalRow> rows;
  for (std::size_t s = 0; s < cfg.snr_list.size(); ++s) {
    const double snr = cfg.snr_list[s];
    // same noise stream for every checkpoint evaluated at this SNR
    const auto est = reconstruct(m, data, idx, snr, cfg.mode, cfg.seed + s, cfg.batch_size);
    EvalRow r;
    r.snr_db = snr;
    r.cr = m.model.compression_ratio();
    r.cqi_mode = m.model.cqi_mode;
    r.mod_mode = m.model.mod_mode;
    r.pass = cfg.mode;
    r.metrics = evaluate_metrics(truth, est);
    rows.push_back(r);
  }
  return rows;
}

void write_eval_csv(const std::vector<EvalRow>& rows, const std::filesystem::path& path, bool append) {
  const bool header = !append || !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream os(path, append ? std::ios::app : std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  if (header) os << "snr_db,cr,cqi_mode,mod_mode,nmse_db,sgcs\n";
  for (const auto& r : rows) {
    const std::string mod = r.mod_mode == ModMode::kAnalog ? "analog" : "jcm_" + to_string(r.pass);
    os << fmt::format("{},{:.6g},{},{},{:.6f},{:.6f}\n", r.snr_db, r.cr, to_string(r.cqi_mode), mod,
                      r.metrics.nmse_db, r.metrics.sgcs);
  }
  if (!os) throw IoError("write failed for " + path.string());
}

// ---- run directory -------------------------------------------------------------------

void run_training(Trainer& trainer, const std::filesystem::path& out_dir,
                  const std::function<void(const StepLog&)>& on_step) {
  std::filesystem::create_directories(out_dir);
  const auto metrics_path = out_dir / "metrics.csv";
  const std::size_t start = trainer.state().step;

  // Keep rows up to the resumed step so a resumed run's log matches an
  // uninterrupted one.
  std::string kept = "step,loss,tau,snr_db\n";
  if (start > 0 && std::filesystem::exists(metrics_path)) {
    std::ifstream is(metrics_path);
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      const auto comma = line.find(',');
      if (comma == std::string::npos) continue;
      std::size_t s = 0;
      try {
        s = std::stoul(line.substr(0, comma));
      } catch (const std::exception&) {
        continue;
      }
      if (s <= start) kept += line + "\n";
    }
  }
  std::ofstream log(metrics_path, std::ios::trunc);
  if (!log) throw IoError("cannot write " + metrics_path.string());
  log << kept;

  const auto save = [&](const std::string& name) {
    const auto tmp = out_dir / (name + ".tmp");
    write_checkpoint(trainer.to_checkpoint(), tmp);
    std::filesystem::rename(tmp, out_dir / name);
  };
  const std::size_t every = trainer.train_config().checkpoint_every;
  while (!trainer.done()) {
    const auto s = trainer.step();
    log << fmt::format("{},{:.17g},{:.17g},{:.17g}\n", s.step, s.loss, s.tau, s.snr_db);
    if (on_step) on_step(s);
    if (every > 0 && s.step % every == 0 && !trainer.done()) save(fmt::format("ckpt_{:06d}.smck", s.step));
  }
  log.flush();
  if (!log) throw IoError("write failed for " + metrics_path.string());
  save("final.smck");
}

}  // namespace semcsi
