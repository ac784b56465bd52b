#include "semcsi/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "binary_io.hpp"
#include "fields.hpp"
#include "semcsi/error.hpp"

namespace semcsi {

using ad::Shape;
using ad::Tensor;
using ad::Var;

// ---- enums -------------------------------------------------------------------

std::string to_string(ModMode m) { return m == ModMode::kJcm ? "jcm" : "analog"; }

ModMode mod_mode_from_string(const std::string& s) {
  if (s == "jcm" || s == "JCM") return ModMode::kJcm;
  if (s == "analog" || s == "Analog") return ModMode::kAnalog;
  throw ConfigError("unknown modulation mode '" + s + "' (expected jcm or analog)");
}

std::string to_string(HardDecision d) { return d == HardDecision::kSample ? "sample" : "argmax"; }

HardDecision hard_decision_from_string(const std::string& s) {
  if (s == "sample") return HardDecision::kSample;
  if (s == "argmax") return HardDecision::kArgmax;
  throw ConfigError("unknown hard decision '" + s + "' (expected sample or argmax)");
}

std::string to_string(Normalization n) { return n == Normalization::kDataset ? "dataset" : "sample"; }

Normalization normalization_from_string(const std::string& s) {
  if (s == "dataset") return Normalization::kDataset;
  if (s == "sample") return Normalization::kSample;
  throw ConfigError("unknown normalization '" + s + "' (expected dataset or sample)");
}

// ---- constellation -------------------------------------------------------------

Constellation::Constellation(std::vector<cplx> points) : points_(std::move(points)) {
  if (points_.empty()) throw ConfigError("constellation needs at least one point");
  double p = 0.0;
  for (const auto& c : points_) p += std::norm(c);
  p /= static_cast<double>(points_.size());
  if (!(p > 0.0) || !std::isfinite(p)) throw ConfigError("constellation has no power");
  const double s = 1.0 / std::sqrt(p);
  for (auto& c : points_) c *= s;
  for (std::size_t i = 0; i < points_.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (points_[i] == points_[j]) throw ConfigError("constellation points must be distinct");
}

Constellation Constellation::named(const std::string& name) {
  std::vector<cplx> pts;
  if (name == "qpsk") {
    const double a = 1.0 / std::numbers::sqrt2;
    return Constellation({{a, a}, {-a, a}, {-a, -a}, {a, -a}});
  }
  if (name == "psk8") {
    for (int k = 0; k < 8; ++k) pts.push_back(std::polar(1.0, std::numbers::pi * (2.0 * k + 1.0) / 8.0));
    return Constellation(std::move(pts));
  }
  if (name == "qam16") {
    for (int i : {-3, -1, 1, 3})
      for (int q : {-3, -1, 1, 3}) pts.emplace_back(i, q);
    return Constellation(std::move(pts));
  }
  throw ConfigError("unknown constellation '" + name + "' (expected qpsk, psk8 or qam16)");
}

Tensor Constellation::as_tensor() const {
  Tensor t(Shape{points_.size(), 2});
  for (std::size_t k = 0; k < points_.size(); ++k) {
    t[2 * k] = points_[k].real();
    t[2 * k + 1] = points_[k].imag();
  }
  return t;
}

bool Constellation::contains(cplx z) const { return std::find(points_.begin(), points_.end(), z) != points_.end(); }

// ---- config --------------------------------------------------------------------

double ModelConfig::compression_ratio() const {
  return static_cast<double>(channel_uses) / static_cast<double>(n_t * n_c);
}

double ModelConfig::tau_at(std::size_t step) const {
  if (tau_anneal_steps == 0) return tau_end;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(tau_anneal_steps));
  return tau_start + (tau_end - tau_start) * frac;
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model." + what);
  };
  need(n_t >= 1 && n_c >= 1, "n_t and n_c must be positive");
  need(embed_dim >= 1 && heads >= 1, "embed_dim and heads must be positive");
  need(embed_dim % heads == 0, "embed_dim (" + std::to_string(embed_dim) + ") must be divisible by heads (" +
                                   std::to_string(heads) + ")");
  need(mlp_ratio >= 1, "mlp_ratio must be >= 1");
  need(channel_uses >= 1, "channel_uses (M) must be >= 1");
  need(tau_start > 0.0 && tau_end > 0.0 && std::isfinite(tau_start) && std::isfinite(tau_end),
       "tau_start and tau_end must be positive");
  Constellation::named(constellation);
}

std::string model_config_to_json(const ModelConfig& cfg) { return detail::struct_to_json(cfg).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
  ModelConfig c;
  try {
    detail::struct_from_json(nlohmann::json::parse(text), c);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config JSON: ") + e.what());
  }
  return c;
}

// ---- parameters ------------------------------------------------------------------

namespace {

enum class Init { kWeight, kBias, kPos, kGain };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init;
};

std::size_t head_width(const ModelConfig& cfg) {
  return cfg.mod_mode == ModMode::kJcm ? cfg.channel_uses * Constellation::named(cfg.constellation).size()
                                       : 2 * cfg.channel_uses;
}

void add_block_specs(std::vector<ParamSpec>& out, const std::string& pfx, std::size_t d, std::size_t f) {
  out.push_back({pfx + ".ln1.g", {d}, Init::kGain});
  out.push_back({pfx + ".ln1.b", {d}, Init::kBias});
  for (const char* m : {"q", "k", "v", "o"}) {
    out.push_back({pfx + ".attn.w" + m, {d, d}, Init::kWeight});
    out.push_back({pfx + ".attn.b" + m, {d}, Init::kBias});
  }
  out.push_back({pfx + ".ln2.g", {d}, Init::kGain});
  out.push_back({pfx + ".ln2.b", {d}, Init::kBias});
  out.push_back({pfx + ".mlp.w1", {d, f}, Init::kWeight});
  out.push_back({pfx + ".mlp.b1", {f}, Init::kBias});
  out.push_back({pfx + ".mlp.w2", {f, d}, Init::kWeight});
  out.push_back({pfx + ".mlp.b2", {d}, Init::kBias});
}

// Parameters in initialization order.
std::vector<ParamSpec> param_specs(const ModelConfig& cfg) {
  const std::size_t d = cfg.embed_dim, t = 2 * cfg.n_t, l = cfg.tokens(), f = cfg.embed_dim * cfg.mlp_ratio;
  const std::size_t m2 = 2 * cfg.channel_uses;
  std::vector<ParamSpec> s;
  s.push_back({"enc.in.w", {t, d}, Init::kWeight});
  s.push_back({"enc.in.b", {d}, Init::kBias});
  s.push_back({"enc.cqi.w", {kCqiLevels, d}, Init::kWeight});
  s.push_back({"enc.cqi.b", {d}, Init::kBias});
  s.push_back({"enc.pos", {l, d}, Init::kPos});
  for (std::size_t i = 0; i < cfg.depth; ++i) add_block_specs(s, "enc.block" + std::to_string(i), d, f);
  s.push_back({"enc.ln.g", {d}, Init::kGain});
  s.push_back({"enc.ln.b", {d}, Init::kBias});
  s.push_back({"enc.head.w", {l * d, head_width(cfg)}, Init::kWeight});
  s.push_back({"enc.head.b", {head_width(cfg)}, Init::kBias});
  s.push_back({"dec.in.w", {m2, l * d}, Init::kWeight});
  s.push_back({"dec.in.b", {l * d}, Init::kBias});
  s.push_back({"dec.cqi.w", {kCqiLevels, d}, Init::kWeight});
  s.push_back({"dec.cqi.b", {d}, Init::kBias});
  s.push_back({"dec.pos", {l, d}, Init::kPos});
  for (std::size_t i = 0; i < cfg.depth; ++i) add_block_specs(s, "dec.block" + std::to_string(i), d, f);
  s.push_back({"dec.ln.g", {d}, Init::kGain});
  s.push_back({"dec.ln.b", {d}, Init::kBias});
  s.push_back({"dec.out.w", {d, t}, Init::kWeight});
  s.push_back({"dec.out.b", {t}, Init::kBias});
  return s;
}

}  // namespace

ParamMap init_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamMap out;
  for (auto& spec : param_specs(cfg)) {
    Tensor t(spec.shape);
    switch (spec.init) {
      case Init::kWeight: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.shape[0]));
        for (auto& v : t.data()) v = rng.uniform(-bound, bound);
        break;
      }
      case Init::kPos:
        for (auto& v : t.data()) v = rng.normal(0.0, 0.02);
        break;
      case Init::kGain:
        for (auto& v : t.data()) v = 1.0;
        break;
      case Init::kBias:
        break;
    }
    out.emplace(spec.name, std::move(t));
  }
  return out;
}

std::map<std::string, Shape> param_shapes(const ModelConfig& cfg) {
  std::map<std::string, Shape> out;
  for (auto& spec : param_specs(cfg)) out.emplace(spec.name, spec.shape);
  return out;
}

void check_params(const ModelConfig& cfg, const ParamMap& params) {
  const auto shapes = param_shapes(cfg);
  for (const auto& [name, shape] : shapes) {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("parameter '" + name + "' missing for this model config");
    if (it->second.shape() != shape)
      throw ConfigError("parameter '" + name + "' has shape " + ad::shape_str(it->second.shape()) + ", config needs " +
                        ad::shape_str(shape));
    if (!it->second.all_finite()) throw NumericError("parameter '" + name + "' has non-finite values");
  }
  for (const auto& [name, t] : params)
    if (!shapes.contains(name)) throw ConfigError("unexpected parameter '" + name + "' for this model config");
}

ParamBinding::ParamBinding(ad::Tape& tape, const ParamMap& params, bool trainable) : tape_(&tape) {
  for (const auto& [name, t] : params) vars_.emplace(name, trainable ? tape.variable(t) : tape.constant(t));
}

Var ParamBinding::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ContractError("no parameter named '" + name + "'");
  return it->second;
}

// ---- data plumbing -----------------------------------------------------------------

std::vector<double> realify(const ChannelMatrix& h, double scale) {
  const std::size_t nt = h.n_t(), nc = h.n_c();
  std::vector<double> out(2 * nt * nc);
  for (std::size_t n = 0; n < nc; ++n)
    for (std::size_t i = 0; i < nt; ++i) {
      out[n * 2 * nt + i] = scale * h(i, n).real();
      out[n * 2 * nt + nt + i] = scale * h(i, n).imag();
    }
  return out;
}

ChannelMatrix assemble(std::span<const double> tokens, std::size_t n_t, std::size_t n_c, double scale) {
  if (tokens.size() != 2 * n_t * n_c) throw DimensionError("assemble: token data does not match N_t x N_c");
  ChannelMatrix h(n_t, n_c);
  for (std::size_t n = 0; n < n_c; ++n)
    for (std::size_t i = 0; i < n_t; ++i)
      h(i, n) = cplx(scale * tokens[n * 2 * n_t + i], scale * tokens[n * 2 * n_t + n_t + i]);
  return h;
}

double input_scale(const ChannelMatrix& h, Normalization mode, double dataset_scale) {
  if (mode == Normalization::kDataset) return dataset_scale;
  const double e = h.frobenius_sq();
  if (!(e > 0.0)) throw ContractError("per-sample normalization of an all-zero channel");
  return std::sqrt(static_cast<double>(h.n_t() * h.n_c()) / e);
}

Batch make_batch(std::span<const ChannelMatrix* const> samples, std::span<const CqiReport> cqi,
                 std::span<const double> scales) {
  if (samples.empty()) throw ContractError("make_batch: empty batch");
  if (cqi.size() != samples.size() || scales.size() != samples.size())
    throw ContractError("make_batch: one CQI report and scale per sample required");
  const std::size_t nt = samples[0]->n_t(), nc = samples[0]->n_c();
  Batch b;
  b.x = Tensor(Shape{samples.size(), nc, 2 * nt});
  for (std::size_t s = 0; s < samples.size(); ++s) {
    if (samples[s]->n_t() != nt || samples[s]->n_c() != nc) throw DimensionError("make_batch: mixed sample dims");
    const auto r = realify(*samples[s], scales[s]);
    std::copy(r.begin(), r.end(), b.x.data().begin() + static_cast<std::ptrdiff_t>(s * r.size()));
  }
  b.cqi.assign(cqi.begin(), cqi.end());
  b.scales.assign(scales.begin(), scales.end());
  return b;
}

// ---- forward pieces ----------------------------------------------------------------

namespace {

Var affine(const ParamBinding& p, const std::string& pfx, Var x, const char* w = ".w", const char* b = ".b") {
  return ad::add(ad::matmul(x, p[pfx + w]), p[pfx + b]);
}

Var transformer_block(const ParamBinding& p, const std::string& pfx, const ModelConfig& cfg, Var x) {
  const std::size_t bsz = x.shape()[0], l = x.shape()[1], d = cfg.embed_dim, h = cfg.heads, dh = d / h;
  Var n1 = ad::layernorm(x, p[pfx + ".ln1.g"], p[pfx + ".ln1.b"]);
  auto split_heads = [&](Var t) { return ad::permute(ad::reshape(t, {bsz, l, h, dh}), {0, 2, 1, 3}); };
  Var q = split_heads(affine(p, pfx + ".attn", n1, ".wq", ".bq"));
  Var k = split_heads(affine(p, pfx + ".attn", n1, ".wk", ".bk"));
  Var v = split_heads(affine(p, pfx + ".attn", n1, ".wv", ".bv"));
  Var att = ad::softmax(ad::scale(ad::matmul(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh))));
  Var ctx = ad::reshape(ad::permute(ad::matmul(att, v), {0, 2, 1, 3}), {bsz, l, d});
  x = ad::add(x, affine(p, pfx + ".attn", ctx, ".wo", ".bo"));
  Var n2 = ad::layernorm(x, p[pfx + ".ln2.g"], p[pfx + ".ln2.b"]);
  Var mlp = affine(p, pfx + ".mlp", ad::gelu(affine(p, pfx + ".mlp", n2, ".w1", ".b1")), ".w2", ".b2");
  return ad::add(x, mlp);
}

Var trunk(const ParamBinding& p, const std::string& pfx, const ModelConfig& cfg, Var z) {
  for (std::size_t i = 0; i < cfg.depth; ++i) z = transformer_block(p, pfx + ".block" + std::to_string(i), cfg, z);
  return ad::layernorm(z, p[pfx + ".ln.g"], p[pfx + ".ln.b"]);
}

}  // namespace

Var tokenize_csi(const ParamBinding& p, const std::string& prefix, Var x) {
  const Shape& s = x.shape();
  const Shape& w = p[prefix + ".in.w"].shape();
  if (s.size() != 3 || s[2] != w[0])
    throw ConfigError("tokenize_csi: input " + ad::shape_str(s) + " does not match [B, N_c, " + std::to_string(w[0]) +
                      "]");
  return affine(p, prefix + ".in", x);
}

Var embed_cqi(const ParamBinding& p, const std::string& prefix, const ModelConfig& cfg,
              const std::vector<CqiReport>& cqi) {
  const std::size_t bsz = cqi.size(), l = cfg.tokens();
  if (bsz == 0) throw ContractError("embed_cqi: empty batch");
  if (cfg.cqi_mode == CqiMode::kNone) return p.tape().constant(Tensor(Shape{bsz, l, cfg.embed_dim}));
  Tensor onehot(Shape{bsz, l, static_cast<std::size_t>(kCqiLevels)});
  for (std::size_t b = 0; b < bsz; ++b) {
    const auto& r = cqi[b];
    if (r.mode != cfg.cqi_mode)
      throw ContractError("embed_cqi: report mode " + to_string(r.mode) + " but model expects " +
                          to_string(cfg.cqi_mode));
    const std::size_t nb = r.indices.size();
    if (nb == 0 || (cfg.cqi_mode == CqiMode::kWideband && nb != 1) || l % nb != 0)
      throw ContractError("embed_cqi: " + std::to_string(nb) + " CQI indices cannot be aligned with " +
                          std::to_string(l) + " tokens");
    const std::size_t per = l / nb;
    for (std::size_t n = 0; n < l; ++n) {
      const int k = r.indices[n / per];
      if (k < 0 || k >= kCqiLevels) throw ContractError("embed_cqi: CQI index " + std::to_string(k) + " outside 0..15");
      onehot[(b * l + n) * kCqiLevels + static_cast<std::size_t>(k)] = 1.0;
    }
  }
  return affine(p, prefix + ".cqi", p.tape().constant(std::move(onehot)));
}

Var encode_tokens(const ParamBinding& p, const ModelConfig& cfg, const Batch& batch) {
  if (batch.x.rank() != 3 || batch.x.dim(1) != cfg.n_c || batch.x.dim(2) != 2 * cfg.n_t)
    throw ConfigError("encode: input " + ad::shape_str(batch.x.shape()) + " does not match model N_t=" +
                      std::to_string(cfg.n_t) + ", N_c=" + std::to_string(cfg.n_c));
  Var z = tokenize_csi(p, "enc", p.tape().constant(batch.x));
  z = ad::add(z, embed_cqi(p, "enc", cfg, batch.cqi));  // z_0 = X_H + e_q + P
  z = ad::add(z, p["enc.pos"]);
  return trunk(p, "enc", cfg, z);
}

Var encode(const ParamBinding& p, const ModelConfig& cfg, const Batch& batch) {
  const std::size_t bsz = batch.size(), l = cfg.tokens(), d = cfg.embed_dim;
  Var z = encode_tokens(p, cfg, batch);
  Var flat = affine(p, "enc.head", ad::reshape(z, {bsz, l * d}));
  if (cfg.mod_mode == ModMode::kJcm)
    return ad::reshape(flat, {bsz, cfg.channel_uses, Constellation::named(cfg.constellation).size()});
  Var s = ad::reshape(flat, {bsz, cfg.channel_uses, 2});
  // batch mean of |s_i|^2 = 2 * mean of squared reals
  return ad::mul(s, ad::rsqrt(ad::scale(ad::mean(ad::square(s)), 2.0)));
}

SymbolSequence modulate_jcm(Var logits, const Constellation& cst, const ModulateOptions& opt, Rng& rng) {
  const Tensor& lv = logits.value();
  const std::size_t kk = cst.size();
  if (lv.rank() < 1 || lv.shape().back() != kk)
    throw DimensionError("modulate_jcm: logits " + ad::shape_str(lv.shape()) + " do not end in K=" +
                         std::to_string(kk));
  auto& tape = *logits.tape();
  const std::size_t rows = lv.size() / kk;
  Shape sym_shape(lv.shape().begin(), lv.shape().end() - 1);
  sym_shape.push_back(2);

  SymbolSequence out;
  Tensor probs(lv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = lv.data().data() + r * kk;
    const double mx = *std::max_element(x, x + kk);
    double z = 0.0;
    for (std::size_t k = 0; k < kk; ++k) z += (probs[r * kk + k] = std::exp(x[k] - mx));
    for (std::size_t k = 0; k < kk; ++k) probs[r * kk + k] /= z;
  }
  out.probs = probs;

  Tensor noise(lv.shape());
  const bool draw = opt.pass == ModPass::kSoft ? opt.gumbel_noise : opt.decision == HardDecision::kSample;
  if (draw)
    for (auto& g : noise.data()) g = rng.gumbel();

  auto hard_points = [&](const Tensor& scores) {
    Tensor pts(sym_shape);
    out.hard.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* s = scores.data().data() + r * kk;
      const std::size_t k = static_cast<std::size_t>(std::max_element(s, s + kk) - s);
      out.hard[r] = k;
      pts[2 * r] = cst.points()[k].real();
      pts[2 * r + 1] = cst.points()[k].imag();
    }
    return pts;
  };

  if (opt.pass == ModPass::kHard) {
    Tensor scores(lv.shape());
    for (std::size_t i = 0; i < lv.size(); ++i) scores[i] = lv[i] + noise[i];
    out.symbols = tape.constant(hard_points(scores));
    return out;
  }
  if (!(opt.tau > 0.0)) throw ContractError("modulate_jcm: temperature must be positive");
  Var y = ad::softmax(ad::scale(ad::add(logits, tape.constant(noise)), 1.0 / opt.tau));
  Var soft = ad::matmul(y, tape.constant(cst.as_tensor()));
  out.symbols = opt.straight_through ? ad::straight_through(soft, hard_points(y.value())) : soft;
  return out;
}

double noise_variance(double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  if (!std::isfinite(snr_db)) throw ConfigError("feedback SNR must be finite or +inf");
  return std::pow(10.0, -snr_db / 10.0);
}

Var awgn(Var symbols, double noise_var, Rng& rng) {
  if (noise_var < 0.0) throw ContractError("awgn: negative noise variance");
  if (noise_var == 0.0) return symbols;
  const double sd = std::sqrt(noise_var / 2.0);
  Tensor eps(symbols.shape());
  for (auto& e : eps.data()) e = rng.normal(0.0, sd);
  return ad::add(symbols, symbols.tape()->constant(std::move(eps)));
}

Var decode(const ParamBinding& p, const ModelConfig& cfg, Var received, const std::vector<CqiReport>& cqi) {
  const Shape& s = received.shape();
  if (s.size() != 3 || s[1] != cfg.channel_uses || s[2] != 2)
    throw ConfigError("decode: received " + ad::shape_str(s) + " does not match [B, " +
                      std::to_string(cfg.channel_uses) + ", 2]");
  const std::size_t bsz = s[0], l = cfg.tokens(), d = cfg.embed_dim;
  if (cqi.size() != bsz) throw ContractError("decode: one CQI report per sample required");
  Var z = affine(p, "dec.in", ad::reshape(received, {bsz, 2 * cfg.channel_uses}));
  z = ad::reshape(z, {bsz, l, d});
  z = ad::add(z, embed_cqi(p, "dec", cfg, cqi));
  z = ad::add(z, p["dec.pos"]);
  z = trunk(p, "dec", cfg, z);
  return affine(p, "dec.out", z);
}

ForwardResult forward(const ParamBinding& p, const ModelConfig& cfg, const Batch& batch, const ForwardOptions& opt,
                      Rng& rng) {
  ForwardResult r;
  r.encoded = encode(p, cfg, batch);
  if (cfg.mod_mode == ModMode::kJcm) {
    ModulateOptions mo;
    mo.pass = opt.pass;
    mo.tau = opt.tau;
    mo.gumbel_noise = opt.gumbel_noise;
    mo.straight_through = cfg.straight_through;
    mo.decision = cfg.hard_decision;
    r.tx = modulate_jcm(r.encoded, Constellation::named(cfg.constellation), mo, rng);
  } else {
    r.tx.symbols = r.encoded;
  }
  r.received = awgn(r.tx.symbols, noise_variance(opt.snr_db), rng);
  r.output = decode(p, cfg, r.received, batch.cqi);
  return r;
}

Var mse_loss(Var estimate, Var target) {
  if (estimate.shape() != target.shape())
    throw ContractError("mse_loss: shapes differ " + ad::shape_str(estimate.shape()) + " vs " +
                        ad::shape_str(target.shape()));
  const double bsz = static_cast<double>(estimate.shape()[0]);
  return ad::scale(ad::sum(ad::square(ad::sub(estimate, target))), 1.0 / bsz);
}

// ---- checkpoint files --------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[] = "SMCK";
constexpr std::uint32_t kCheckpointVersion = 1;

Checkpoint parse_checkpoint(detail::ByteReader& r, bool header_only, std::size_t* record_count) {
  if (r.bytes(4, "magic") != std::string_view(kCheckpointMagic, 4))
    throw FormatError("magic", "not an SMCK checkpoint file");
  const auto version = r.uint<std::uint32_t>("version");
  if (version != kCheckpointVersion) throw FormatError("version", "unsupported version " + std::to_string(version));
  Checkpoint ck;
  const auto len = r.uint<std::uint32_t>("config_length");
  ck.config_json = r.bytes(len, "config");
  if (!nlohmann::json::accept(ck.config_json)) throw FormatError("config", "invalid JSON");
  std::size_t count = 0;
  while (!r.at_end()) {
    const auto name_len = r.uint<std::uint16_t>("record.name_length");
    std::string name = r.bytes(name_len, "record.name");
    const auto rank = r.uint<std::uint8_t>("record.rank");
    if (rank == 0) throw FormatError("record.rank", "record '" + name + "' has rank 0");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.uint<std::uint32_t>("record.dims");
      if (d == 0) throw FormatError("record.dims", "record '" + name + "' has a zero dimension");
      n *= d;
    }
    r.need(n * 8, "record.values");
    std::vector<double> vals(n);
    for (auto& v : vals) v = r.f64("record.values");
    if (!header_only) {
      if (ck.records.contains(name)) throw FormatError("record.name", "duplicate record '" + name + "'");
      ck.records.emplace(std::move(name), Tensor(std::move(shape), std::move(vals)));
    }
    ++count;
  }
  if (record_count) *record_count = count;
  return ck;
}

}  // namespace

void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  detail::ByteWriter w;
  w.bytes(std::string_view(kCheckpointMagic, 4));
  w.uint<std::uint32_t>(kCheckpointVersion);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(ck.config_json.size()));
  w.bytes(ck.config_json);
  for (const auto& [name, t] : ck.records) {
    if (name.size() > 65535) throw ConfigError("checkpoint record name too long");
    if (t.rank() > 255) throw ConfigError("checkpoint record rank too large");
    w.uint<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.uint<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : t.data()) w.f64(v);
  }
  w.save(path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  auto r = detail::ByteReader::from_file(path);
  return parse_checkpoint(r, false, nullptr);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  auto r = detail::ByteReader::from_file(path);
  CheckpointHeader h;
  h.version = kCheckpointVersion;
  h.config_json = parse_checkpoint(r, true, &h.records).config_json;
  return h;
}

}  // namespace semcsi
