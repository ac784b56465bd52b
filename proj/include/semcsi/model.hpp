#pragma once

// CQI-conditioned transformer autoencoder for CSI feedback: encoder with a
// probabilistic joint coding-modulation (JCM) head or an analog head, the
// AWGN feedback channel, and the decoder. Everything runs on an ad::Tape.

#include <complex>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "semcsi/autodiff.hpp"
#include "semcsi/channel.hpp"
#include "semcsi/cqi.hpp"
#include "semcsi/rng.hpp"

namespace semcsi {

enum class ModMode { kJcm, kAnalog };
std::string to_string(ModMode m);
ModMode mod_mode_from_string(const std::string& s);

enum class HardDecision { kSample, kArgmax };
std::string to_string(HardDecision d);
HardDecision hard_decision_from_string(const std::string& s);

/// How raw H is scaled before the encoder: one dataset-wide constant, or
/// each sample to ||H||_F^2 = N_t N_c (the BS then rescales Ĥ by ||H||_F).
enum class Normalization { kDataset, kSample };
std::string to_string(Normalization n);
Normalization normalization_from_string(const std::string& s);
std::string to_string(HardDecision d);

/// K points in the complex plane with unit average power.
class Constellation {
 public:
  /// "qpsk" (default), "psk8" or "qam16".
  static Constellation named(const std::string& name);
  explicit Constellation(std::vector<cplx> points);

  std::size_t size() const { return points_.size(); }
  const std::vector<cplx>& points() const { return points_; }
  /// [K, 2] tensor of (re, im) rows.
  ad::Tensor as_tensor() const;
  bool contains(cplx z) const;

 private:
  std::vector<cplx> points_;
};

struct ModelConfig {
  std::size_t n_t = 32;
  std::size_t n_c = 52;
  std::size_t embed_dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t channel_uses = 104;  // M; 32*52/16 = compression ratio 1/16
  std::string constellation = "qpsk";
  CqiMode cqi_mode = CqiMode::kSubband;
  ModMode mod_mode = ModMode::kJcm;
  double tau_start = 1.0;
  double tau_end = 0.1;
  std::size_t tau_anneal_steps = 5000;
  bool straight_through = false;
  HardDecision hard_decision = HardDecision::kSample;
  Normalization normalization = Normalization::kDataset;
  std::uint64_t init_seed = 1;

  /// L: one token per sampled subcarrier.
  std::size_t tokens() const { return n_c; }
  /// gamma = M / (N_t N_c).
  double compression_ratio() const;
  /// Linear anneal from tau_start to tau_end over tau_anneal_steps.
  double tau_at(std::size_t step) const;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;

  template <class Self, class F>
  static void for_each_field(Self& c, F&& f) {
    f("n_t", c.n_t);
    f("n_c", c.n_c);
    f("embed_dim", c.embed_dim);
    f("depth", c.depth);
    f("heads", c.heads);
    f("mlp_ratio", c.mlp_ratio);
    f("channel_uses", c.channel_uses);
    f("constellation", c.constellation);
    f("cqi_mode", c.cqi_mode);
    f("mod_mode", c.mod_mode);
    f("tau_start", c.tau_start);
    f("tau_end", c.tau_end);
    f("tau_anneal_steps", c.tau_anneal_steps);
    f("straight_through", c.straight_through);
    f("hard_decision", c.hard_decision);
    f("normalization", c.normalization);
    f("init_seed", c.init_seed);
  }
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

/// Named parameter tensors. Names are stable and used in checkpoints.
using ParamMap = std::map<std::string, ad::Tensor>;

/// Allocates and initializes every parameter: affine weights
/// U(+-1/sqrt(fan_in)), biases 0, positional encodings N(0, 0.02^2),
/// layernorm gains 1 and biases 0.
ParamMap init_params(const ModelConfig& cfg, Rng& rng);

/// Parameter shapes expected for `cfg` (same keys as init_params).
std::map<std::string, ad::Shape> param_shapes(const ModelConfig& cfg);

/// Throws ConfigError if `params` does not match `cfg` exactly.
void check_params(const ModelConfig& cfg, const ParamMap& params);

/// Places parameters on a tape as variables (trainable) or constants.
class ParamBinding {
 public:
  ParamBinding(ad::Tape& tape, const ParamMap& params, bool trainable);
  ad::Var operator[](const std::string& name) const;
  const std::map<std::string, ad::Var>& vars() const { return vars_; }
  ad::Tape& tape() const { return *tape_; }

 private:
  ad::Tape* tape_;
  std::map<std::string, ad::Var> vars_;
};

// ---- data plumbing -----------------------------------------------------------

/// Realified token layout of one H: token n holds
/// [Re h_{0,n} .. Re h_{Nt-1,n}, Im h_{0,n} .. Im h_{Nt-1,n}], times `scale`.
std::vector<double> realify(const ChannelMatrix& h, double scale = 1.0);
/// Inverse of realify for one sample's 2 N_t N_c values.
ChannelMatrix assemble(std::span<const double> tokens, std::size_t n_t, std::size_t n_c, double scale = 1.0);

/// Factor applied to `h` before the encoder: `dataset_scale` or, under
/// per-sample normalization, sqrt(N_t N_c) / ||H||_F.
double input_scale(const ChannelMatrix& h, Normalization mode, double dataset_scale);

/// Batch of realified, scaled inputs [B, N_c, 2 N_t] plus the matching CQI
/// reports and the per-sample scale factors.
struct Batch {
  ad::Tensor x;
  std::vector<CqiReport> cqi;
  std::vector<double> scales;
  std::size_t size() const { return x.dim(0); }
};

Batch make_batch(std::span<const ChannelMatrix* const> samples, std::span<const CqiReport> cqi,
                 std::span<const double> scales);

// ---- forward pieces ---------------------------------------------------------

/// X_H: shared affine projection of every token, [B, L, D].
ad::Var tokenize_csi(const ParamBinding& p, const std::string& prefix, ad::Var x);

/// Token-aligned CQI features e_q [B, L, D] from one-hot(16) codes through a
/// shared affine map; wideband broadcasts one code, subband repeats each of
/// the N_b codes over its N_c / N_b contiguous subcarriers, mode none yields
/// zeros.
ad::Var embed_cqi(const ParamBinding& p, const std::string& prefix, const ModelConfig& cfg,
                  const std::vector<CqiReport>& cqi);

/// Encoder token features z_N [B, L, D]: z_0 = X_H + e_q + P through N
/// pre-norm blocks and a closing layernorm.
ad::Var encode_tokens(const ParamBinding& p, const ModelConfig& cfg, const Batch& batch);

/// Encoder output: logits [B, M, K] (jcm) or power-normalized reals
/// [B, M, 2] (analog).
ad::Var encode(const ParamBinding& p, const ModelConfig& cfg, const Batch& batch);

struct SymbolSequence {
  ad::Var symbols;                  // [B, M, 2] (re, im) transmitted values
  std::optional<ad::Tensor> probs;  // [B, M, K] modulator distribution (jcm)
  std::vector<std::size_t> hard;    // chosen point per channel use (hard jcm)
};

enum class ModPass { kSoft, kHard };

struct ModulateOptions {
  ModPass pass = ModPass::kSoft;
  double tau = 1.0;
  bool gumbel_noise = true;
  bool straight_through = false;
  HardDecision decision = HardDecision::kSample;
};

/// Soft: y = softmax((logits + g) / tau), symbol = sum_k y_k c_k.
/// Hard: sampled (Gumbel-max) or argmax point, exactly a member of C.
/// Straight-through: hard values forward, soft gradient backward.
SymbolSequence modulate_jcm(ad::Var logits, const Constellation& cst, const ModulateOptions& opt, Rng& rng);

/// sigma^2 = 10^(-snr_db / 10); +inf gives a noiseless channel.
double noise_variance(double snr_db);

/// s + eps with eps circularly-symmetric complex Gaussian, E|eps|^2 =
/// noise_var (noise_var / 2 per real component).
ad::Var awgn(ad::Var symbols, double noise_var, Rng& rng);

/// Decoder estimate in realified token layout [B, N_c, 2 N_t].
ad::Var decode(const ParamBinding& p, const ModelConfig& cfg, ad::Var received, const std::vector<CqiReport>& cqi);

struct ForwardOptions {
  ModPass pass = ModPass::kSoft;
  double tau = 1.0;
  double snr_db = 0.0;
  bool gumbel_noise = true;
};

struct ForwardResult {
  ad::Var encoded;  // logits or analog reals
  SymbolSequence tx;
  ad::Var received;
  ad::Var output;  // [B, N_c, 2 N_t]
};

/// encode -> modulate -> awgn -> decode. Random draws (Gumbel, then channel
/// noise) come from `rng` in that order.
ForwardResult forward(const ParamBinding& p, const ModelConfig& cfg, const Batch& batch, const ForwardOptions& opt,
                      Rng& rng);

/// (1/B) sum_i ||Ĥ_i - H_i||_F^2 over realified values.
ad::Var mse_loss(ad::Var estimate, ad::Var target);

// ---- checkpoint files ---------------------------------------------------------

/// SMCK: magic, version u32, length-prefixed JSON config, then named f64
/// tensor records.
struct Checkpoint {
  std::string config_json;
  std::map<std::string, ad::Tensor> records;
};

void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

struct CheckpointHeader {
  std::uint32_t version = 0;
  std::string config_json;
  std::size_t records = 0;
};
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

}  // namespace semcsi
