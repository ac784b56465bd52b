#pragma once

// End-to-end training under the MSE objective, Adam, checkpoint/resume, and
// held-out evaluation sweeps.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "semcsi/channel.hpp"
#include "semcsi/cqi.hpp"
#include "semcsi/metrics.hpp"
#include "semcsi/model.hpp"

namespace semcsi {

enum class SnrPolicy { kUniform, kFixed, kNoiseless };
std::string to_string(SnrPolicy p);
SnrPolicy snr_policy_from_string(const std::string& s);

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t steps = 5000;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  SnrPolicy snr_policy = SnrPolicy::kUniform;
  double snr_db = 0.0;  // fixed policy
  double snr_min_db = -10.0;
  double snr_max_db = 0.0;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 1000;  // 0: only the final checkpoint

  void validate() const;

  template <class Self, class F>
  static void for_each_field(Self& c, F&& f) {
    f("batch_size", c.batch_size);
    f("steps", c.steps);
    f("lr", c.lr);
    f("beta1", c.beta1);
    f("beta2", c.beta2);
    f("adam_eps", c.adam_eps);
    f("snr_policy", c.snr_policy);
    f("snr_db", c.snr_db);
    f("snr_min_db", c.snr_min_db);
    f("snr_max_db", c.snr_max_db);
    f("seed", c.seed);
    f("checkpoint_every", c.checkpoint_every);
  }
};

struct EvalConfig {
  std::vector<double> snr_list{-10.0, -5.0, 0.0};
  ModPass mode = ModPass::kHard;
  std::uint64_t seed = 7;
  std::size_t batch_size = 64;
};

std::string to_string(ModPass p);
ModPass mod_pass_from_string(const std::string& s);

/// Adam by its published update equations, with bias correction.
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}
  /// One update at 1-based step t; m and v are updated in place.
  void update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
              std::size_t t) const;

 private:
  double lr_, b1_, b2_, eps_;
};

/// Everything needed to run a trained model on raw channels.
struct TrainedModel {
  ModelConfig model;
  CqiConfig cqi;
  double input_scale = 1.0;  // dataset-wide factor (Normalization::kDataset)
  ParamMap params;
};

/// sqrt(N_t N_c / mean ||H||_F^2) over the given samples.
double input_scale_for(const Dataset& ds, std::span<const std::size_t> indices);

std::vector<CqiReport> cqi_reports(const Dataset& ds, const CqiConfig& cfg, CqiMode mode);

std::string cqi_config_to_json(const CqiConfig& cfg);
CqiConfig cqi_config_from_json(const std::string& text);

struct TrainState {
  std::size_t step = 0;  // completed steps
  ParamMap params;
  ParamMap adam_m;
  ParamMap adam_v;
  double last_loss = 0.0;
};

struct StepLog {
  std::size_t step;  // 1-based
  double loss;
  double tau;
  double snr_db;
};

/// Owns the training state for one dataset. Every random draw of step t
/// comes from a substream keyed by (seed, t), so a run resumed from a
/// checkpoint continues bit-exactly.
class Trainer {
 public:
  Trainer(ModelConfig model, TrainConfig train, CqiConfig cqi, const Dataset& data);
  /// Restores state from a checkpoint written by to_checkpoint().
  Trainer(const Checkpoint& ck, const Dataset& data);

  StepLog step();
  bool done() const { return state_.step >= train_.steps; }

  const TrainState& state() const { return state_; }
  const ModelConfig& model_config() const { return model_; }
  const TrainConfig& train_config() const { return train_; }
  TrainedModel trained_model() const;
  Checkpoint to_checkpoint() const;

 private:
  void prepare(const Dataset& data);
  std::vector<std::size_t> batch_indices(std::size_t step) const;

  ModelConfig model_;
  TrainConfig train_;
  CqiConfig cqi_;
  double input_scale_ = 1.0;
  TrainState state_;
  const Dataset* data_ = nullptr;
  std::vector<CqiReport> reports_;
  std::vector<std::size_t> train_idx_;
};

/// Loads the model part of a training checkpoint.
TrainedModel load_model(const Checkpoint& ck);
TrainedModel load_model(const std::filesystem::path& path);

struct EvalRow {
  double snr_db = 0.0;
  double cr = 0.0;
  CqiMode cqi_mode = CqiMode::kNone;
  ModMode mod_mode = ModMode::kJcm;
  ModPass pass = ModPass::kHard;
  MetricResult metrics;
};

/// Reconstructions of `indices` at one feedback SNR (raw channel units).
std::vector<ChannelMatrix> reconstruct(const TrainedModel& m, const Dataset& data,
                                       std::span<const std::size_t> indices, double snr_db, ModPass pass,
                                       std::uint64_t seed, std::size_t batch_size = 64);

/// NMSE/SGCS per SNR over the held-out split.
std::vector<EvalRow> evaluate(const TrainedModel& m, const Dataset& data, const EvalConfig& cfg);

/// eval.csv: snr_db, cr, cqi_mode, mod_mode, nmse_db, sgcs.
void write_eval_csv(const std::vector<EvalRow>& rows, const std::filesystem::path& path, bool append = false);

/// Runs (or continues) training, writing metrics.csv, periodic
/// ckpt_<step>.smck files and final.smck into out_dir.
void run_training(Trainer& trainer, const std::filesystem::path& out_dir,
                  const std::function<void(const StepLog&)>& on_step = {});

}  // namespace semcsi
