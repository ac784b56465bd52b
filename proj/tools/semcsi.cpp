// semcsi: data generation, training, evaluation, information analysis and
// embedding export for the CQI-aware CSI feedback autoencoder.
//
// Every failure prints one line `error[<kind>]: <reason>` to stderr and
// exits nonzero; results go to files, summaries to stdout, progress lines
// (the only place timestamps appear) to stderr.

#include <fmt/chrono.h>
#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "semcsi/config.hpp"
#include "semcsi/error.hpp"
#include "semcsi/info.hpp"
#include "semcsi/metrics.hpp"
#include "semcsi/train.hpp"

namespace fs = std::filesystem;
using namespace semcsi;

namespace {

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config, "experiment config file (default: $" + std::string(kConfigEnvVar) + ")");
    cmd->add_option("--set", overrides, "override one key, e.g. --set train.steps=2000")->type_name("SECTION.KEY=VALUE");
  }
  ExperimentConfig resolve() const {
    return resolve_config(config.empty() ? std::nullopt : std::optional<fs::path>(config), overrides);
  }
};

void log_line(const std::string& msg) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  fmt::print(stderr, "[{:%H:%M:%S}] {}\n", fmt::localtime(now), msg);
}

std::vector<double> parse_snr_list(const std::string& text) {
  ExperimentConfig scratch;
  apply_override(scratch, "eval.snr_list=" + text);
  return scratch.eval.snr_list;
}

// ---- gen-data ------------------------------------------------------------------------

struct GenDataCmd {
  CommonOptions common;
  std::string out;
  std::size_t count = 2000;
  std::optional<std::uint64_t> seed;

  int run() const {
    auto cfg = common.resolve();
    if (seed) cfg.scenario.seed = *seed;
    if (count == 0) fmt::print(stderr, "warning: --count 0 writes an empty dataset\n");
    const auto ds = generate_dataset(cfg.scenario, count);
    write_dataset(ds, out);

    std::array<std::size_t, kCqiLevels> hist{};
    for (const auto& h : ds.samples) ++hist[static_cast<std::size_t>(compute_cqi(h, cfg.cqi, CqiMode::kWideband).indices[0])];
    fmt::print("wrote {}: {} samples, N_t={}, N_c={} (train {}, val {}, test {}), seed {}\n", out, ds.size(), ds.n_t,
               ds.n_c, ds.n_train, ds.n_val, ds.n_test(), cfg.scenario.seed);
    fmt::print("wideband CQI histogram\n");
    for (int i = 0; i < kCqiLevels; ++i) fmt::print("  cqi {:2d}: {}\n", i, hist[static_cast<std::size_t>(i)]);
    return 0;
  }
};

// ---- train ---------------------------------------------------------------------------

std::optional<fs::path> latest_checkpoint(const fs::path& dir) {
  std::optional<fs::path> best;
  std::size_t best_step = 0;
  if (!fs::is_directory(dir)) return best;
  const std::regex pattern(R"(ckpt_(\d+)\.smck)");
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    std::smatch m;
    std::size_t step = 0;
    if (name == "final.smck")
      step = static_cast<std::size_t>(-1);
    else if (std::regex_match(name, m, pattern))
      step = std::stoul(m[1].str());
    else
      continue;
    if (!best || step > best_step) {
      best = e.path();
      best_step = step;
    }
  }
  return best;
}

struct TrainCmd {
  CommonOptions common;
  std::string data;
  std::string out_dir;
  bool resume = false;
  std::optional<std::uint64_t> seed;
  std::size_t log_every = 100;

  int run() const {
    const auto ds = read_dataset(data);
    std::optional<Trainer> trainer;
    if (resume) {
      const auto ck = latest_checkpoint(out_dir);
      if (!ck) throw IoError("no checkpoint to resume from in " + out_dir);
      if (!common.config.empty() || !common.overrides.empty() || seed)
        fmt::print(stderr, "warning: --resume continues with the configuration stored in {}\n", ck->string());
      trainer.emplace(read_checkpoint(*ck), ds);
      log_line(fmt::format("resuming {} at step {}", ck->string(), trainer->state().step));
    } else {
      auto cfg = common.resolve();
      if (seed) cfg.train.seed = *seed;
      trainer.emplace(cfg.model, cfg.train, cfg.cqi, ds);
      fs::create_directories(out_dir);
      std::ofstream(fs::path(out_dir) / "config.ini") << echo_config(cfg);
    }
    const std::size_t total = trainer->train_config().steps;
    run_training(*trainer, out_dir, [&](const StepLog& s) {
      if (log_every > 0 && (s.step % log_every == 0 || s.step == total))
        log_line(fmt::format("step {}/{} loss {:.6g} tau {:.4g} snr_db {:.3g}", s.step, total, s.loss, s.tau, s.snr_db));
    });
    fmt::print("trained {} steps; final checkpoint {}\n", trainer->state().step,
               (fs::path(out_dir) / "final.smck").string());
    return 0;
  }
};

// ---- eval ----------------------------------------------------------------------------

struct EvalCmd {
  CommonOptions common;
  std::vector<std::string> checkpoints;
  std::string data;
  std::string snr_list;
  std::string mode;
  std::optional<std::uint64_t> seed;
  std::string out = "eval.csv";

  int run() const {
    const auto cfg = common.resolve();
    EvalConfig ec = cfg.eval;
    if (!snr_list.empty()) ec.snr_list = parse_snr_list(snr_list);
    if (!mode.empty()) ec.mode = mod_pass_from_string(mode);
    if (seed) ec.seed = *seed;
    const auto ds = read_dataset(data);

    std::vector<EvalRow> rows;
    for (const auto& path : checkpoints) {
      const auto model = load_model(fs::path(path));
      for (auto& r : evaluate(model, ds, ec)) {
        fmt::print("{:<24} snr {:>6} dB  cr {:.4g}  {:<8} {:<8} nmse {:8.3f} dB  sgcs {:.4f}\n",
                   path, r.snr_db, r.cr, to_string(r.cqi_mode),
                   r.mod_mode == ModMode::kAnalog ? "analog" : "jcm_" + to_string(r.pass), r.metrics.nmse_db,
                   r.metrics.sgcs);
        rows.push_back(r);
      }
    }
    write_eval_csv(rows, out);
    fmt::print("wrote {} ({} rows)\n", out, rows.size());
    return 0;
  }
};

// ---- analyze -------------------------------------------------------------------------

struct AnalyzeCmd {
  CommonOptions common;
  std::string data;
  std::string cqi_mode;
  std::optional<std::size_t> k;
  std::string out = "analysis.csv";

  int run() const {
    const auto cfg = common.resolve();
    const auto ds = read_dataset(data);
    KnnOptions opt;
    opt.k = k.value_or(cfg.analysis.k);
    opt.jitter = cfg.analysis.jitter;
    opt.jitter_seed = cfg.analysis.seed;

    std::vector<CqiMode> modes;
    if (cqi_mode == "both")
      modes = {CqiMode::kWideband, CqiMode::kSubband};
    else
      modes = {cqi_mode.empty() ? cfg.analysis.cqi_mode : cqi_mode_from_string(cqi_mode)};
    if (std::find(modes.begin(), modes.end(), CqiMode::kNone) != modes.end())
      throw ConfigError("analysis needs a CQI mode of wideband, subband or both");

    std::vector<double> features;
    for (const auto& h : ds.samples) {
      const auto f = normalized_features(h);
      features.insert(features.end(), f.begin(), f.end());
    }
    const PointSet hx(2 * ds.n_t * ds.n_c, std::move(features));

    std::ofstream os(out, std::ios::trunc);
    if (!os) throw IoError("cannot write " + out);
    os << "quantity,variable,k,N,nats,bits\n";
    for (auto mode : modes) {
      std::vector<double> q;
      std::size_t dim = 0;
      for (const auto& h : ds.samples) {
        const auto r = compute_cqi(h, cfg.cqi, mode);
        dim = r.indices.size();
        for (int v : r.indices) q.push_back(v);
      }
      const PointSet cq(dim, std::move(q));
      const std::string var = "cqi_" + to_string(mode);
      const auto ent = knn_entropy(cq, opt);
      const auto mi = knn_mutual_information(hx, cq, opt);
      for (const auto& [e, name] : {std::pair{ent, var}, std::pair{mi, "H';" + var}}) {
        os << fmt::format("{},{},{},{},{:.9g},{:.9g}\n", to_string(e.quantity), name, e.k, e.n, e.nats, e.bits);
        fmt::print("{:<20} {:<18} k={} N={}  {:.4f} nats  {:.4f} bits{}\n", to_string(e.quantity), name, e.k, e.n,
                   e.nats, e.bits, e.jittered ? "  (jittered)" : "");
      }
    }
    if (!os.flush()) throw IoError("write failed for " + out);
    fmt::print("wrote {}\n", out);
    return 0;
  }
};

// ---- export-embeddings ---------------------------------------------------------------

struct ExportCmd {
  CommonOptions common;
  std::string data;
  std::string out = "embeddings.csv";

  int run() const {
    const auto cfg = common.resolve();
    const auto ds = read_dataset(data);
    std::vector<int> labels;
    for (const auto& h : ds.samples) labels.push_back(compute_cqi(h, cfg.cqi, CqiMode::kWideband).indices[0]);
    export_embeddings(ds.samples, labels, out);
    fmt::print("wrote {}: {} rows x {} features + cqi\n", out, ds.size(), 2 * ds.n_t * ds.n_c);
    return 0;
  }
};

// ---- inspect -------------------------------------------------------------------------

struct InspectCmd {
  std::string path;

  int run() const {
    std::array<char, 4> magic{};
    {
      std::ifstream is(path, std::ios::binary);
      if (!is) throw IoError("cannot read " + path);
      is.read(magic.data(), 4);
    }
    const std::string m(magic.data(), 4);
    if (m == "SMC1") {
      const auto h = read_dataset_header(path);
      fmt::print("format   SMC1 dataset\nversion  {}\ncount    {}\nn_t      {}\nn_c      {}\n", h.version, h.count,
                 h.n_t, h.n_c);
      const auto ds = read_dataset(path);
      if (!ds.metadata.empty())
        fmt::print("split    train {} / val {} / test {}\nmetadata {}\n", ds.n_train, ds.n_val, ds.n_test(),
                   nlohmann::json::parse(ds.metadata).dump(2));
      return 0;
    }
    if (m == "SMCK") {
      const auto h = read_checkpoint_header(path);
      fmt::print("format   SMCK checkpoint\nversion  {}\nrecords  {}\nconfig   {}\n", h.version, h.records,
                 nlohmann::json::parse(h.config_json).dump(2));
      return 0;
    }
    throw FormatError("magic", "unrecognized file type (expected SMC1 or SMCK)");
  }
};

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semcsi: CQI-aware CSI feedback autoencoder toolkit"};
  app.require_subcommand(1);

  GenDataCmd gen;
  auto* c_gen = app.add_subcommand("gen-data", "generate a synthetic clustered-multipath dataset");
  gen.common.attach(c_gen);
  c_gen->add_option("-o,--out", gen.out, "output dataset file (SMC1)")->required();
  c_gen->add_option("-n,--count", gen.count, "number of samples")->capture_default_str();
  c_gen->add_option("--seed", gen.seed, "scenario seed (overrides scenario.seed)");

  TrainCmd train;
  auto* c_train = app.add_subcommand("train", "train an autoencoder end to end");
  train.common.attach(c_train);
  c_train->add_option("-d,--data", train.data, "dataset file")->required();
  c_train->add_option("-o,--out-dir", train.out_dir, "run directory")->required();
  c_train->add_flag("--resume", train.resume, "continue from the latest checkpoint in the run directory");
  c_train->add_option("--seed", train.seed, "training seed (overrides train.seed)");
  c_train->add_option("--log-every", train.log_every, "progress line interval in steps (0: quiet)")
      ->capture_default_str();

  EvalCmd eval;
  auto* c_eval = app.add_subcommand("eval", "evaluate checkpoints on the held-out split");
  eval.common.attach(c_eval);
  c_eval->add_option("-k,--checkpoint", eval.checkpoints, "checkpoint file(s), compared side by side")->required();
  c_eval->add_option("-d,--data", eval.data, "dataset file")->required();
  c_eval->add_option("--snr-list", eval.snr_list, "comma-separated feedback SNRs in dB (default eval.snr_list)");
  c_eval->add_option("--mode", eval.mode, "hard or soft (default eval.mode)");
  c_eval->add_option("--seed", eval.seed, "noise seed (overrides eval.seed)");
  c_eval->add_option("-o,--out", eval.out, "output CSV")->capture_default_str();

  AnalyzeCmd analyze;
  auto* c_an = app.add_subcommand("analyze", "k-NN entropy of CQI and MI between normalized CSI and CQI");
  analyze.common.attach(c_an);
  c_an->add_option("-d,--data", analyze.data, "dataset file")->required();
  c_an->add_option("--cqi-mode", analyze.cqi_mode, "wideband, subband or both (default analysis.cqi_mode)");
  c_an->add_option("--k", analyze.k, "neighbour count (default analysis.k)");
  c_an->add_option("-o,--out", analyze.out, "output CSV")->capture_default_str();

  ExportCmd exp;
  auto* c_exp = app.add_subcommand("export-embeddings", "write normalized CSI features with wideband CQI labels");
  exp.common.attach(c_exp);
  c_exp->add_option("-d,--data", exp.data, "dataset file")->required();
  c_exp->add_option("-o,--out", exp.out, "output CSV")->capture_default_str();

  InspectCmd inspect;
  auto* c_ins = app.add_subcommand("inspect", "print the header of a dataset or checkpoint file");
  c_ins->add_option("file", inspect.path, "SMC1 or SMCK file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fmt::print(stderr, "error[usage]: {}\n", one_line(e.what()));
    return 2;
  }

  try {
    if (c_gen->parsed()) return gen.run();
    if (c_train->parsed()) return train.run();
    if (c_eval->parsed()) return eval.run();
    if (c_an->parsed()) return analyze.run();
    if (c_exp->parsed()) return exp.run();
    if (c_ins->parsed()) return inspect.run();
  } catch (const Error& e) {
    fmt::print(stderr, "error[{}]: {}\n", e.kind(), one_line(e.what()));
    return 1;
  } catch (const fs::filesystem_error& e) {
    fmt::print(stderr, "error[io]: {}\n", one_line(e.what()));
    return 1;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error[internal]: {}\n", one_line(e.what()));
    return 1;
  }
  return 1;
}
