#include "semcsi/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "fields.hpp"
#include "semcsi/error.hpp"

namespace semcsi {

namespace {

namespace pt = boost::property_tree;

// One configurable key: text in, text out.
struct Entry {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

struct Section {
  std::string name;
  std::vector<Entry> entries;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v = 0.0;
    detail::field_from_text(key, trim(item), v);
    out.push_back(v);
  }
  return out;
}

std::string list_text(std::span<const double> v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + detail::field_to_text(v[i]);
  return out;
}

template <class Cfg>
void add_fields(Section& s, Cfg& c) {
  Cfg::for_each_field(c, [&](const char* key, auto& field) {
    const std::string full = s.name + "." + key;
    s.entries.push_back({key, [full, &field](const std::string& t) { detail::field_from_text(full, t, field); },
                         [&field] { return detail::field_to_text(field); }});
  });
}

template <class T>
Entry scalar(const std::string& section, const std::string& key, T& field) {
  const std::string full = section + "." + key;
  return {key, [full, &field](const std::string& t) { detail::field_from_text(full, t, field); },
          [&field] { return detail::field_to_text(field); }};
}

std::vector<Section> sections(ExperimentConfig& c) {
  std::vector<Section> out;

  Section scenario{"scenario", {}};
  add_fields(scenario, c.scenario);
  out.push_back(std::move(scenario));

  Section cqi{"cqi", {}};
  cqi.entries.push_back(scalar("cqi", "tx_power_dbm", c.cqi.link.tx_power_dbm));
  cqi.entries.push_back(scalar("cqi", "noise_power_dbm", c.cqi.link.noise_power_dbm));
  cqi.entries.push_back({"thresholds_db",
                         [&c](const std::string& t) {
                           c.cqi.table = CqiTable::from_vector(parse_list("cqi.thresholds_db", t));
                         },
                         [&c] { return list_text(c.cqi.table.thresholds_db()); }});
  cqi.entries.push_back(scalar("cqi", "subcarriers_per_subband", c.cqi.subcarriers_per_subband));
  out.push_back(std::move(cqi));

  Section model{"model", {}};
  add_fields(model, c.model);
  out.push_back(std::move(model));

  Section train{"train", {}};
  add_fields(train, c.train);
  out.push_back(std::move(train));

  Section eval{"eval", {}};
  eval.entries.push_back({"snr_list", [&c](const std::string& t) { c.eval.snr_list = parse_list("eval.snr_list", t); },
                          [&c] { return list_text(c.eval.snr_list); }});
  eval.entries.push_back(scalar("eval", "mode", c.eval.mode));
  eval.entries.push_back(scalar("eval", "seed", c.eval.seed));
  eval.entries.push_back(scalar("eval", "batch_size", c.eval.batch_size));
  out.push_back(std::move(eval));

  Section analysis{"analysis", {}};
  analysis.entries.push_back(scalar("analysis", "k", c.analysis.k));
  analysis.entries.push_back(scalar("analysis", "jitter", c.analysis.jitter));
  analysis.entries.push_back(scalar("analysis", "cqi_mode", c.analysis.cqi_mode));
  analysis.entries.push_back(scalar("analysis", "seed", c.analysis.seed));
  out.push_back(std::move(analysis));
  return out;
}

void set_key(std::vector<Section>& secs, const std::string& section, const std::string& key, const std::string& value,
             const std::string& origin) {
  for (auto& s : secs) {
    if (s.name != section) continue;
    for (auto& e : s.entries) {
      if (e.key != key) continue;
      try {
        e.set(value);
      } catch (const Error& err) {
        throw ConfigError(origin + ": " + section + "." + key + ": " + err.what());
      }
      return;
    }
    throw ConfigError(origin + ": unknown key '" + key + "' in section [" + section + "]");
  }
  throw ConfigError(origin + ": unknown section [" + section + "]");
}

}  // namespace

void ExperimentConfig::validate() const {
  scenario.validate();
  model.validate();
  train.validate();
  if (model.n_t != scenario.n_t || model.n_c != scenario.n_c)
    throw ConfigError("model dimensions (n_t=" + std::to_string(model.n_t) + ", n_c=" + std::to_string(model.n_c) +
                      ") must match the scenario (n_t=" + std::to_string(scenario.n_t) +
                      ", n_c=" + std::to_string(scenario.n_c) + ")");
  if (cqi.subcarriers_per_subband == 0 || model.n_c % cqi.subcarriers_per_subband != 0)
    throw ConfigError("cqi.subcarriers_per_subband (" + std::to_string(cqi.subcarriers_per_subband) +
                      ") must divide model.n_c (" + std::to_string(model.n_c) + ")");
  if (eval.snr_list.empty()) throw ConfigError("eval.snr_list must name at least one SNR");
  if (eval.batch_size == 0) throw ConfigError("eval.batch_size must be >= 1");
  if (analysis.k == 0) throw ConfigError("analysis.k must be >= 1");
  if (!(analysis.jitter >= 0.0)) throw ConfigError("analysis.jitter must be non-negative");
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(origin + ": line " + std::to_string(e.line()) + ": " + e.message());
  }
  ExperimentConfig cfg;
  auto secs = sections(cfg);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError(origin + ": key '" + section + "' outside any section");
    if (std::none_of(secs.begin(), secs.end(), [&](const Section& s) { return s.name == section; }))
      throw ConfigError(origin + ": unknown section [" + section + "]");
    for (const auto& [key, value] : body) set_key(secs, section, key, trim(value.data()), origin);
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path.string());
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  auto secs = sections(cfg);
  set_key(secs, trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
          trim(assignment.substr(eq + 1)), "--set");
}

std::string echo_config(const ExperimentConfig& cfg) {
  ExperimentConfig copy = cfg;
  std::string out;
  for (const auto& s : sections(copy)) {
    out += (out.empty() ? "[" : "\n[") + s.name + "]\n";
    for (const auto& e : s.entries) out += e.key + " = " + e.get() + "\n";
  }
  return out;
}

std::optional<std::filesystem::path> default_config_path() {
  const char* env = std::getenv(kConfigEnvVar);
  if (env == nullptr || *env == '\0') return std::nullopt;
  std::filesystem::path p(env);
  if (std::filesystem::is_directory(p)) p /= "semcsi.ini";
  if (!std::filesystem::exists(p))
    throw ConfigError(std::string(kConfigEnvVar) + " points to missing config " + p.string());
  return p;
}

ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& path,
                                const std::vector<std::string>& overrides) {
  const auto source = path ? path : default_config_path();
  ExperimentConfig cfg = source ? load_config(*source) : ExperimentConfig{};
  for (const auto& o : overrides) apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

}  // namespace semcsi
