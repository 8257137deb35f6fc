#pragma once

// Experiment configuration: a flat `key = value` text format with dotted
// section keys, field-level validation, and a canonical serialization whose
// hash identifies the configuration in run manifests. Every default equals
// the toy-experiment setting, so an empty config runs scenario ONE
// end-to-end.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sal/erm.hpp"
#include "sal/filter.hpp"
#include "sal/numerics.hpp"
#include "sal/oodtrain.hpp"

namespace sal {

enum class ScenarioChoice { kOne, kTwo, kCsv };

struct ExperimentConfig {
  std::uint64_t seed = 1;
  ScenarioChoice scenario = ScenarioChoice::kOne;
  double pi = 0.1;        // wild contamination fraction
  std::size_t m = 10000;  // wild set size

  // CSV mode: user-supplied datasets instead of generated ones.
  std::string data_id_train;
  std::string data_id_test;
  std::string data_wild;
  std::string data_ood_test;

  ErmConfig erm;  // defaults in ErmConfig are the toy settings

  FilterConfig filter = [] {
    FilterConfig f;
    f.percentile = 0.99;  // toy-experiment setting (library default: 0.95)
    return f;
  }();

  OodHyper ood;

  double eval_tpr_level = 0.95;
  bool eval_posthoc = true;

  // Discrepancy sweep. Runs its own wider, strongly-regularized backbone:
  // the discrepancy scale grows with width, and heavy weight decay keeps
  // far-field predictions at the class prior where the width would otherwise
  // erode it.
  bool theory_enabled = false;
  std::vector<double> theory_pis = {0.05, 0.1, 0.2, 0.5, 0.7, 0.9, 1.0};
  std::size_t theory_m = 1000;  // mixture size per sweep point
  ErmConfig theory_erm = [] {
    ErmConfig e;
    e.hidden_dim = 256;
    e.w1_scale = 0.08;
    e.b1_scale = 0.08;
    e.weight_decay = 5e-3;
    return e;
  }();
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline double parse_config_double(const std::string& key,
                                  const std::string& value) {
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (end != value.c_str() + value.size() || value.empty())
    throw std::invalid_argument("config key '" + key + "': '" + value +
                                "' is not a number");
  return v;
}

inline std::uint64_t parse_config_u64(const std::string& key,
                                      const std::string& value) {
  if (value.empty() || value.find_first_not_of("0123456789") != std::string::npos)
    throw std::invalid_argument("config key '" + key + "': '" + value +
                                "' is not a non-negative integer");
  return std::strtoull(value.c_str(), nullptr, 10);
}

inline std::size_t parse_config_size(const std::string& key,
                                     const std::string& value) {
  return static_cast<std::size_t>(parse_config_u64(key, value));
}

inline bool parse_config_bool(const std::string& key,
                              const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("config key '" + key + "': '" + value +
                              "' is not a boolean (true/false)");
}

inline std::vector<double> parse_config_list(const std::string& key,
                                             const std::string& value) {
  std::vector<double> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty())
      throw std::invalid_argument("config key '" + key +
                                  "': empty list element");
    out.push_back(parse_config_double(key, item));
  }
  if (out.empty())
    throw std::invalid_argument("config key '" + key + "': empty list");
  return out;
}

inline std::string format_config_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void apply_erm_key(ErmConfig& e, const std::string& full_key,
                          const std::string& sub, const std::string& value) {
  if (sub == "hidden_dim") e.hidden_dim = parse_config_size(full_key, value);
  else if (sub == "w1_scale") e.w1_scale = parse_config_double(full_key, value);
  else if (sub == "b1_scale") e.b1_scale = parse_config_double(full_key, value);
  else if (sub == "learning_rate")
    e.learning_rate = parse_config_double(full_key, value);
  else if (sub == "momentum") e.momentum = parse_config_double(full_key, value);
  else if (sub == "weight_decay")
    e.weight_decay = parse_config_double(full_key, value);
  else if (sub == "batch_size") e.batch_size = parse_config_size(full_key, value);
  else if (sub == "epochs") e.epochs = parse_config_size(full_key, value);
  else
    throw std::invalid_argument("unknown config key '" + full_key + "'");
}

}  // namespace detail

inline void apply_config_key(ExperimentConfig& c, const std::string& key,
                             const std::string& value) {
  using namespace detail;
  if (key == "seed") c.seed = parse_config_u64(key, value);
  else if (key == "scenario") {
    if (value == "1") c.scenario = ScenarioChoice::kOne;
    else if (value == "2") c.scenario = ScenarioChoice::kTwo;
    else if (value == "csv") c.scenario = ScenarioChoice::kCsv;
    else
      throw std::invalid_argument("config key 'scenario': '" + value +
                                  "' is not one of 1, 2, csv");
  } else if (key == "pi") c.pi = parse_config_double(key, value);
  else if (key == "m") c.m = parse_config_size(key, value);
  else if (key == "data.id_train") c.data_id_train = value;
  else if (key == "data.id_test") c.data_id_test = value;
  else if (key == "data.wild") c.data_wild = value;
  else if (key == "data.ood_test") c.data_ood_test = value;
  else if (key.rfind("erm.", 0) == 0)
    apply_erm_key(c.erm, key, key.substr(4), value);
  else if (key == "filter.percentile")
    c.filter.percentile = parse_config_double(key, value);
  else if (key == "filter.class_conditional")
    c.filter.class_conditional = parse_config_bool(key, value);
  else if (key == "filter.num_vectors")
    c.filter.num_vectors = parse_config_size(key, value);
  else if (key == "filter.score_kind") {
    if (value == "sal") c.filter.score_kind = ScoreKind::kSalProjection;
    else if (value == "gradnorm") c.filter.score_kind = ScoreKind::kGradNorm;
    else
      throw std::invalid_argument("config key 'filter.score_kind': '" + value +
                                  "' is not one of sal, gradnorm");
  } else if (key == "filter.gradient_scope") {
    if (value == "last_layer")
      c.filter.gradient_scope = GradientScope::kLastLayer;
    else if (value == "full") c.filter.gradient_scope = GradientScope::kFull;
    else
      throw std::invalid_argument("config key 'filter.gradient_scope': '" +
                                  value + "' is not one of last_layer, full");
  } else if (key == "ood.learning_rate")
    c.ood.learning_rate = parse_config_double(key, value);
  else if (key == "ood.epochs") c.ood.epochs = parse_config_size(key, value);
  else if (key == "ood.batch_size")
    c.ood.batch_size = parse_config_size(key, value);
  else if (key == "ood.binary_loss_weight")
    c.ood.binary_loss_weight = parse_config_double(key, value);
  else if (key == "eval.tpr_level")
    c.eval_tpr_level = parse_config_double(key, value);
  else if (key == "eval.posthoc")
    c.eval_posthoc = parse_config_bool(key, value);
  else if (key == "theory.enabled")
    c.theory_enabled = parse_config_bool(key, value);
  else if (key == "theory.pis") c.theory_pis = parse_config_list(key, value);
  else if (key == "theory.m") c.theory_m = parse_config_size(key, value);
  else if (key.rfind("theory.erm.", 0) == 0)
    apply_erm_key(c.theory_erm, key, key.substr(11), value);
  else
    throw std::invalid_argument("unknown config key '" + key + "'");
}

inline ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig c;
  std::map<std::string, bool> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected 'key = value', got '" + line +
                                  "'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": empty key");
    if (seen.count(key))
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": duplicate key '" + key + "'");
    seen[key] = true;
    apply_config_key(c, key, value);
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open config file: " + path);
  return parse_config(f);
}

// Canonical serialization: every field, fixed order, normalized formatting.
// Two configs are behaviorally identical iff these strings are equal.
inline std::string canonical_config(const ExperimentConfig& c) {
  using detail::format_config_double;
  std::ostringstream o;
  o << "seed = " << c.seed << '\n';
  o << "scenario = "
    << (c.scenario == ScenarioChoice::kOne
            ? "1"
            : c.scenario == ScenarioChoice::kTwo ? "2" : "csv")
    << '\n';
  o << "pi = " << format_config_double(c.pi) << '\n';
  o << "m = " << c.m << '\n';
  o << "data.id_train = " << c.data_id_train << '\n';
  o << "data.id_test = " << c.data_id_test << '\n';
  o << "data.wild = " << c.data_wild << '\n';
  o << "data.ood_test = " << c.data_ood_test << '\n';
  auto dump_erm = [&o](const char* prefix, const ErmConfig& e) {
    o << prefix << "hidden_dim = " << e.hidden_dim << '\n';
    o << prefix << "w1_scale = " << format_config_double(e.w1_scale) << '\n';
    o << prefix << "b1_scale = " << format_config_double(e.b1_scale) << '\n';
    o << prefix << "learning_rate = " << format_config_double(e.learning_rate)
      << '\n';
    o << prefix << "momentum = " << format_config_double(e.momentum) << '\n';
    o << prefix << "weight_decay = " << format_config_double(e.weight_decay)
      << '\n';
    o << prefix << "batch_size = " << e.batch_size << '\n';
    o << prefix << "epochs = " << e.epochs << '\n';
  };
  dump_erm("erm.", c.erm);
  o << "filter.percentile = " << format_config_double(c.filter.percentile)
    << '\n';
  o << "filter.class_conditional = "
    << (c.filter.class_conditional ? "true" : "false") << '\n';
  o << "filter.num_vectors = " << c.filter.num_vectors << '\n';
  o << "filter.score_kind = "
    << (c.filter.score_kind == ScoreKind::kGradNorm ? "gradnorm" : "sal")
    << '\n';
  o << "filter.gradient_scope = "
    << (c.filter.gradient_scope == GradientScope::kFull ? "full"
                                                        : "last_layer")
    << '\n';
  o << "ood.learning_rate = " << format_config_double(c.ood.learning_rate)
    << '\n';
  o << "ood.epochs = " << c.ood.epochs << '\n';
  o << "ood.batch_size = " << c.ood.batch_size << '\n';
  o << "ood.binary_loss_weight = "
    << format_config_double(c.ood.binary_loss_weight) << '\n';
  o << "eval.tpr_level = " << format_config_double(c.eval_tpr_level) << '\n';
  o << "eval.posthoc = " << (c.eval_posthoc ? "true" : "false") << '\n';
  o << "theory.enabled = " << (c.theory_enabled ? "true" : "false") << '\n';
  o << "theory.pis = ";
  for (std::size_t i = 0; i < c.theory_pis.size(); ++i) {
    if (i) o << ',';
    o << format_config_double(c.theory_pis[i]);
  }
  o << '\n';
  o << "theory.m = " << c.theory_m << '\n';
  dump_erm("theory.erm.", c.theory_erm);
  return o.str();
}

inline std::string config_hash(const ExperimentConfig& c) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical_config(c))));
  return buf;
}

// Field-level validation; file-existence checks for CSV mode happen at run
// start (the pipeline knows which stages actually read them).
inline void validate_config(const ExperimentConfig& c) {
  if (c.pi < 0.0 || c.pi > 1.0)
    throw std::invalid_argument("config key 'pi': " +
                                detail::format_config_double(c.pi) +
                                " is outside [0,1]");
  if (c.m == 0)
    throw std::invalid_argument("config key 'm': must be positive");
  auto check_erm = [](const char* prefix, const ErmConfig& e) {
    const std::string p(prefix);
    if (e.hidden_dim == 0)
      throw std::invalid_argument("config key '" + p +
                                  "hidden_dim': must be positive");
    if (e.batch_size == 0)
      throw std::invalid_argument("config key '" + p +
                                  "batch_size': must be positive");
    if (!(e.learning_rate > 0.0))
      throw std::invalid_argument("config key '" + p +
                                  "learning_rate': must be positive");
    if (e.momentum < 0.0 || e.momentum >= 1.0)
      throw std::invalid_argument("config key '" + p +
                                  "momentum': must lie in [0,1)");
    if (e.weight_decay < 0.0)
      throw std::invalid_argument("config key '" + p +
                                  "weight_decay': must be non-negative");
    if (!(e.w1_scale > 0.0) || !(e.b1_scale >= 0.0))
      throw std::invalid_argument("config key '" + p +
                                  "w1_scale'/'b1_scale': must be positive");
  };
  check_erm("erm.", c.erm);
  check_erm("theory.erm.", c.theory_erm);
  if (!(c.filter.percentile > 0.0) || c.filter.percentile > 1.0)
    throw std::invalid_argument("config key 'filter.percentile': " +
                                detail::format_config_double(
                                    c.filter.percentile) +
                                " is outside (0,1]");
  if (c.filter.num_vectors < 1)
    throw std::invalid_argument(
        "config key 'filter.num_vectors': must be >= 1");
  if (!(c.ood.learning_rate > 0.0))
    throw std::invalid_argument(
        "config key 'ood.learning_rate': must be positive");
  if (c.ood.batch_size == 0)
    throw std::invalid_argument("config key 'ood.batch_size': must be positive");
  if (!(c.ood.binary_loss_weight > 0.0))
    throw std::invalid_argument(
        "config key 'ood.binary_loss_weight': must be positive");
  if (!(c.eval_tpr_level > 0.0) || c.eval_tpr_level > 1.0)
    throw std::invalid_argument("config key 'eval.tpr_level': " +
                                detail::format_config_double(c.eval_tpr_level) +
                                " is outside (0,1]");
  for (double pi : c.theory_pis)
    if (!(pi > 0.0) || pi > 1.0)
      throw std::invalid_argument("config key 'theory.pis': " +
                                  detail::format_config_double(pi) +
                                  " is outside (0,1]");
  if (c.theory_m == 0)
    throw std::invalid_argument("config key 'theory.m': must be positive");
  if (c.scenario == ScenarioChoice::kCsv) {
    if (c.data_id_train.empty() || c.data_id_test.empty() ||
        c.data_wild.empty() || c.data_ood_test.empty())
      throw std::invalid_argument(
          "config keys 'data.*': scenario csv requires id_train, id_test, "
          "wild, and ood_test paths");
    if (c.theory_enabled)
      throw std::invalid_argument(
          "config key 'theory.enabled': the discrepancy sweep draws fresh "
          "mixtures from generative pools and needs scenario 1 or 2");
  }
}

}  // namespace sal
