#pragma once

// Experiment configuration: one flat JSON object. Resolution order is
// built-in defaults < named profile < config file < command-line flags; the
// resolved object is embedded in every run's meta.json and can be fed back
// through --config to reproduce the run.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "obsmult/error.hpp"
#include "obsmult/harness.hpp"

namespace obsmult {

using Json = nlohmann::ordered_json;

struct ExperimentConfig {
  std::string command;
  std::string profile = "default";
  std::uint64_t master_seed = 0;
  std::int64_t k = 300;
  std::int64_t n_trials = 100;

  // trainer
  double ridge = 0.0;
  bool include_intercept = true;  ///< unset in the defaults: theory runs default to false
  std::int64_t max_iters = 100;
  double grad_tol = 1e-8;

  // inputs
  std::string data;
  std::string label_column = "label";
  bool standardize = false;
  std::string semisynth;  ///< directory written by the semisynth command
  std::string model;      ///< optional model.json for theory

  // semi-synthetic construction
  double gt_ridge = 1.0;
  bool gt_intercept = true;
  std::string generator = "two_cluster";  ///< two_cluster | isotropic | annulus
  std::int64_t n_points = 200;
  std::int64_t dims = 2;
  double separation = 4.0;
  double jitter = 1.0;
  std::vector<double> theta_true;  ///< isotropic/annulus; empty: alternating +-0.6

  // harness
  std::int64_t cutoff_levels = 21;
  std::vector<double> cutoffs;
  std::int64_t batch = 1;
  double initial_fraction = 0.5;
  std::int64_t max_batches = -1;
  std::string strategy = "all";  ///< estimated_regret | true_regret | uniform | all
  std::string ranking = "all";   ///< estimated_regret | true_regret | oracle_error | all
  std::string experiment = "selective";
  double constant = kEpsilonConstant;

  // separability fallback
  double fallback_ridge = 1e-6;
  double fallback_factor = 10.0;
  std::int64_t fallback_escalations = 5;

  std::string out = "out";

  FitOptions fit_options() const {
    return FitOptions{ridge, static_cast<int>(max_iters), grad_tol, include_intercept};
  }
  FallbackPolicy fallback() const {
    return FallbackPolicy{fallback_ridge, fallback_factor, static_cast<int>(fallback_escalations)};
  }
  CutoffGrid grid() const { return CutoffGrid{static_cast<int>(cutoff_levels), cutoffs}; }
  TrialSettings trial_settings(unsigned threads) const {
    TrialSettings s;
    s.master_seed = master_seed;
    s.K = k;
    s.n_trials = n_trials;
    s.fit = fit_options();
    s.grid = grid();
    s.initial_fraction = initial_fraction;
    s.batch = batch;
    s.max_batches = max_batches;
    s.epsilon_constant = constant;
    s.threads = threads;
    s.fallback = fallback();
    return s;
  }
};

namespace config_detail {

/// Every recognised key with its default. include_intercept is null until the
/// command is known.
inline Json defaults() {
  const ExperimentConfig c;
  return Json{{"command", c.command},
              {"profile", c.profile},
              {"master_seed", c.master_seed},
              {"k", c.k},
              {"n_trials", c.n_trials},
              {"ridge", c.ridge},
              {"include_intercept", nullptr},
              {"max_iters", c.max_iters},
              {"grad_tol", c.grad_tol},
              {"data", c.data},
              {"label_column", c.label_column},
              {"standardize", c.standardize},
              {"semisynth", c.semisynth},
              {"model", c.model},
              {"gt_ridge", c.gt_ridge},
              {"gt_intercept", c.gt_intercept},
              {"generator", c.generator},
              {"n_points", c.n_points},
              {"dims", c.dims},
              {"separation", c.separation},
              {"jitter", c.jitter},
              {"theta_true", c.theta_true},
              {"cutoff_levels", c.cutoff_levels},
              {"cutoffs", c.cutoffs},
              {"batch", c.batch},
              {"initial_fraction", c.initial_fraction},
              {"max_batches", c.max_batches},
              {"strategy", c.strategy},
              {"ranking", c.ranking},
              {"experiment", c.experiment},
              {"constant", c.constant},
              {"fallback_ridge", c.fallback_ridge},
              {"fallback_factor", c.fallback_factor},
              {"fallback_escalations", c.fallback_escalations},
              {"out", c.out}};
}

inline Json profile_patch(const std::string& name) {
  if (name == "default") return Json::object();
  if (name == "paper") return Json{{"k", 300}, {"n_trials", 100}};
  // n = 200 two-cluster data, 20 trials, active learning stops after 25 batches
  if (name == "desk") return Json{{"k", 300}, {"n_trials", 20}, {"n_points", 200}, {"max_batches", 25}};
  throw Error(ErrorKind::InvalidConfig, "unknown profile '" + name + "' (expected default, desk or paper)");
}

template <typename T>
T get(const Json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::InvalidConfig, std::string("config key '") + key + "' has the wrong type: " +
                                              j.at(key).dump());
  }
}

inline void check_one_of(const std::string& key, const std::string& value, std::initializer_list<const char*> options) {
  std::string list;
  for (const char* o : options) {
    if (value == o) return;
    list += list.empty() ? o : std::string(", ") + o;
  }
  throw Error(ErrorKind::InvalidConfig, key + " must be one of " + list + " (got '" + value + "')");
}

}  // namespace config_detail

/// Rejects keys that are not part of the configuration.
inline void check_known_keys(const Json& patch) {
  if (!patch.is_object()) throw Error(ErrorKind::InvalidConfig, "config must be a JSON object");
  const Json known = config_detail::defaults();
  for (const auto& item : patch.items()) {
    if (!known.contains(item.key())) throw Error(ErrorKind::InvalidConfig, "unknown config key '" + item.key() + "'");
  }
}

/// Accepts either a bare config object or a document holding one under
/// "config" (such as a previous run's meta.json).
inline Json config_from_document(const Json& doc) {
  if (doc.is_object() && doc.contains("config") && doc.at("config").is_object()) return doc.at("config");
  return doc;
}

inline ExperimentConfig config_from_json(const Json& j) {
  using config_detail::get;
  check_known_keys(j);
  Json full = config_detail::defaults();
  for (const auto& item : j.items()) full[item.key()] = item.value();

  ExperimentConfig c;
  c.command = get<std::string>(full, "command");
  c.profile = get<std::string>(full, "profile");
  c.master_seed = get<std::uint64_t>(full, "master_seed");
  c.k = get<std::int64_t>(full, "k");
  c.n_trials = get<std::int64_t>(full, "n_trials");
  c.ridge = get<double>(full, "ridge");
  c.include_intercept = full.at("include_intercept").is_null() ? c.command != "theory"
                                                               : get<bool>(full, "include_intercept");
  c.max_iters = get<std::int64_t>(full, "max_iters");
  c.grad_tol = get<double>(full, "grad_tol");
  c.data = get<std::string>(full, "data");
  c.label_column = get<std::string>(full, "label_column");
  c.standardize = get<bool>(full, "standardize");
  c.semisynth = get<std::string>(full, "semisynth");
  c.model = get<std::string>(full, "model");
  c.gt_ridge = get<double>(full, "gt_ridge");
  c.gt_intercept = get<bool>(full, "gt_intercept");
  c.generator = get<std::string>(full, "generator");
  c.n_points = get<std::int64_t>(full, "n_points");
  c.dims = get<std::int64_t>(full, "dims");
  c.separation = get<double>(full, "separation");
  c.jitter = get<double>(full, "jitter");
  c.theta_true = get<std::vector<double>>(full, "theta_true");
  c.cutoff_levels = get<std::int64_t>(full, "cutoff_levels");
  c.cutoffs = get<std::vector<double>>(full, "cutoffs");
  c.batch = get<std::int64_t>(full, "batch");
  c.initial_fraction = get<double>(full, "initial_fraction");
  c.max_batches = get<std::int64_t>(full, "max_batches");
  c.strategy = get<std::string>(full, "strategy");
  c.ranking = get<std::string>(full, "ranking");
  c.experiment = get<std::string>(full, "experiment");
  c.constant = get<double>(full, "constant");
  c.fallback_ridge = get<double>(full, "fallback_ridge");
  c.fallback_factor = get<double>(full, "fallback_factor");
  c.fallback_escalations = get<std::int64_t>(full, "fallback_escalations");
  c.out = get<std::string>(full, "out");

  config_detail::check_one_of("profile", c.profile, {"default", "desk", "paper"});
  config_detail::check_one_of("generator", c.generator, {"two_cluster", "isotropic", "annulus"});
  config_detail::check_one_of("strategy", c.strategy, {"estimated_regret", "true_regret", "uniform", "all"});
  config_detail::check_one_of("ranking", c.ranking, {"estimated_regret", "true_regret", "oracle_error", "all"});
  config_detail::check_one_of("experiment", c.experiment, {"theory_vs_actual", "selective", "active"});
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorKind::InvalidConfig, what);
  };
  require(c.k >= 2, "k must be >= 2");
  require(c.n_trials >= 1, "n_trials must be >= 1");
  require(c.ridge >= 0.0, "ridge must be >= 0");
  require(c.max_iters >= 1, "max_iters must be >= 1");
  require(c.grad_tol > 0.0, "grad_tol must be > 0");
  require(c.gt_ridge >= 0.0, "gt_ridge must be >= 0");
  require(c.n_points >= 2, "n_points must be >= 2");
  require(c.dims >= 1, "dims must be >= 1");
  require(c.separation >= 0.0 && c.jitter >= 0.0, "separation and jitter must be >= 0");
  require(c.cutoff_levels >= 2, "cutoff_levels must be >= 2");
  require(c.batch >= 1, "batch must be >= 1");
  require(c.initial_fraction > 0.0 && c.initial_fraction < 1.0, "initial_fraction must lie in (0, 1)");
  require(c.constant > 0.0, "constant must be > 0");
  require(c.fallback_ridge > 0.0 && c.fallback_factor > 1.0 && c.fallback_escalations >= 0,
          "fallback_ridge must be > 0, fallback_factor > 1, fallback_escalations >= 0");
  require(c.out != "", "out must not be empty");
  return c;
}

/// The fully resolved config with every key explicit.
inline Json config_to_json(const ExperimentConfig& c) {
  return Json{{"command", c.command},
              {"profile", c.profile},
              {"master_seed", c.master_seed},
              {"k", c.k},
              {"n_trials", c.n_trials},
              {"ridge", c.ridge},
              {"include_intercept", c.include_intercept},
              {"max_iters", c.max_iters},
              {"grad_tol", c.grad_tol},
              {"data", c.data},
              {"label_column", c.label_column},
              {"standardize", c.standardize},
              {"semisynth", c.semisynth},
              {"model", c.model},
              {"gt_ridge", c.gt_ridge},
              {"gt_intercept", c.gt_intercept},
              {"generator", c.generator},
              {"n_points", c.n_points},
              {"dims", c.dims},
              {"separation", c.separation},
              {"jitter", c.jitter},
              {"theta_true", c.theta_true},
              {"cutoff_levels", c.cutoff_levels},
              {"cutoffs", c.cutoffs},
              {"batch", c.batch},
              {"initial_fraction", c.initial_fraction},
              {"max_batches", c.max_batches},
              {"strategy", c.strategy},
              {"ranking", c.ranking},
              {"experiment", c.experiment},
              {"constant", c.constant},
              {"fallback_ridge", c.fallback_ridge},
              {"fallback_factor", c.fallback_factor},
              {"fallback_escalations", c.fallback_escalations},
              {"out", c.out}};
}

/// defaults < profile < file < flags. The profile itself is taken from the
/// flags if given there, else from the file.
inline ExperimentConfig resolve_config(const Json& file, const Json& flags) {
  check_known_keys(file);
  check_known_keys(flags);
  std::string profile = "default";
  if (file.contains("profile")) profile = config_detail::get<std::string>(file, "profile");
  if (flags.contains("profile")) profile = config_detail::get<std::string>(flags, "profile");

  Json merged = config_detail::profile_patch(profile);
  for (const auto& layer : {file, flags}) {
    for (const auto& item : layer.items()) merged[item.key()] = item.value();
  }
  merged["profile"] = profile;
  return config_from_json(merged);
}

}  // namespace obsmult
